"""The canonical divergence and its diagonal derivatives."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .equivalence import (AffineLegendreMap, Atlas, NoTransition, OutsideOverlap, ReexpressionFailure,
                          apply, transition_point)
from .expr import Expression, eval_value
from .model import (ChartPoint, ContactPoint, GeneratingChart, OutsideDomain, SingularHessian, lift,
                    lift_arrays, legendre_transform_regular)

FD_STEP = 1e-3
_W5 = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0
_O5 = np.array([-2.0, -1.0, 1.0, 2.0])


class ChartMismatch(ValueError):
    pass


def divergence_arrays(xp, zp, xq, pq, zq):
    """``D = z(p) + z'(q) - x(p)ᵀp(q)``, written as ``z(p) - z(q) + p(q)ᵀ(x(q) - x(p))``.

    The second form is algebraically identical and vanishes bit for bit when p = q.
    """
    return zp - zq + np.einsum("...i,...i->...", pq, xq - xp)


@dataclass(frozen=True, eq=False)
class DivergenceValue:
    value: float
    p_point: ContactPoint
    q_point: ContactPoint


def divergence(p: ContactPoint, q: ContactPoint) -> DivergenceValue:
    v = divergence_arrays(p.x, p.z, q.x, q.p, q.z)
    return DivergenceValue(float(v) if np.ndim(v) == 0 else v, p, q)


def divergence_invariance_check(F: AffineLegendreMap, p: ContactPoint, q: ContactPoint) -> float:
    return float(abs(divergence(p, q).value - divergence(apply(F, p), apply(F, q)).value))


def atlas_divergence(atlas: Atlas, p: ChartPoint, q: ChartPoint) -> DivergenceValue:
    """Divergence of two chart points, moving ``q`` into ``p``'s chart (or vice versa) if needed."""
    if p.chart.name == q.chart.name:
        return divergence(lift(p), lift(q))
    for a, b, swap in ((q, p.chart.name, False), (p, q.chart.name, True)):
        try:
            moved = transition_point(atlas, a, b)
        except (NoTransition, OutsideOverlap, ReexpressionFailure, OutsideDomain):
            continue
        return divergence(lift(moved), lift(q)) if swap else divergence(lift(p), lift(moved))
    raise ChartMismatch(f"no transition brings charts {p.chart.name!r} and {q.chart.name!r} together here")


def _slot_derivatives(chart: GeneratingChart, r, n_p: int, n_q: int, step: float) -> np.ndarray:
    """All mixed derivatives ``∂^{n_p}_p ∂^{n_q}_q D(p, q)`` at ``p = q = r``.

    Each direction uses the five-point first-derivative stencil; mixed
    derivatives take the tensor product.  Returns an array of shape
    ``(n,) * (n_p + n_q)`` with p-slot indices first.
    """
    r = np.asarray(r, dtype=float)
    n = chart.n
    order = n_p + n_q
    if order == 0:
        x, p, z = lift_arrays(chart, r)
        return np.asarray(divergence_arrays(x, z, x, p, z))
    idx = np.array(list(itertools.product(range(n), repeat=order)))          # (E, order)
    offs = np.array(list(itertools.product(range(4), repeat=order)))         # (S, order)
    w = np.prod(_W5[offs], axis=1) / step ** order                           # (S,)
    shift = np.zeros((len(idx), len(offs), order, n))
    eye = np.eye(n)
    for a in range(order):
        shift[:, :, a, :] = _O5[offs[:, a]][None, :, None] * eye[idx[:, a]][:, None, :]
    Up = r + step * shift[:, :, :n_p, :].sum(axis=2)
    Uq = r + step * shift[:, :, n_p:, :].sum(axis=2)
    xp, _, zp = lift_arrays(chart, Up)
    xq, pq, zq = lift_arrays(chart, Uq)
    D = divergence_arrays(xp, zp, xq, pq, zq)
    return (D @ w).reshape((n,) * order)


@dataclass(frozen=True, eq=False)
class ContrastTensors:
    """Diagonal derivatives of D; ``D_m_kl[k, l, m] = D[∂m|∂k∂l]`` lines up with ``D_kl_m[k, l, m]``."""

    D_minus_minus: float
    D_k_minus: np.ndarray
    D_minus_k: np.ndarray
    D_kl_minus: np.ndarray
    D_k_l: np.ndarray
    D_kl_m: np.ndarray
    D_m_kl: np.ndarray

    @property
    def metric_from_mixed(self) -> np.ndarray:
        """``-D[∂k|∂l]``."""
        return -self.D_k_l

    @property
    def cubic_from_contrast(self) -> np.ndarray:
        """``D[∂k∂l|∂m] - D[∂m|∂k∂l]``, the combination that reproduces C."""
        return self.D_kl_m - self.D_m_kl


def contrast_tensors(chart: GeneratingChart, r, step: float = FD_STEP) -> ContrastTensors:
    r = np.asarray(r, dtype=float)
    d3q = _slot_derivatives(chart, r, 1, 2, step)  # [m, k, l] = ∂p_m ∂q_k ∂q_l
    return ContrastTensors(
        D_minus_minus=float(_slot_derivatives(chart, r, 0, 0, step)),
        D_k_minus=_slot_derivatives(chart, r, 1, 0, step),
        D_minus_k=_slot_derivatives(chart, r, 0, 1, step),
        D_kl_minus=_slot_derivatives(chart, r, 2, 0, step),
        D_k_l=_slot_derivatives(chart, r, 1, 1, step),
        D_kl_m=_slot_derivatives(chart, r, 2, 1, step),
        D_m_kl=np.transpose(d3q, (1, 2, 0)),
    )


@dataclass(frozen=True)
class ContrastDerivatives:
    D_k_minus: float
    D_minus_k: float
    D_kl_minus: float
    D_k_l: float
    D_kl_m: float
    D_m_kl: float


def contrast_derivatives(chart: GeneratingChart, r: ChartPoint, k: int, l: int, m: int,
                         step: float = FD_STEP) -> ContrastDerivatives:
    """Single entries ``D[∂k|-], D[-|∂k], D[∂k∂l|-], D[∂k|∂l], D[∂k∂l|∂m], D[∂m|∂k∂l]`` (0-based indices)."""
    t = contrast_tensors(chart, r.u, step)
    return ContrastDerivatives(float(t.D_k_minus[k]), float(t.D_minus_k[k]), float(t.D_kl_minus[k, l]),
                               float(t.D_k_l[k, l]), float(t.D_kl_m[k, l, m]), float(t.D_m_kl[k, l, m]))


def bregman_specialization(chart: GeneratingChart, p: ChartPoint, q: ChartPoint,
                           dual: Expression | None = None) -> float:
    """``f(x_p) + φ(p_q) - x_pᵀp_q`` for a convex potential chart.

    ``φ`` is the dual potential: evaluated from ``dual`` (in variables ``p1..pn``)
    when given, otherwise as ``pᵀx - f`` at the point with gradient ``p_q``.
    """
    if not chart.is_potential:
        raise ValueError("Bregman form needs a potential chart")
    for pt in (p, q):
        H = chart.jet(pt.u).H
        if np.linalg.eigvalsh(H).min() <= 0:
            raise SingularHessian(f"Hessian is not positive definite at {pt.u.tolist()}")
    fx = float(chart.jet(p.u).v)
    grad_q, phi_q = legendre_transform_regular(chart, q.u)
    if dual is not None:
        phi_q = float(eval_value(dual, grad_q, [f"p{i}" for i in range(1, chart.n + 1)]))
    return fx + phi_q - float(p.u @ grad_q)
