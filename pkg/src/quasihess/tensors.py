"""Frames, the quasi-Hessian metric, the cubic tensor and the Frobenius product.

All tensors use chart coordinates ``u = (x_I, p_J)``; indices are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChartPoint, GeneratingChart, frames_arrays

FD_STEP = 1e-3
RANK_RTOL = 1e-8
FROBENIUS_TOL = 1e-9
DUALITY_TOL = 1e-12


class SingularMetric(ArithmeticError):
    """The metric is degenerate here (the point lies on Σ)."""


@dataclass(frozen=True, eq=False)
class FrameMatrices:
    Phi: np.ndarray
    PhiPrime: np.ndarray
    at: ChartPoint


@dataclass(frozen=True, eq=False)
class MetricTensor:
    h: np.ndarray
    at: ChartPoint


@dataclass(frozen=True, eq=False)
class CubicTensor:
    C: np.ndarray
    at: ChartPoint


def block_signs(chart: GeneratingChart) -> np.ndarray:
    """``ε[l, m]``: +1 on the x_I block, -1 on the p_J block, 0 across blocks."""
    s = np.where(chart.partition.in_I, 1.0, -1.0)
    return np.where(s[:, None] == s[None, :], s[:, None], 0.0)


def frames(cp: ChartPoint) -> FrameMatrices:
    phi, phip = frames_arrays(cp.chart, cp.u)
    return FrameMatrices(phi, phip, cp)


def metric_arrays(chart: GeneratingChart, u, strict: bool = True, jet=None) -> np.ndarray:
    """``h = g_II ⊕ (-g_JJ)``, batch-capable."""
    j = chart.jet(u, strict) if jet is None else jet
    return j.H * block_signs(chart)


def metric(cp: ChartPoint) -> MetricTensor:
    return MetricTensor(metric_arrays(cp.chart, cp.u), cp)


def metric_from_pairing(fr: FrameMatrices) -> np.ndarray:
    """``h(Y, Z) = τ(ι_*Y, ι_*Z) = ½(Φ(Y)ᵀΦ'(Z) + Φ(Z)ᵀΦ'(Y))``."""
    P, Q = fr.Phi, fr.PhiPrime
    M = np.swapaxes(P, -1, -2) @ Q
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _default_tol(M: np.ndarray) -> float:
    return RANK_RTOL * (1 + np.linalg.norm(M, 2))


def degeneracy_test(cp: ChartPoint, tol: float | None = None) -> str:
    fr = frames(cp)
    te = _default_tol(fr.Phi) if tol is None else tol
    tm = _default_tol(fr.PhiPrime) if tol is None else tol
    e = np.linalg.svd(fr.Phi, compute_uv=False).min() < te
    m = np.linalg.svd(fr.PhiPrime, compute_uv=False).min() < tm
    return {(False, False): "regular", (True, False): "e_critical",
            (False, True): "m_critical", (True, True): "both"}[(bool(e), bool(m))]


def _nullity(M: np.ndarray, tol: float | None) -> int:
    t = _default_tol(M) if tol is None else tol
    return int(np.sum(np.linalg.svd(M, compute_uv=False) < t))


def null_dimensions(cp: ChartPoint, tol: float | None = None) -> tuple[int, int, int]:
    """``(dim ker Φ, dim ker Φ', dim null h)``."""
    fr = frames(cp)
    return _nullity(fr.Phi, tol), _nullity(fr.PhiPrime, tol), _nullity(metric(cp).h, tol)


def cubic(cp: ChartPoint) -> CubicTensor:
    return CubicTensor(cp.chart.jet(cp.u).T.copy(), cp)


def _frame_derivatives(chart: GeneratingChart, u: np.ndarray, step: float):
    """``∂_k Φ`` and ``∂_k Φ'`` by the five-point central stencil, shape ``(n_k, n, n)``."""
    n = chart.n
    h = step * (1 + np.abs(u))
    offs = np.array([-2, -1, 1, 2], dtype=float)
    w = np.array([1, -8, 8, -1]) / 12.0
    U = u[None, None, :] + offs[None, :, None] * (h[:, None, None] * np.eye(n)[:, None, :])
    phi, phip = frames_arrays(chart, U)
    dphi = np.einsum("o,koab->kab", w, phi) / h[:, None, None]
    dphip = np.einsum("o,koab->kab", w, phip) / h[:, None, None]
    return dphi, dphip


def cubic_four_term(cp: ChartPoint, step: float = FD_STEP) -> np.ndarray:
    """Cubic tensor from frames and their flat-connection derivatives.

    ``C_klm = ½[Φ_l·∂_kΦ'_m + Φ_m·∂_kΦ'_l - ∂_kΦ_l·Φ'_m - ∂_kΦ_m·Φ'_l]``
    """
    fr = frames(cp)
    dphi, dphip = _frame_derivatives(cp.chart, cp.u, step)
    a = np.einsum("il,kim->klm", fr.Phi, dphip)
    b = np.einsum("kil,im->klm", dphi, fr.PhiPrime)
    return 0.5 * (a + np.swapaxes(a, 1, 2) - b - np.swapaxes(b, 1, 2))


def metric_derivative(cp: ChartPoint) -> np.ndarray:
    """``dh[k, l, m] = ∂_k h_lm``."""
    return cp.chart.jet(cp.u).T * block_signs(cp.chart)[None]


def alpha_tensor(cp: ChartPoint, X: int, Y: int, Z: int, alpha: float) -> float:
    """``N^(α)(X, Y, Z) = ½ X h(Y, Z) - (α/2) C(X, Y, Z)``; not symmetrised."""
    dh = metric_derivative(cp)[X, Y, Z]
    C = cp.chart.jet(cp.u).T[X, Y, Z]
    Np = 0.5 * dh - 0.5 * alpha * C
    Nm = 0.5 * dh + 0.5 * alpha * C
    if abs(Np + Nm - dh) > DUALITY_TOL * (1 + abs(dh)):
        raise AssertionError("N^(α) + N^(-α) differs from X h(Y, Z)")
    return float(Np)


def structure_constants(cp: ChartPoint) -> np.ndarray:
    """``M[i, j, l] = Σ_k C_ijk h^{kl}``; raises :class:`SingularMetric` on Σ."""
    cls = degeneracy_test(cp)
    if cls != "regular":
        raise SingularMetric(f"metric is degenerate at {cp.u.tolist()} ({cls})")
    h = metric(cp).h
    C = cp.chart.jet(cp.u).T
    return np.linalg.solve(h, C.reshape(-1, cp.chart.n).T).T.reshape(C.shape)


def frobenius_product(cp: ChartPoint, i: int, j: int) -> np.ndarray:
    """Coefficients of ``∂_i ∘ ∂_j`` in the coordinate frame."""
    M = structure_constants(cp)
    h = metric(cp).h
    prod = M[i, j]
    for k in range(cp.chart.n):
        lhs = prod @ h[:, k]
        rhs = h[i] @ M[j, k]
        if abs(lhs - rhs) > FROBENIUS_TOL * (1 + abs(lhs)):
            raise AssertionError(f"product is not metric-compatible at (i, j, k) = {(i, j, k)}")
    return prod


def frobenius_compatibility_residual(cp: ChartPoint) -> float:
    """``max |h(∂i∘∂j, ∂k) - h(∂i, ∂j∘∂k)|``."""
    M = structure_constants(cp)
    h = metric(cp).h
    lhs = np.einsum("ijl,lk->ijk", M, h)
    rhs = np.einsum("il,jkl->ijk", h, M)
    return float(np.abs(lhs - rhs).max())


def wdvv_residual(cp: ChartPoint) -> float:
    """Associativity defect ``max |(∂i∘∂j)∘∂k - ∂i∘(∂j∘∂k)|`` over all coefficients."""
    M = structure_constants(cp)
    left = np.einsum("ijl,lkm->ijkm", M, M)
    right = np.einsum("jkl,ilm->ijkm", M, M)
    return float(np.abs(left - right).max())


def pullback2(h: np.ndarray, J: np.ndarray) -> np.ndarray:
    """``(Jᵀ h J)``: a (0,2)-tensor in the target chart pulled back along ``J = ∂u_dst/∂u_src``."""
    return J.T @ h @ J


def pullback3(C: np.ndarray, J: np.ndarray) -> np.ndarray:
    return np.einsum("abc,ai,bj,ck->ijk", C, J, J, J)
