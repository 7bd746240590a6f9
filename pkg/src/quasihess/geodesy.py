"""e/m-curves, orthogonality, the Pythagorean identity and projections onto submanifolds.

An m-curve is a curve on L whose p-image runs along a straight line; an
e-curve does the same in x.  Curves are traced by pseudo-arclength
continuation on ``Y(u) = base + s·dir`` so they pass through caustics, where
the Lagrange map folds and the line parameter turns back.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .divergence import divergence_arrays
from .expr import Expression, eval_jet3, eval_value, parse, to_source
from .model import (Box, ChartPoint, ContactPoint, GeneratingChart, NoConvergence, frames_arrays,
                    lift_arrays)

MIN_STEP = 1e-12
LINE_TOL = 1e-8
COLINEAR_TOL = 1e-8
STRICT_TOL = 1e-10
GRAD_TOL = 1e-9
COINCIDE_RTOL = 1e-7  # |m| below this (relative) means q and p coincide


class ContinuationStall(ArithmeticError):
    pass


class LeftDomain(ValueError):
    pass


class PointNotOnCurve(ValueError):
    pass


class PointNotOnS(ValueError):
    pass


class NotOnECurve(ValueError):
    pass


class NotOnMCurve(ValueError):
    pass


@dataclass(frozen=True)
class CausticCrossing:
    s: float
    u: np.ndarray
    kind: str  # "fold" (line parameter turns back) or "crossing" (Jacobian changes sign, s keeps going)


@dataclass(frozen=True, eq=False)
class EMCurve:
    kind: str
    chart: GeneratingChart
    base: np.ndarray
    dir: np.ndarray
    s: np.ndarray
    u: np.ndarray
    events: tuple[CausticCrossing, ...] = ()

    @property
    def samples(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.s.tolist(), self.u))

    def image(self, u=None) -> np.ndarray:
        x, p, _ = lift_arrays(self.chart, self.u if u is None else u)
        return x if self.kind == "e" else p

    def line_defect(self) -> float:
        target = self.base + self.s[:, None] * self.dir
        return float(np.abs(self.image() - target).max())

    def contains(self, u, tol: float = LINE_TOL) -> bool:
        """Whether ``u`` lies on the straight line carrying this curve's image."""
        d = self.image(np.asarray(u, dtype=float)) - self.base
        return bool(np.linalg.norm(d - (d @ self.dir) * self.dir) <= tol * (1 + np.linalg.norm(d)))


def _image_and_jac(chart, kind, u):
    j = chart.jet(u)
    x, p, _ = lift_arrays(chart, u, jet=j)
    phi, phip = frames_arrays(chart, u, jet=j)
    return (x, phi) if kind == "e" else (p, phip)


def _null_vector(M: np.ndarray) -> np.ndarray:
    return np.linalg.svd(M)[2][-1]


def trace_curve(kind: str, start: ChartPoint, dir, span: Sequence[float] = (-1.0, 1.0),
                steps: int = 200) -> EMCurve:
    """Continue ``{(u, s): Y(u) = Y(start) + s·dir/|dir|}`` in both directions from ``s = 0``.

    ``Y`` is the x-image for ``kind="e"`` and the p-image for ``kind="m"``.
    Stops when s leaves ``span`` or u leaves the chart domain.
    """
    if kind not in ("e", "m"):
        raise ValueError("kind must be 'e' or 'm'")
    chart = start.chart
    d = np.asarray(dir, dtype=float)
    nd = np.linalg.norm(d)
    if d.shape != (chart.n,) or not nd > 0:
        raise ValueError("direction must be a nonzero vector of length n")
    d = d / nd
    s0, s1 = map(float, span)
    if not s0 <= 0.0 <= s1 or s0 == s1:
        raise ValueError("span must contain 0 (the start point) and have positive length")
    if not chart.domain.contains(start.u):
        raise LeftDomain("start point is outside the chart domain")
    base, _ = _image_and_jac(chart, kind, start.u)
    n = chart.n
    dmax = (s1 - s0) / steps

    def residual(w):
        y, J = _image_and_jac(chart, kind, w[:n])
        return y - base - w[n] * d, np.hstack([J, -d[:, None]]), J

    def tangent(w, prev):
        _, Jw, _ = residual(w)
        t = _null_vector(Jw)
        return t if t @ prev >= 0 else -t

    def correct(pred, t):
        w = pred.copy()
        for it in range(12):
            H, Jw, J = residual(w)
            F = np.append(H, t @ (w - pred))
            dw = np.linalg.solve(np.vstack([Jw, t]), -F)
            w = w + dw
            if np.linalg.norm(dw) <= 1e-13 * (1 + np.linalg.norm(w)):
                H, _, J = residual(w)
                if np.abs(H).max() <= 1e-12 * (1 + np.abs(base).max() + abs(w[n])):
                    return w, it, J
        raise np.linalg.LinAlgError("corrector did not converge")

    w0 = np.append(start.u, 0.0)
    _, Jw0, Jstart = residual(w0)
    t_init = _null_vector(Jw0)
    if abs(t_init[n]) < 1e-14:
        t_init = t_init if t_init[np.argmax(np.abs(t_init))] > 0 else -t_init
    elif t_init[n] < 0:
        t_init = -t_init

    branches = []
    events = []
    for sign in (1.0, -1.0):
        w, t = w0.copy(), sign * t_init
        det_prev = np.linalg.det(Jstart)
        ws = []
        step = dmax
        for _ in range(20 * steps):
            while True:
                if step < MIN_STEP:
                    raise ContinuationStall(f"step fell below {MIN_STEP:g} at u={w[:n].tolist()}, s={w[n]:.6g}")
                try:
                    wn, iters, J = correct(w + step * t, t)
                    tn = tangent(wn, t)
                    if np.linalg.norm(wn - w) <= 2 * step and tn @ t > 0.5:
                        break
                except np.linalg.LinAlgError:
                    pass
                step *= 0.5
            if not (s0 <= wn[n] <= s1) or not chart.domain.contains(wn[:n]):
                break
            det_n = np.linalg.det(J)
            if tn[n] * t[n] < 0:
                a = t[n] / (t[n] - tn[n])
                wm = w + a * (wn - w)
                events.append(CausticCrossing(float(wm[n]), wm[:n], "fold"))
            elif det_n * det_prev < 0:
                a = det_prev / (det_prev - det_n)
                wm = w + a * (wn - w)
                events.append(CausticCrossing(float(wm[n]), wm[:n], "crossing"))
            det_prev = det_n
            ws.append(wn)
            w, t = wn, tn
            if iters <= 3:
                step = min(step * 1.5, dmax)
        branches.append(ws)
    fw, bw = branches
    W = np.array(bw[::-1] + [w0] + fw)
    return EMCurve(kind, chart, base, d, W[:, n], W[:, :n], tuple(events))


def trace_m_curve(chart: GeneratingChart, start: ChartPoint, dir, span=(-1.0, 1.0), steps: int = 200) -> EMCurve:
    if start.chart is not chart:
        start = ChartPoint(chart, start.u)
    return trace_curve("m", start, dir, span, steps)


def trace_e_curve(chart: GeneratingChart, start: ChartPoint, dir, span=(-1.0, 1.0), steps: int = 200) -> EMCurve:
    if start.chart is not chart:
        start = ChartPoint(chart, start.u)
    return trace_curve("e", start, dir, span, steps)


# ---------------------------------------------------------------------------
# submanifolds


@dataclass(frozen=True, eq=False)
class Submanifold:
    """``θ -> u(θ)``: one expression per chart coordinate, in the parameters ``params``."""

    chart: GeneratingChart
    params: tuple[str, ...]
    exprs: tuple[Expression, ...]
    domain: Box

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "exprs", tuple(parse(e) if isinstance(e, str) else e for e in self.exprs))
        if len(self.exprs) != self.chart.n:
            raise ValueError(f"need {self.chart.n} coordinate expressions, got {len(self.exprs)}")
        if self.domain.dim != len(self.params):
            raise ValueError("parameter box dimension does not match the parameters")

    @property
    def dim(self) -> int:
        return len(self.params)

    @classmethod
    def from_json(cls, chart: GeneratingChart, d: dict) -> "Submanifold":
        return cls(chart, tuple(d["params"]), tuple(d["u"]), Box(d["domain"]["min"], d["domain"]["max"]))

    @classmethod
    def load(cls, chart: GeneratingChart, path: str | Path) -> "Submanifold":
        with open(path) as fh:
            return cls.from_json(chart, json.load(fh))

    def to_json(self) -> dict:
        return {"params": list(self.params), "u": [to_source(e) for e in self.exprs],
                "domain": self.domain.to_json()}

    def u(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.stack([np.broadcast_to(eval_value(e, theta, self.params), theta.shape[:-1])
                         for e in self.exprs], axis=-1)

    def du(self, theta) -> np.ndarray:
        """``∂u/∂θ`` with shape ``(..., n, k)``."""
        theta = np.asarray(theta, dtype=float)
        return np.stack([eval_jet3(e, theta, self.params).g for e in self.exprs], axis=-2)

    def tangent_x(self, theta) -> np.ndarray:
        """Columns ``dx(∂/∂θ_i)`` spanning the x-image of ``T_qS``."""
        phi, _ = frames_arrays(self.chart, self.u(theta))
        return phi @ self.du(theta)

    def tangent_p(self, theta) -> np.ndarray:
        _, phip = frames_arrays(self.chart, self.u(theta))
        return phip @ self.du(theta)

    def is_immersive(self, theta, tol: float = 1e-8) -> bool:
        sv = np.linalg.svd(self.du(theta), compute_uv=False)
        return bool(sv.min() > tol * (1 + sv.max()))


def orthogonality_residual(m, frame: np.ndarray, du: np.ndarray) -> float:
    """``max_i |mᵀ Φ u_i| / (|m| ‖Φ‖ |u_i|)`` over the columns ``u_i`` of ``du``.

    ``Φ`` is the frame carrying chart tangents to the side where orthogonality
    is tested (x for m-curves).  Normalising by ``‖Φ‖ |u_i|`` rather than
    ``|Φ u_i|`` keeps the residual bounded where the image tangent vanishes on
    the degeneracy locus; on potential charts (``Φ = I``) it is the cosine.
    A zero ``m`` is orthogonal to everything.
    """
    m = np.asarray(m, dtype=float)
    nm = np.linalg.norm(m)
    nf = np.linalg.norm(frame, 2)
    if nm == 0 or nf == 0:
        return 0.0
    du = np.asarray(du, dtype=float).reshape(len(frame), -1)
    out = 0.0
    for col in du.T:
        nc = np.linalg.norm(col)
        if nc > 0:
            out = max(out, abs(m @ frame @ col) / (nm * nf * nc))
    return float(out)


def orthogonal_m_to_S(curve: EMCurve, S: Submanifold, theta, tol: float = 1e-8) -> tuple[bool, float]:
    """Whether the m-curve meets ``S`` orthogonally at ``q = u(θ)``; decided by the line direction."""
    if curve.kind != "m":
        raise ValueError("need an m-curve")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not S.domain.contains(theta):
        raise PointNotOnS(f"θ={theta.tolist()} is outside the parameter box")
    u = S.u(theta)
    if not curve.contains(u):
        raise PointNotOnCurve(f"u={u.tolist()} is not on the m-curve")
    phi, _ = frames_arrays(S.chart, u)
    du = S.du(theta)
    r = orthogonality_residual(curve.dir, phi, du)
    return r <= tol, r


def strictly_orthogonal(e_curve: EMCurve, m_curve: EMCurve, q: ChartPoint) -> bool:
    if e_curve.kind != "e" or m_curve.kind != "m":
        raise ValueError("need an e-curve and an m-curve")
    if not e_curve.contains(q.u):
        raise PointNotOnCurve("q is not on the e-curve")
    if not m_curve.contains(q.u):
        raise PointNotOnCurve("q is not on the m-curve")
    return _strict(e_curve.dir, m_curve.dir)


def _strict(e, m) -> bool:
    e, m = np.asarray(e, dtype=float), np.asarray(m, dtype=float)
    return bool(abs(e @ m) <= STRICT_TOL * np.linalg.norm(e) * np.linalg.norm(m))


@dataclass(frozen=True)
class PythagorasResult:
    lhs: float
    rhs: float
    residual: float
    residual_identity: float
    strict: bool

    def as_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "residual": self.residual,
                "residual_identity": self.residual_identity, "strict": self.strict}


def _colinear(v, d) -> bool:
    v, d = np.asarray(v, dtype=float), np.asarray(d, dtype=float)
    dh = d / np.linalg.norm(d)
    return bool(np.linalg.norm(v - (v @ dh) * dh) <= COLINEAR_TOL * (1 + np.linalg.norm(v)))


def _D(a: ContactPoint, b: ContactPoint) -> float:
    return float(divergence_arrays(a.x, a.z, b.x, b.p, b.z))


def pythagoras_check(p: ContactPoint, q: ContactPoint, r: ContactPoint, e_dir, m_dir) -> PythagorasResult:
    """``D(p, r)`` against ``D(p, q) + D(q, r)`` for an e-leg p–q and an m-leg q–r."""
    dx = p.x - q.x
    dp = r.p - q.p
    if not _colinear(dx, e_dir):
        raise NotOnECurve("x(p) - x(q) is not parallel to the e-direction")
    if not _colinear(dp, m_dir):
        raise NotOnMCurve("p(r) - p(q) is not parallel to the m-direction")
    lhs = _D(p, r)
    rhs = _D(p, q) + _D(q, r)
    return PythagorasResult(lhs, rhs, lhs - rhs, float(-(dx @ dp)), _strict(e_dir, m_dir))


# ---------------------------------------------------------------------------
# projection


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    theta: np.ndarray
    u: np.ndarray
    q: ContactPoint
    value: float
    grad_norm: float
    classification: str  # min | max | saddle | degenerate
    orthogonality_residual: float
    m: np.ndarray
    seed: np.ndarray

    def as_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "u": self.u.tolist(), "x": self.q.x.tolist(),
                "p": self.q.p.tolist(), "value": self.value, "grad_norm": self.grad_norm,
                "classification": self.classification,
                "orthogonality_residual": self.orthogonality_residual, "m": self.m.tolist()}


class _Objective:
    """``F(θ) = D(q(θ), target)`` (m) or ``D(target, q(θ))`` (e), with finite-difference derivatives."""

    def __init__(self, S: Submanifold, target: ContactPoint, kind: str = "m", step: float = 1e-4):
        self.S, self.t, self.kind, self.h = S, target, kind, step

    def F(self, theta):
        x, p, z = lift_arrays(self.S.chart, self.S.u(theta))
        t = self.t
        if self.kind == "m":
            return divergence_arrays(x, z, t.x, t.p, t.z)
        return divergence_arrays(t.x, t.z, x, p, z)

    def grad(self, theta):
        """Five-point central differences; ``theta`` may carry leading batch dimensions."""
        theta = np.asarray(theta, dtype=float)
        k = self.S.dim
        E = np.eye(k) * self.h
        pts = theta[..., None, None, :] + np.array([-2.0, -1.0, 1.0, 2.0])[:, None, None] * E
        vals = self.F(pts)  # (..., 4, k)
        return (vals[..., 0, :] - 8 * vals[..., 1, :] + 8 * vals[..., 2, :] - vals[..., 3, :]) / (12 * self.h)

    def hess(self, theta):
        theta = np.asarray(theta, dtype=float)
        cols = [(self.grad(theta + self.h * e) - self.grad(theta - self.h * e)) / (2 * self.h)
                for e in np.eye(self.S.dim)]
        H = np.stack(cols, axis=-2)
        return 0.5 * (H + np.swapaxes(H, -1, -2))


def auto_seeds(S: Submanifold, per_dim: int | None = None) -> np.ndarray:
    k = S.dim
    per_dim = per_dim or {1: 64, 2: 12}.get(k, 5)
    w = S.domain.max - S.domain.min
    # cell centres so seeds stay inside the box
    axes = [lo + (np.arange(per_dim) + 0.5) * wi / per_dim for lo, wi in zip(S.domain.min, w)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)


def _solve_steps(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return -np.linalg.solve(H, g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return np.array([-np.linalg.lstsq(Hi, gi, rcond=None)[0] for Hi, gi in zip(H, g)])


def _newton(obj: _Objective, seeds: np.ndarray, maxiter: int = 60, tol: float = GRAD_TOL):
    """Damped Newton on ``∇F = 0`` from every seed at once.

    Each seed runs its own iteration: a backtracking line search on ``|∇F|``
    that keeps iterates inside the parameter box, falling back to the full
    step when no decrease is found.  Returns the final iterates and a mask of
    seeds that converged.
    """
    box = obj.S.domain
    T = np.array(seeds, dtype=float)
    N = len(T)
    active = np.ones(N, bool)
    conv = np.zeros(N, bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        if not len(idx):
            break
        G = obj.grad(T[idx])
        gn = np.linalg.norm(G, axis=-1)
        done = gn <= tol
        conv[idx[done]] = True
        active[idx[done]] = False
        idx, G, gn = idx[~done], G[~done], gn[~done]
        if not len(idx):
            break
        dt = _solve_steps(obj.hess(T[idx]), G)
        lam = np.ones(len(idx))
        accepted = np.zeros(len(idx), bool)
        new = T[idx].copy()
        while True:
            pend = np.nonzero(~accepted & (lam > 1e-6))[0]
            if not len(pend):
                break
            cand = T[idx[pend]] + lam[pend, None] * dt[pend]
            ok = box.contains(cand)
            if ok.any():
                gc = np.linalg.norm(obj.grad(cand[ok]), axis=-1)
                ok[ok] = gc < gn[pend][ok] * (1 - 1e-4 * lam[pend][ok])
            accepted[pend[ok]] = True
            new[pend[ok]] = cand[ok]
            lam[pend[~ok]] *= 0.5
        # no decrease of |∇F|: accept a full step if it stays inside, otherwise give up on that seed
        rest = np.nonzero(~accepted)[0]
        if len(rest):
            full = T[idx[rest]] + dt[rest]
            inside = box.contains(full)
            new[rest[inside]] = full[inside]
            active[idx[rest[~inside]]] = False
        T[idx] = new
        bad = ~np.all(np.isfinite(T), axis=-1)
        active &= ~bad
    idx = np.nonzero(active)[0]
    if len(idx):
        conv[idx] = np.linalg.norm(obj.grad(T[idx]), axis=-1) <= tol
    return T, conv


def project_onto(S: Submanifold, p: ContactPoint, seeds=None, tol: float = GRAD_TOL,
                 dedupe: float = 1e-6, kind: str = "m") -> list[CriticalPoint]:
    """All critical points of ``θ -> D(q(θ), p)`` reachable from ``seeds`` (default: a grid).

    Each is reported with ``m = p(q) - p(p)`` and its orthogonality residual
    against the x-image of ``T_qS``.  With ``kind="e"`` the objective is
    ``D(p, q(θ))``, the direction is ``x(q) - x(p)`` and tangents are taken in p.
    """
    if kind not in ("e", "m"):
        raise ValueError("kind must be 'e' or 'm'")
    seeds = auto_seeds(S) if seeds is None or (isinstance(seeds, str) and seeds == "auto") \
        else np.atleast_2d(np.asarray(seeds, dtype=float)).reshape(-1, S.dim)
    obj = _Objective(S, p, kind)
    outside = ~S.domain.contains(seeds)
    if outside.any():
        raise ValueError(f"seed {seeds[np.argmax(outside)].tolist()} is outside the parameter box")
    T, conv = _newton(obj, seeds, tol=tol)
    found: list[CriticalPoint] = []
    for seed, theta, ok in zip(seeds, T, conv):
        if not ok:
            continue
        g = obj.grad(theta)
        if any(np.linalg.norm(theta - c.theta) <= dedupe * (1 + np.linalg.norm(theta)) for c in found):
            continue
        u = S.u(theta)
        x, pp, z = lift_arrays(S.chart, u)
        q = ContactPoint(x, pp, z)
        ev = np.linalg.eigvalsh(obj.hess(theta))
        etol = 1e-6 * (1 + np.abs(ev).max())
        if np.any(np.abs(ev) <= etol):
            cls = "degenerate"
        elif np.all(ev > 0):
            cls = "min"
        elif np.all(ev < 0):
            cls = "max"
        else:
            cls = "saddle"
        phi, phip = frames_arrays(S.chart, u)
        du = S.du(theta)
        if kind == "m":
            m, ref, frame = q.p - p.p, p.p, phi
        else:
            m, ref, frame = q.x - p.x, p.x, phip
        if np.linalg.norm(m) <= COINCIDE_RTOL * (1 + np.linalg.norm(ref)):
            resid = 0.0
        else:
            resid = orthogonality_residual(m, frame, du)
        found.append(CriticalPoint(theta, u, q, float(obj.F(theta)), float(np.linalg.norm(g)), cls,
                                   resid, m, seed))
    if not found and len(seeds):
        raise NoConvergence(f"no seed converged ({len(seeds)} tried)")
    found.sort(key=lambda c: tuple(c.theta))
    return found


def scan_critical_points(S: Submanifold, p: ContactPoint, step: float = 1e-3, kind: str = "m") -> np.ndarray:
    """Sign changes of ``dF/dθ`` on a dense grid (1-parameter S only); an oracle for the solver.

    Uses the closed-form derivative ``(p(q) - p(p))ᵀ dx`` (or ``(x(q) - x(p))ᵀ dp``).
    """
    if S.dim != 1:
        raise ValueError("scan oracle is for curves")
    th = np.arange(S.domain.min[0], S.domain.max[0] + step / 2, step)[:, None]
    u = S.u(th)
    j = S.chart.jet(u)
    x, pp, _ = lift_arrays(S.chart, u, jet=j)
    phi, phip = frames_arrays(S.chart, u, jet=j)
    if kind == "m":
        dF = np.einsum("...i,...i->...", pp - p.p, (phi @ S.du(th))[..., 0])
    else:
        dF = np.einsum("...i,...i->...", x - p.x, (phip @ S.du(th))[..., 0])
    s = np.sign(dF)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    roots = th[idx, 0] - dF[idx] * step / (dF[idx + 1] - dF[idx])
    exact = th[s == 0, 0]
    return np.sort(np.concatenate([roots, exact]))
