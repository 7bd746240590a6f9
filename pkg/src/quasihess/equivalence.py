"""Affine Legendre equivalences and atlases of glued local models."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .expr import Add, DomainError, Expression, Mul, Num, Sub, Var, substitute
from .model import (Box, ChartPoint, ContactPoint, GeneratingChart, OutsideDomain, Partition,
                    chart_from_json, frames_arrays, lift, lift_arrays)

DUAL_ROUTE_TOL = 1e-10
RELIFT_TOL = 1e-9
COCYCLE_TOL = 1e-9
COCYCLE_POINTS = 20


class NoTransition(LookupError):
    pass


class OutsideOverlap(ValueError):
    pass


class ReexpressionFailure(ArithmeticError):
    pass


class DualRouteMismatch(AssertionError):
    pass


@dataclass(frozen=True, eq=False)
class AffineLegendreMap:
    """``(x, p, z) -> (Ax + b, A'p + b', z + cᵀx + d)`` with ``A' = A^{-T}``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float = 0.0
    Aprime: np.ndarray = field(init=False, repr=False)
    bprime: np.ndarray = field(init=False, repr=False)
    cprime: np.ndarray = field(init=False, repr=False)
    dprime: float = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        b = np.asarray(self.b, dtype=float).reshape(n)
        c = np.asarray(self.c, dtype=float).reshape(n)
        if not np.isfinite(np.linalg.cond(A)) or np.linalg.cond(A) > 1e12:
            raise ValueError("A is not invertible")
        Ainv = np.linalg.inv(A)
        Ap = Ainv.T
        bp = Ap @ c
        cp = Ainv @ b
        d = float(self.d)
        for k, v in dict(A=A, b=b, c=c, d=d, Aprime=Ap, bprime=bp, cprime=cp, dprime=float(bp @ b - d)).items():
            object.__setattr__(self, k, v)
        if not np.allclose(Ap.T @ A, np.eye(n), rtol=0, atol=1e-10 * max(1.0, np.abs(A).max() * np.abs(Ap).max())):
            raise ValueError("A'ᵀA deviates from the identity")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def identity(cls, n: int) -> "AffineLegendreMap":
        return cls(np.eye(n), np.zeros(n), np.zeros(n), 0.0)

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, scale: float = 1.0) -> "AffineLegendreMap":
        # keep A well conditioned: identity plus a modest perturbation
        A = np.eye(n) + 0.4 * rng.standard_normal((n, n))
        while np.linalg.cond(A) > 20:
            A = np.eye(n) + 0.4 * rng.standard_normal((n, n))
        return cls(A, scale * rng.standard_normal(n), scale * rng.standard_normal(n), float(scale * rng.standard_normal()))

    def compose(self, first: "AffineLegendreMap") -> "AffineLegendreMap":
        """``self ∘ first``."""
        A1, b1, c1, d1 = first.A, first.b, first.c, first.d
        A2, b2, c2, d2 = self.A, self.b, self.c, self.d
        return AffineLegendreMap(A2 @ A1, A2 @ b1 + b2, c1 + A1.T @ c2, d1 + d2 + float(c2 @ b1))

    def inverse(self) -> "AffineLegendreMap":
        Ainv = np.linalg.inv(self.A)
        return AffineLegendreMap(Ainv, -Ainv @ self.b, -self.bprime, -self.d + float(self.c @ self.cprime))

    def apply_dual(self, p, zprime):
        """``F*(p, z') = (A'p + b', z' + c'ᵀp + d')``."""
        p = np.asarray(p, dtype=float)
        return p @ self.Aprime.T + self.bprime, zprime + p @ self.cprime + self.dprime

    def pushforward(self, v) -> np.ndarray:
        """Differential on tangent vectors ``(dx, dp, dz)``."""
        v = np.asarray(v, dtype=float)
        n = self.n
        dx, dp, dz = v[..., :n], v[..., n:2 * n], v[..., 2 * n]
        return np.concatenate([dx @ self.A.T, dp @ self.Aprime.T, (dz + dx @ self.c)[..., None]], axis=-1)

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "c": self.c.tolist(), "d": self.d}

    @classmethod
    def from_json(cls, d: dict) -> "AffineLegendreMap":
        return cls(d["A"], d["b"], d["c"], d.get("d", 0.0))


def apply(F: AffineLegendreMap, pt: ContactPoint, check: bool = True) -> ContactPoint:
    x = pt.x @ F.A.T + F.b
    p = pt.p @ F.Aprime.T + F.bprime
    z = pt.z + pt.x @ F.c + F.d
    out = ContactPoint(x, p, z)
    if check:
        _, zp = F.apply_dual(pt.p, pt.zprime)
        scale = 1 + np.abs(zp) + np.abs(pt.x).sum(-1) * np.abs(pt.p).sum(-1)
        err = np.max(np.abs(out.zprime - zp) / scale)
        if err > DUAL_ROUTE_TOL:
            raise DualRouteMismatch(f"z' routes disagree by {err:.3g}")
    return out


def theta(pt: ContactPoint, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = pt.n
    return v[..., 2 * n] - np.einsum("...i,...i->...", pt.p, v[..., :n])


def pullback_contact_form_check(F: AffineLegendreMap, pt: ContactPoint, v, h: float = 1e-3) -> float:
    """``|θ(dL v) - θ(v)|`` with the pushforward taken by central differences."""
    v = np.asarray(v, dtype=float)
    n = pt.n

    def at(t):
        q = apply(F, ContactPoint(pt.x + t * v[:n], pt.p + t * v[n:2 * n], pt.z + t * v[2 * n]), check=False)
        return np.concatenate([q.x, q.p, [q.z]])

    # L_F is affine, so the central difference is exact up to rounding
    w = (at(h) - at(-h)) / (2 * h)
    return float(abs(theta(apply(F, pt, check=False), w) - theta(pt, v)))


def tau(u, up, v, vp) -> np.ndarray:
    """``τ(u ⊕ u', v ⊕ v') = ½(uᵀv' + vᵀu')``."""
    return 0.5 * (np.einsum("...i,...i->...", u, vp) + np.einsum("...i,...i->...", v, up))


def omega(u, up, v, vp) -> np.ndarray:
    """``ω(u ⊕ u', v ⊕ v') = ½(uᵀv' - vᵀu')``."""
    return 0.5 * (np.einsum("...i,...i->...", u, vp) - np.einsum("...i,...i->...", v, up))


# ---------------------------------------------------------------------------
# charts under equivalences


def _affine_expr(M: np.ndarray, m: np.ndarray, names: list[str]) -> list[Expression]:
    out = []
    for row, off in zip(M, m):
        e = None
        for a, name in zip(row, names):
            if a == 0:
                continue
            t = Var(name) if a == 1 else Mul(Num(float(a)), Var(name))
            e = t if e is None else Add(e, t)
        if off != 0 or e is None:
            e = Num(float(off)) if e is None else Add(e, Num(float(off)))
        out.append(e)
    return out


def chart_coordinate_map(chart: GeneratingChart, F: AffineLegendreMap):
    """Affine map ``u -> u'`` induced on chart coordinates, when it exists.

    It exists iff ``A_IJ = 0`` (x'_I does not depend on x_J); then ``A'_JI = 0`` as well.
    """
    part = chart.partition
    I0, J0 = part.I0, part.J0
    if np.abs(F.A[np.ix_(I0, J0)]).max(initial=0.0) > 0:
        raise ValueError("A mixes x_J into x_I; the chart coordinates do not transform affinely")
    k = len(I0)
    n = chart.n
    M = np.zeros((n, n))
    m = np.zeros(n)
    M[:k, :k] = F.A[np.ix_(I0, I0)]
    M[k:, k:] = F.Aprime[np.ix_(J0, J0)]
    m[:k] = F.b[I0]
    m[k:] = F.bprime[J0]
    return M, m


def transform_chart(chart: GeneratingChart, F: AffineLegendreMap, name: str | None = None,
                    domain: Box | None = None) -> GeneratingChart:
    """Generating function of ``L_F(L)`` in the same partition.

    With ``A_IJ = 0``::

        g' = g + c_I·x_I + d - p_J·A_JJ⁻¹(A_JI x_I + b_J) - b'_J·(A_JI x_I + b_J)

    where ``x_I = A_II⁻¹(x'_I - b_I)`` and ``p_J = A_JJᵀ(p'_J - b'_J)``.
    """
    part = chart.partition
    I0, J0 = part.I0, part.J0
    M, m = chart_coordinate_map(chart, F)
    Minv = np.linalg.inv(M)
    names = part.variables
    old = _affine_expr(Minv, -Minv @ m, names)
    k = len(I0)
    g = substitute(chart.g, dict(zip(names, old)))
    xI, pJ = old[:k], old[k:]
    g = Add(g, Num(F.d)) if F.d else g
    for ci, xi in zip(F.c[I0], xI):
        if ci:
            g = Add(g, Mul(Num(float(ci)), xi))
    if len(J0):
        AJJinv = np.linalg.inv(F.A[np.ix_(J0, J0)])
        AJI = F.A[np.ix_(J0, I0)]
        bJ = F.b[J0]
        bpJ = F.bprime[J0]
        # w = A_JI x_I + b_J as an affine function of the new coordinates
        Wlin = np.zeros((len(J0), part.n))
        Wlin[:, :k] = AJI @ Minv[:k, :k]
        w0 = bJ - AJI @ (Minv[:k, :k] @ m[:k])
        q = AJJinv @ Wlin, AJJinv @ w0
        qexpr = _affine_expr(q[0], q[1], names)
        for pj, qj in zip(pJ, qexpr):
            g = Sub(g, Mul(pj, qj))
        r_lin = bpJ @ Wlin
        r0 = float(bpJ @ w0)
        (rexpr,) = _affine_expr(r_lin[None, :], np.array([r0]), names)
        g = Sub(g, rexpr)
    if domain is None:
        corners = np.array(list(itertools.product(*zip(chart.domain.min, chart.domain.max))))
        img = corners @ M.T + m
        domain = Box(img.min(0), img.max(0))
    return GeneratingChart(name or f"{chart.name}'", part, g, domain)


# ---------------------------------------------------------------------------
# atlases


@dataclass(frozen=True, eq=False)
class Transition:
    src: str
    dst: str
    overlap: Box
    map: AffineLegendreMap

    def to_json(self) -> dict:
        return {"src": self.src, "dst": self.dst, "overlap": self.overlap.to_json(), **self.map.to_json()}


@dataclass(frozen=True, eq=False)
class Atlas:
    name: str
    n: int
    charts: tuple[GeneratingChart, ...]
    transitions: tuple[Transition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "charts", tuple(self.charts))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        names = [c.name for c in self.charts]
        if len(set(names)) != len(names):
            raise ValueError("chart names must be unique")
        for c in self.charts:
            if c.n != self.n:
                raise ValueError(f"chart {c.name!r} has dimension {c.n}, atlas has {self.n}")
        for t in self.transitions:
            if t.src not in names or t.dst not in names:
                raise ValueError(f"transition {t.src}->{t.dst} names an unknown chart")
            if t.map.n != self.n or t.overlap.dim != self.n:
                raise ValueError(f"transition {t.src}->{t.dst} has the wrong dimension")

    @classmethod
    def from_json(cls, d: dict) -> "Atlas":
        n = int(d["n"])
        charts = [chart_from_json(c, n) for c in d["charts"]]
        trans = [Transition(t["src"], t["dst"], Box(t["overlap"]["min"], t["overlap"]["max"]),
                            AffineLegendreMap.from_json(t)) for t in d.get("transitions", [])]
        return cls(d.get("name", "model"), n, charts, trans)

    def to_json(self) -> dict:
        return {"name": self.name, "n": self.n, "charts": [c.to_json() for c in self.charts],
                "transitions": [t.to_json() for t in self.transitions]}

    def chart(self, name: str | None = None) -> GeneratingChart:
        if name is None:
            return self.charts[0]
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(f"no chart {name!r} in model {self.name!r}")

    def transition(self, src: str, dst: str) -> Transition:
        for t in self.transitions:
            if t.src == src and t.dst == dst:
                return t
        if src == dst:
            c = self.chart(src)
            return Transition(src, dst, c.domain, AffineLegendreMap.identity(self.n))
        raise NoTransition(f"no transition {src} -> {dst} in model {self.name!r}")


def reexpress(pt: ContactPoint, chart: GeneratingChart) -> np.ndarray:
    part = chart.partition
    return np.concatenate([pt.x[..., part.I0], pt.p[..., part.J0]], axis=-1)


def transition_jacobian(atlas: Atlas, src: ChartPoint, dst_chart: str) -> np.ndarray:
    """``∂u_dst/∂u_src`` at ``src``."""
    t = atlas.transition(src.chart.name, dst_chart)
    dst = atlas.chart(dst_chart)
    phi, phip = frames_arrays(src.chart, src.u)
    return np.concatenate([(t.map.A @ phi)[dst.partition.I0], (t.map.Aprime @ phip)[dst.partition.J0]], axis=0)


def transition_point(atlas: Atlas, src: ChartPoint, dst_chart: str) -> ChartPoint:
    t = atlas.transition(src.chart.name, dst_chart)
    if not t.overlap.contains(src.u):
        raise OutsideOverlap(f"{src.u.tolist()} is outside the overlap {t.src} -> {t.dst}")
    dst = atlas.chart(dst_chart)
    mapped = apply(t.map, lift(src))
    J = transition_jacobian(atlas, src, dst_chart)
    if np.linalg.cond(J) > 1e12:
        raise ReexpressionFailure(f"point is not representable in chart {dst.name!r} (singular Jacobian)")
    try:
        out = ChartPoint(dst, reexpress(mapped, dst))
        x, p, z = lift_arrays(dst, out.u)
    except (OutsideDomain, DomainError) as exc:
        raise ReexpressionFailure(f"chart {dst.name!r} cannot represent the mapped point: {exc}") from exc
    err = max(np.abs(x - mapped.x).max(), np.abs(p - mapped.p).max(), abs(z - mapped.z))
    scale = 1 + max(np.abs(mapped.x).max(), np.abs(mapped.p).max(), abs(mapped.z))
    if err > RELIFT_TOL * scale:
        raise ReexpressionFailure(f"relift in chart {dst.name!r} misses the mapped point by {err:.3g}")
    return out


@dataclass
class CocycleReport:
    max_residual: float
    triples: list = field(default_factory=list)  # (a, b, c, points_checked, max_residual)

    @property
    def points_checked(self) -> int:
        return sum(t[3] for t in self.triples)

    def ok(self, tol: float = COCYCLE_TOL) -> bool:
        return self.max_residual <= tol and self.points_checked > 0


def _pt_residual(p: ContactPoint, q: ContactPoint) -> float:
    a = np.concatenate([p.x, p.p, [p.z]])
    b = np.concatenate([q.x, q.p, [q.z]])
    return float(np.abs(a - b).max() / (1 + np.abs(a).max()))


def cocycle_check(atlas: Atlas, points: int = COCYCLE_POINTS, seed: int = 0) -> CocycleReport:
    """Sample triple overlaps with a Halton sequence and compare ``L_a^c`` with ``L_b^c ∘ L_a^b``.

    Triples with ``a == c`` compare the round trip with the identity.
    """
    report = CocycleReport(0.0)
    names = [c.name for c in atlas.charts]
    for a, b, c in itertools.product(names, repeat=3):
        if a == b or b == c:
            continue
        try:
            tab, tbc, tac = atlas.transition(a, b), atlas.transition(b, c), atlas.transition(a, c)
        except NoTransition:
            continue
        box = tab.overlap.intersect(tac.overlap)
        if box is None:
            continue
        box = box.intersect(atlas.chart(a).domain)
        if box is None:
            continue
        sampler = qmc.Halton(d=atlas.n, scramble=True, seed=seed)
        us = qmc.scale(sampler.random(points), box.min, box.max) if np.all(box.max > box.min) else \
            np.repeat(box.min[None], points, 0)
        worst, count = 0.0, 0
        for u in us:
            src = ChartPoint(atlas.chart(a), u)
            try:
                mid = transition_point(atlas, src, b)
            except (ReexpressionFailure, OutsideDomain):
                continue
            if not tbc.overlap.contains(mid.u):
                continue
            P = lift(src)
            direct = apply(tac.map, P)
            via = apply(tbc.map, apply(tab.map, P))
            worst = max(worst, _pt_residual(direct, via))
            count += 1
        report.triples.append((a, b, c, count, worst))
        report.max_residual = max(report.max_residual, worst)
    return report
