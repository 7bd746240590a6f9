"""Local models of Legendre submanifolds given by generating functions.

A chart is a partition ``I ⊔ J`` of ``{1..n}`` together with a generating
function ``g(x_I, p_J)``.  Chart coordinates are ordered ``(x_I, p_J)`` with
both blocks ascending.  Vectors in ``R^n_x`` and ``R^n_p`` always use the
original index order ``1..n``.

Everything that touches coordinates accepts leading batch dimensions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import Expression, Jet3, eval_jet3, parse, to_source, variables_of

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
COND_LIMIT = 1e12

MODELS_DIR = Path(__file__).parent / "models"


class SingularHessian(ArithmeticError):
    """The potential's Hessian is (numerically) singular: the point is on or near Σ."""


class NoConvergence(ArithmeticError):
    pass


class OutsideDomain(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    n: int
    I: tuple[int, ...]
    J: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        I = tuple(sorted(int(i) for i in self.I))
        if len(set(I)) != len(I) or any(not 1 <= i <= self.n for i in I):
            raise ValueError(f"I={I} is not a subset of 1..{self.n}")
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "J", tuple(j for j in range(1, self.n + 1) if j not in I))

    @property
    def I0(self) -> np.ndarray:
        return np.array(self.I, dtype=int) - 1

    @property
    def J0(self) -> np.ndarray:
        return np.array(self.J, dtype=int) - 1

    @property
    def variables(self) -> list[str]:
        return [f"x{i}" for i in self.I] + [f"p{j}" for j in self.J]

    @property
    def in_I(self) -> np.ndarray:
        """Boolean mask over chart coordinates: True for the x_I block."""
        return np.arange(self.n) < len(self.I)


@dataclass(frozen=True, eq=False)
class Box:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi):
            raise ValueError("box needs min <= max vectors of equal length")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def dim(self) -> int:
        return self.min.size

    def contains(self, u, slack: float = 1e-12) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        pad = slack * (1 + np.abs(self.max - self.min))
        return np.all((u >= self.min - pad) & (u <= self.max + pad), axis=-1)

    def sample(self, rng: np.random.Generator, size: int, margin: float = 0.0) -> np.ndarray:
        w = self.max - self.min
        return rng.uniform(self.min + margin * w, self.max - margin * w, size=(size, self.dim))

    def grid(self, counts: Sequence[int]) -> np.ndarray:
        """Tensor grid of shape ``(*counts, dim)``."""
        axes = [np.linspace(a, b, c) for a, b, c in zip(self.min, self.max, counts)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.min, other.min)
        hi = np.minimum(self.max, other.max)
        return Box(lo, hi) if np.all(lo <= hi) else None

    def to_json(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}


@dataclass(frozen=True, eq=False)
class GeneratingChart:
    name: str
    partition: Partition
    g: Expression
    domain: Box

    def __post_init__(self):
        extra = variables_of(self.g) - set(self.partition.variables)
        if extra:
            raise ValueError(f"chart {self.name!r}: g uses {sorted(extra)} outside its "
                             f"coordinates {self.partition.variables}")
        if self.domain.dim != self.n:
            raise ValueError(f"chart {self.name!r}: domain has dimension {self.domain.dim}, expected {self.n}")

    @classmethod
    def from_source(cls, name: str, n: int, I: Sequence[int], g: str | Expression,
                    domain_min, domain_max) -> "GeneratingChart":
        g = parse(g) if isinstance(g, str) else g
        return cls(name, Partition(n, tuple(I)), g, Box(domain_min, domain_max))

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def variables(self) -> list[str]:
        return self.partition.variables

    @property
    def is_potential(self) -> bool:
        return not self.partition.J

    def jet(self, u, strict: bool = True) -> Jet3:
        return eval_jet3(self.g, u, self.variables, strict=strict)

    def point(self, u) -> "ChartPoint":
        return ChartPoint(self, u)

    def to_json(self) -> dict:
        return {"name": self.name, "I": list(self.partition.I), "g": to_source(self.g),
                "domain": self.domain.to_json()}


@dataclass(frozen=True, eq=False)
class ContactPoint:
    """A point ``(x, p, z)`` of the standard contact space; ``zprime = pᵀx - z``."""

    x: np.ndarray
    p: np.ndarray
    z: np.ndarray
    zprime: np.ndarray = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        p = np.asarray(self.p, dtype=float)
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "zprime", np.einsum("...i,...i->...", p, x) - z)

    @property
    def n(self) -> int:
        return self.x.shape[-1]

    def __getitem__(self, key) -> "ContactPoint":
        return ContactPoint(self.x[key], self.p[key], self.z[key])

    def as_dict(self) -> dict:
        return {"x": self.x.tolist(), "p": self.p.tolist(), "z": self.z.tolist(),
                "zprime": self.zprime.tolist()}


@dataclass(frozen=True, eq=False)
class ChartPoint:
    chart: GeneratingChart
    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape[-1:] != (self.chart.n,):
            raise ValueError(f"chart {self.chart.name!r} needs {self.chart.n} coordinates, got {u.shape}")
        if not np.all(self.chart.domain.contains(u)):
            raise OutsideDomain(f"{u.tolist()} is outside the domain of chart {self.chart.name!r}")
        object.__setattr__(self, "u", u)


# ---------------------------------------------------------------------------
# lifts and Legendre maps


def lift_arrays(chart: GeneratingChart, u, strict: bool = True, jet: Jet3 | None = None):
    """Batch lift: chart coordinates ``(..., n)`` to ``(x, p, z)`` arrays."""
    u = np.asarray(u, dtype=float)
    part = chart.partition
    k = len(part.I)
    j = chart.jet(u, strict) if jet is None else jet
    x = np.empty(u.shape)
    p = np.empty(u.shape)
    x[..., part.I0] = u[..., :k]
    x[..., part.J0] = -j.g[..., k:]
    p[..., part.I0] = j.g[..., :k]
    p[..., part.J0] = u[..., k:]
    z = np.einsum("...i,...i->...", p[..., part.J0], x[..., part.J0]) + j.v
    return x, p, z


def frames_arrays(chart: GeneratingChart, u, strict: bool = True, jet: Jet3 | None = None):
    """``Phi = dx/du`` and ``PhiPrime = dp/du``; rows in original index order, columns in chart order."""
    u = np.asarray(u, dtype=float)
    part = chart.partition
    k = len(part.I)
    j = chart.jet(u, strict) if jet is None else jet
    n = chart.n
    eye = np.eye(n)
    phi = np.zeros(u.shape + (n,))
    phip = np.zeros(u.shape + (n,))
    phi[..., part.I0, :] = eye[:k]
    phi[..., part.J0, :] = -j.H[..., k:, :]
    phip[..., part.I0, :] = j.H[..., :k, :]
    phip[..., part.J0, :] = eye[k:]
    return phi, phip


def lift(cp: ChartPoint) -> ContactPoint:
    """The point of R^{2n+1} that the chart point represents."""
    return ContactPoint(*lift_arrays(cp.chart, cp.u))


def e_legendre(cp: ChartPoint, strict: bool = True):
    """``(x, z)``: x_I as given, x_J = -∂g/∂p_J, z = -p_Jᵀ∂g/∂p_J + g."""
    chart, u = cp.chart, cp.u
    return _e_legendre(chart, u, strict)


def _e_legendre(chart, u, strict=True, jet=None):
    part = chart.partition
    k = len(part.I)
    j = chart.jet(u, strict) if jet is None else jet
    dgp = j.g[..., k:]
    x = np.empty(np.shape(u))
    x[..., part.I0] = u[..., :k]
    x[..., part.J0] = -dgp
    z = -np.einsum("...i,...i->...", u[..., k:], dgp) + j.v
    return x, z


def m_legendre(cp: ChartPoint, strict: bool = True):
    """``(p, z')``: p_I = ∂g/∂x_I, p_J as given, z' = x_Iᵀ∂g/∂x_I - g."""
    return _m_legendre(cp.chart, cp.u, strict)


def _m_legendre(chart, u, strict=True, jet=None):
    part = chart.partition
    k = len(part.I)
    j = chart.jet(u, strict) if jet is None else jet
    dgx = j.g[..., :k]
    p = np.empty(np.shape(u))
    p[..., part.I0] = dgx
    p[..., part.J0] = u[..., k:]
    zp = np.einsum("...i,...i->...", u[..., :k], dgx) - j.v
    return p, zp


def _require_potential(chart: GeneratingChart):
    if not chart.is_potential:
        raise ValueError(f"chart {chart.name!r} is not a potential chart (J must be empty)")


def _check_regular(H: np.ndarray):
    c = np.linalg.cond(H)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise SingularHessian(f"Hessian condition number {c:.3g} exceeds {COND_LIMIT:.0e}")


def legendre_transform_regular(chart: GeneratingChart, x) -> tuple[np.ndarray, float]:
    """Gradient ``p = ∂f/∂x`` and dual potential value ``pᵀx - f`` at a regular point."""
    _require_potential(chart)
    x = np.asarray(x, dtype=float)
    j = chart.jet(x)
    _check_regular(j.H)
    return j.g.copy(), float(j.g @ x - j.v)


def inverse_gradient(chart: GeneratingChart, p, x0=None, tol: float = NEWTON_TOL,
                     maxiter: int = NEWTON_MAXITER) -> np.ndarray:
    """Solve ``∂f/∂x (x) = p`` by Newton iteration (the dual-side gradient map)."""
    _require_potential(chart)
    p = np.asarray(p, dtype=float)
    x = 0.5 * (chart.domain.min + chart.domain.max) if x0 is None else np.array(x0, dtype=float)
    for _ in range(maxiter):
        j = chart.jet(x)
        r = j.g - p
        _check_regular(j.H)
        dx = np.linalg.solve(j.H, r)
        x = x - dx
        if np.linalg.norm(dx) <= tol * (1 + np.linalg.norm(x)) and np.linalg.norm(r) <= tol * (1 + np.linalg.norm(p)):
            return x
    j = chart.jet(x)
    if np.linalg.norm(j.g - p) <= tol * (1 + np.linalg.norm(p)):
        return x
    raise NoConvergence(f"gradient inversion did not converge in {maxiter} iterations")


def canonical_transform(pt: ContactPoint, part: Partition) -> ContactPoint:
    """``(x, p, z) -> ((x_I, p_J), (p_I, -x_J), z - p_Jᵀx_J)``; a contactomorphism.

    On a lifted chart point this returns ``(u, ∇g(u), g(u))``.
    """
    I0, J0 = part.I0, part.J0
    xn = np.concatenate([pt.x[..., I0], pt.p[..., J0]], axis=-1)
    pn = np.concatenate([pt.p[..., I0], -pt.x[..., J0]], axis=-1)
    zn = pt.z - np.einsum("...i,...i->...", pt.p[..., J0], pt.x[..., J0])
    return ContactPoint(xn, pn, zn)


def contact_form(pt: ContactPoint, v) -> np.ndarray:
    """θ = dz - pᵀdx evaluated on a tangent vector ``v = (dx, dp, dz)``."""
    v = np.asarray(v, dtype=float)
    n = pt.n
    return v[..., 2 * n] - np.einsum("...i,...i->...", pt.p, v[..., :n])


# ---------------------------------------------------------------------------
# model files


def chart_from_json(d: dict, n: int) -> GeneratingChart:
    return GeneratingChart.from_source(d["name"], n, d.get("I", list(range(1, n + 1))), d["g"],
                                       d["domain"]["min"], d["domain"]["max"])


def resolve_model_path(path_or_name: str | Path) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    for cand in (MODELS_DIR / str(path_or_name), MODELS_DIR / f"{path_or_name}.json"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no model file {path_or_name!r} (bundled: "
                            f"{', '.join(sorted(q.stem for q in MODELS_DIR.glob('*.json')))})")


def load_model(path_or_name: str | Path):
    """Load a model file (or a bundled model by name) as an :class:`~quasihess.equivalence.Atlas`."""
    from .equivalence import Atlas

    with open(resolve_model_path(path_or_name)) as fh:
        return Atlas.from_json(json.load(fh))
