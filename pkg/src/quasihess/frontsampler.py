"""Sampling of e/m-wavefronts and extraction of e/m-caustics on chart grids."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from skimage.measure import find_contours

from .model import Box, GeneratingChart, _e_legendre, _m_legendre, frames_arrays, lift_arrays

DEFAULT_GRID = 201
SAME_PATH_TOL = 1e-12
CAUSTIC_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class WavefrontSample:
    side: str
    u: np.ndarray        # (N, n) chart coordinates
    coords: np.ndarray   # (N, n+1): (x, z) on the e-side, (p, z') on the m-side
    branch: np.ndarray   # (N,) sign of det of the side's frame matrix
    skipped: int

    def write_csv(self, path) -> None:
        n = self.u.shape[1]
        base = "x" if self.side == "e" else "p"
        height = "z" if self.side == "e" else "zprime"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"u{i}" for i in range(1, n + 1)] + [f"{base}{i}" for i in range(1, n + 1)]
                       + [height, "branch"])
            for u, c, b in zip(self.u, self.coords, self.branch):
                w.writerow([repr(float(v)) for v in u] + [repr(float(v)) for v in c] + [int(b)])


def _grid(chart: GeneratingChart, grid: Sequence[int] | int, domain: Box | None):
    counts = [grid] * chart.n if isinstance(grid, int) else list(grid)
    if len(counts) != chart.n or min(counts) < 2:
        raise ValueError(f"need {chart.n} per-axis counts of at least 2")
    box = chart.domain if domain is None else domain
    if not (np.all(chart.domain.contains(box.min)) and np.all(chart.domain.contains(box.max))):
        raise ValueError("sampling box must lie within the chart domain")
    return box, counts, box.grid(counts)


def _side_matrix(chart, side, U, jet):
    phi, phip = frames_arrays(chart, U, jet=jet)
    return phi if side == "e" else phip


def sample_wavefront(chart: GeneratingChart, side: str, grid: Sequence[int] | int = DEFAULT_GRID,
                     domain: Box | None = None) -> WavefrontSample:
    """Images of grid nodes under the e- or m-Legendre map, tagged by chart coordinates."""
    if side not in ("e", "m"):
        raise ValueError("side must be 'e' or 'm'")
    _, _, G = _grid(chart, grid, domain)
    U = G.reshape(-1, chart.n)
    j = chart.jet(U, strict=False)
    ok = np.isfinite(j.v) & np.all(np.isfinite(j.H.reshape(len(U), -1)), axis=1)
    U = U[ok]
    j = j[ok]
    if side == "e":
        base, height = _e_legendre(chart, U, jet=j)
    else:
        base, height = _m_legendre(chart, U, jet=j)
    x, p, z = lift_arrays(chart, U, jet=j)
    ref = z if side == "e" else np.einsum("...i,...i->...", p, x) - z
    if np.any(np.abs(ref - height) > SAME_PATH_TOL * (1 + np.abs(ref))):
        raise AssertionError("wavefront heights disagree with the lift")
    branch = np.sign(np.linalg.det(_side_matrix(chart, side, U, j))).astype(int)
    return WavefrontSample(side, U, np.column_stack([base, height]), branch, int((~ok).sum()))


# ---------------------------------------------------------------------------
# caustics


def _cofactor_det_derivative(M: np.ndarray, dM: np.ndarray) -> np.ndarray:
    """``∂_k det M = tr(adj(M) ∂_k M)`` for small matrices; ``dM`` has shape (..., n_k, n, n)."""
    n = M.shape[-1]
    if n == 1:
        adj = np.ones(M.shape)
    else:
        adj = np.empty(M.shape)
        for r in range(n):
            for c in range(n):
                minor = np.delete(np.delete(M, r, axis=-2), c, axis=-1)
                adj[..., c, r] = (-1) ** (r + c) * np.linalg.det(minor)
    return np.einsum("...ab,...kba->...k", adj, dM)


def _fields(chart: GeneratingChart, side: str, U: np.ndarray):
    """det of the side's frame matrix, its gradient, and the Lagrange-map image."""
    j = chart.jet(U, strict=False)
    M = _side_matrix(chart, side, U, j)
    part = chart.partition
    k = len(part.I)
    n = chart.n
    # ∂_k of the frame matrices: only the rows built from second derivatives move
    dM = np.zeros(U.shape[:-1] + (n, n, n))
    T = j.T  # [..., k, a, b] = ∂_k ∂_a ∂_b g
    if side == "e":
        dM[..., :, part.J0, :] = -T[..., :, k:, :]
    else:
        dM[..., :, part.I0, :] = T[..., :, :k, :]
    x, p, _ = lift_arrays(chart, U, jet=j)
    return np.linalg.det(M), _cofactor_det_derivative(M, dM), (x if side == "e" else p)


def _resolve_zeros(F: np.ndarray) -> np.ndarray:
    """Give nodes that are exactly 0 the sign of their neighbours' mean (ties count as positive).

    A row of zeros between opposite signs still yields a contour on that row,
    while a zero ridge inside a one-signed region (a touching zero) yields
    none and is left to the derivative fields.
    """
    zero = F == 0
    if not zero.any():
        return F
    P = np.pad(F, 1, mode="edge")
    acc = np.zeros(F.shape)
    for ax in range(F.ndim):
        for sh in (0, 2):
            sl = [slice(1, -1)] * F.ndim
            sl[ax] = slice(sh, sh + F.shape[ax])
            acc += P[tuple(sl)]
    tiny = np.finfo(float).tiny
    return np.where(zero, np.where(acc < 0, -tiny, tiny), F)


@dataclass(frozen=True, eq=False)
class Caustics:
    side: str
    polylines_u: list = field(default_factory=list)   # n == 2: chart-coordinate polylines
    polylines: list = field(default_factory=list)     # same, mapped into base coordinates
    points_u: np.ndarray | None = None                # n != 2: point cloud
    points: np.ndarray | None = None

    @property
    def empty(self) -> bool:
        if self.points is not None:
            return len(self.points) == 0
        return not self.polylines

    def all_points(self) -> np.ndarray:
        if self.points is not None:
            return self.points
        return np.concatenate(self.polylines) if self.polylines else np.zeros((0, 2))

    def all_points_u(self) -> np.ndarray:
        if self.points_u is not None:
            return self.points_u
        return np.concatenate(self.polylines_u) if self.polylines_u else np.zeros((0, 2))

    def to_geojson(self) -> dict:
        if self.points is not None:
            return {"type": "MultiPoint", "coordinates": self.points.tolist(), "properties": {"side": self.side}}
        return {"type": "MultiLineString", "coordinates": [pl.tolist() for pl in self.polylines],
                "properties": {"side": self.side}}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_geojson(), fh)


def _refine(chart, side, U, iters: int = 3):
    """Newton steps along the gradient onto det = 0."""
    for _ in range(iters):
        d, g, _ = _fields(chart, side, U)
        gn = np.einsum("...i,...i->...", g, g)
        step = np.where(gn[..., None] > 0, d[..., None] * g / np.where(gn > 0, gn, 1)[..., None], 0.0)
        U = U - step
    return U


def _edge_crossings(F: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Sign changes of ``F`` along grid edges, located by linear interpolation."""
    F = _resolve_zeros(F)
    out = []
    for ax in range(F.ndim):
        a = [slice(None)] * F.ndim
        b = [slice(None)] * F.ndim
        a[ax] = slice(None, -1)
        b[ax] = slice(1, None)
        fa, fb = F[tuple(a)], F[tuple(b)]
        mask = (fa > 0) != (fb > 0)
        t = (fa[mask] / (fa[mask] - fb[mask]))[:, None]
        out.append(G[tuple(a)][mask] + t * (G[tuple(b)][mask] - G[tuple(a)][mask]))
    return np.concatenate(out) if out else np.zeros((0, G.shape[-1]))


def extract_caustics(chart: GeneratingChart, side: str, grid: Sequence[int] | int = DEFAULT_GRID,
                     domain: Box | None = None) -> Caustics:
    """Critical values of the e- or m-Lagrange map found on a chart grid.

    Sign changes of det are traced directly.  Zeros where det touches 0
    without changing sign are found as sign changes of ``∂_k det`` that also
    satisfy ``|det| ≤ tol``.
    """
    if side not in ("e", "m"):
        raise ValueError("side must be 'e' or 'm'")
    box, counts, G = _grid(chart, grid, domain)
    n = chart.n
    det, ddet, _ = _fields(chart, side, G)
    cell = float(np.linalg.norm((box.max - box.min) / (np.array(counts) - 1)))
    lip = float(np.nanmax(np.linalg.norm(ddet, axis=-1))) if np.isfinite(ddet).any() else 0.0
    tol = CAUSTIC_RTOL * (1 + lip * cell)
    fields = [(det, False)] + [(ddet[..., k], True) for k in range(n)
                               if np.nanmax(np.abs(ddet[..., k])) > 0]

    def keep(U, even):
        if not len(U):
            return np.ones(0, bool)
        d, _, _ = _fields(chart, side, U)
        inside = box.contains(U)
        return inside & (np.abs(d) <= tol) if even else inside

    def finish(U, even):
        if not even and len(U):
            U = _refine(chart, side, U)
        return U

    if n == 2:
        axes = [np.linspace(a, b, c) for a, b, c in zip(box.min, box.max, counts)]
        plu, pl = [], []
        for F, even in fields:
            for path in find_contours(_resolve_zeros(np.nan_to_num(F, nan=1.0)), 0.0):
                U = np.column_stack([np.interp(path[:, i], np.arange(counts[i]), axes[i]) for i in range(2)])
                U = finish(U, even)
                mask = keep(U, even)
                # split the polyline wherever points fail the filter
                runs = np.split(np.arange(len(U)), np.nonzero(np.diff(mask.astype(int)))[0] + 1)
                for r in runs:
                    if len(r) >= 2 and mask[r[0]]:
                        _, _, img = _fields(chart, side, U[r])
                        plu.append(U[r])
                        pl.append(img)
        return Caustics(side, plu, pl)
    pts = []
    for F, even in fields:
        U = finish(_edge_crossings(np.nan_to_num(F, nan=1.0), G), even)
        pts.append(U[keep(U, even)])
    U = np.concatenate(pts) if pts else np.zeros((0, n))
    if len(U):
        U = np.unique(np.round(U, 12), axis=0)
    _, _, img = _fields(chart, side, U) if len(U) else (None, None, np.zeros((0, n)))
    return Caustics(side, points_u=U, points=img)


def densify(polyline: np.ndarray, spacing: float) -> np.ndarray:
    """Insert points so consecutive vertices are at most ``spacing`` apart."""
    out = [polyline[:1]]
    for a, b in zip(polyline[:-1], polyline[1:]):
        k = max(1, int(np.ceil(np.linalg.norm(b - a) / spacing)))
        t = np.arange(1, k + 1)[:, None] / k
        out.append(a + t * (b - a))
    return np.concatenate(out)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance of two point sets (nearest-neighbour queries on k-d trees)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max()))
