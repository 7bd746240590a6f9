"""Property suite run by ``quasihess check`` over every chart of a model."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import divergence as dv
from . import equivalence as eq
from . import tensors as ts
from .expr import eval_jet3_fd_oracle
from .model import (ChartPoint, ContactPoint, GeneratingChart, SingularHessian, _e_legendre, _m_legendre,
                    inverse_gradient, legendre_transform_regular, lift_arrays)


@dataclass(frozen=True)
class CheckResult:
    name: str
    chart: str
    residual: float
    tol: float
    points: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tol)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.chart}:{self.name} residual={self.residual:.3e} tol={self.tol:.1e} points={self.points}"

    def as_dict(self) -> dict:
        return {"name": self.name, "chart": self.chart, "residual": self.residual, "tol": self.tol,
                "points": self.points, "passed": self.passed}


def _points(chart: GeneratingChart, rng, k: int, margin: float = 0.05) -> np.ndarray:
    return chart.domain.sample(rng, k, margin)


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / (1 + np.abs(b).max())) if a.size else 0.0


def check_contact_form(chart, rng, k=50, h=1e-6):
    U = _points(chart, rng, k)
    worst = 0.0
    for u in U:
        x, p, z = lift_arrays(chart, u)
        for e in np.eye(chart.n):
            xa, _, za = lift_arrays(chart, u + h * e)
            xb, _, zb = lift_arrays(chart, u - h * e)
            dx, dz = (xa - xb) / (2 * h), (za - zb) / (2 * h)
            worst = max(worst, abs(dz - p @ dx) / (1 + np.linalg.norm(p) * np.linalg.norm(dx)))
    return worst, 1e-7, k


def check_height_duality(chart, rng, k=1000):
    x, p, z = lift_arrays(chart, _points(chart, rng, k))
    pt = ContactPoint(x, p, z)
    r = np.abs(pt.z + pt.zprime - np.einsum("...i,...i->...", pt.p, pt.x)) / (1 + np.abs(pt.z) + np.abs(pt.zprime))
    return float(r.max()), 1e-15, k


def check_legendre_maps(chart, rng, k=1000):
    U = _points(chart, rng, k)
    x, p, z = lift_arrays(chart, U)
    xe, ze = _e_legendre(chart, U)
    pm, zm = _m_legendre(chart, U)
    zp = np.einsum("...i,...i->...", p, x) - z
    return max(_rel(xe, x), _rel(ze, z), _rel(pm, p), _rel(zm, zp)), 1e-12, k


def check_jets(chart, rng, k=5):
    worst = 0.0
    for u in _points(chart, rng, k, 0.1):
        j = chart.jet(u)
        o = eval_jet3_fd_oracle(chart.g, u, 1e-3, chart.variables)
        for a, b in ((j.g, o.g), (j.H, o.H), (j.T, o.T)):
            worst = max(worst, float(np.abs(a - b).max() / max(np.abs(a).max(), 1.0)))
    return worst, 1e-6, k


def check_metric_routes(chart, rng, k=100):
    worst = 0.0
    for u in _points(chart, rng, k):
        cp = ChartPoint(chart, u)
        worst = max(worst, float(np.abs(ts.metric(cp).h - ts.metric_from_pairing(ts.frames(cp))).max()))
    return worst, 1e-12, k


def check_cubic_routes(chart, rng, k=30):
    worst = 0.0
    for u in _points(chart, rng, k):
        cp = ChartPoint(chart, u)
        worst = max(worst, float(np.abs(ts.cubic(cp).C - ts.cubic_four_term(cp)).max()))
    return worst, 1e-5, k


def check_null_split(chart, rng, k=100):
    bad = 0
    for u in _points(chart, rng, k):
        a, b, c = ts.null_dimensions(ChartPoint(chart, u))
        bad += a + b != c
    return float(bad), 0.0, k


def check_diagonal(chart, rng, k=1000):
    x, p, z = lift_arrays(chart, _points(chart, rng, k))
    return float(np.abs(dv.divergence_arrays(x, z, x, p, z)).max()), 0.0, k


def check_contrast(chart, rng, k=30):
    first = h_mixed = h_left = cub = 0.0
    for u in _points(chart, rng, k, 0.1):
        cp = ChartPoint(chart, u)
        t = dv.contrast_tensors(chart, u)
        h = ts.metric(cp).h
        C = ts.cubic(cp).C
        first = max(first, np.abs(t.D_k_minus).max(), np.abs(t.D_minus_k).max())
        h_mixed = max(h_mixed, np.abs(t.metric_from_mixed - h).max())
        h_left = max(h_left, np.abs(t.D_kl_minus - h).max())
        cub = max(cub, np.abs(t.cubic_from_contrast - C).max())
    return {"contrast_first_order": (float(first), 1e-6, k),
            "contrast_metric_mixed": (float(h_mixed), 1e-5, k),
            "contrast_metric_left": (float(h_left), 1e-5, k),
            "contrast_cubic": (float(cub), 1e-4, k)}


def check_divergence_invariance(chart, rng, k=100):
    worst = 0.0
    for _ in range(k):
        F = eq.AffineLegendreMap.random(rng, chart.n)
        U = _points(chart, rng, 2)
        P, Q = (ContactPoint(*lift_arrays(chart, u)) for u in U)
        D = dv.divergence(P, Q).value
        worst = max(worst, dv.divergence_invariance_check(F, P, Q) / (1 + abs(D)))
    return worst, 1e-9, k


def check_double_legendre(chart, rng, k=100):
    if not chart.is_potential:
        return None
    worst, used = 0.0, 0
    for u in _points(chart, rng, k):
        try:
            grad, _ = legendre_transform_regular(chart, u)
            x = inverse_gradient(chart, grad, x0=u + 1e-3)
        except (SingularHessian, ArithmeticError):
            continue
        worst = max(worst, float(np.abs(x - u).max()))
        used += 1
    return worst, 1e-8, used


CHART_CHECKS: dict[str, Callable] = {
    "contact_form_annihilation": check_contact_form,
    "height_duality": check_height_duality,
    "legendre_maps_match_lift": check_legendre_maps,
    "jet_vs_finite_difference": check_jets,
    "metric_two_routes": check_metric_routes,
    "cubic_two_routes": check_cubic_routes,
    "null_space_split": check_null_split,
    "divergence_diagonal": check_diagonal,
    "contrast": check_contrast,
    "divergence_invariance": check_divergence_invariance,
    "double_legendre": check_double_legendre,
}


def _atlas_checks(atlas: eq.Atlas, seed: int) -> list[CheckResult]:
    out = []
    if len(atlas.charts) < 2:
        return out
    rep = eq.cocycle_check(atlas, seed=seed)
    out.append(CheckResult("cocycle", atlas.name, rep.max_residual, eq.COCYCLE_TOL, rep.points_checked))
    rng = np.random.default_rng(seed)
    worst_rt = worst_h = worst_c = worst_d = 0.0
    count = 0
    for t in atlas.transitions:
        src = atlas.chart(t.src)
        box = t.overlap.intersect(src.domain)
        if box is None:
            continue
        for u in box.sample(rng, 10, 0.05):
            a = ChartPoint(src, u)
            try:
                b = eq.transition_point(atlas, a, t.dst)
                back = eq.transition_point(atlas, b, t.src)
            except (eq.ReexpressionFailure, eq.OutsideOverlap, eq.NoTransition):
                continue
            worst_rt = max(worst_rt, float(np.abs(back.u - u).max()))
            J = eq.transition_jacobian(atlas, a, t.dst)
            worst_h = max(worst_h, _rel(ts.pullback2(ts.metric(b).h, J), ts.metric(a).h))
            worst_c = max(worst_c, _rel(ts.pullback3(ts.cubic(b).C, J), ts.cubic(a).C))
            v = box.sample(rng, 1, 0.05)[0]
            q = ChartPoint(src, v)
            try:
                qb = eq.transition_point(atlas, q, t.dst)
            except (eq.ReexpressionFailure, eq.OutsideOverlap):
                continue
            d1 = dv.atlas_divergence(atlas, a, q).value
            d2 = dv.atlas_divergence(atlas, b, qb).value
            worst_d = max(worst_d, abs(d1 - d2) / (1 + abs(d1)))
            count += 1
    out += [CheckResult("transition_round_trip", atlas.name, worst_rt, 1e-10, count),
            CheckResult("metric_pullback", atlas.name, worst_h, 1e-8, count),
            CheckResult("cubic_pullback", atlas.name, worst_c, 1e-8, count),
            CheckResult("divergence_across_charts", atlas.name, worst_d, 1e-9, count)]
    return out


def run_checks(atlas: eq.Atlas, seed: int = 0, threads: int | None = None) -> list[CheckResult]:
    """Run every property on every chart; deterministic for a given seed."""
    if threads is None:
        threads = int(os.environ.get("QUASIHESS_THREADS", "1") or 1)
    jobs = []
    for ci, chart in enumerate(atlas.charts):
        for ni, (name, fn) in enumerate(CHART_CHECKS.items()):
            jobs.append((chart, name, fn, np.random.default_rng([seed, ci, ni])))

    def run(job):
        chart, name, fn, rng = job
        res = fn(chart, rng)
        if res is None:
            return []
        if isinstance(res, dict):
            return [CheckResult(k, chart.name, *v) for k, v in res.items()]
        return [CheckResult(name, chart.name, *res)]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = [r for rs in pool.map(run, jobs) for r in rs]
    return results + _atlas_checks(atlas, seed)
