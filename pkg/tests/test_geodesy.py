import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasihess.geodesy import (NotOnECurve, NotOnMCurve, PointNotOnCurve, PointNotOnS, Submanifold,
                               orthogonal_m_to_S, project_onto, pythagoras_check, scan_critical_points,
                               strictly_orthogonal, trace_e_curve, trace_m_curve)
from quasihess.model import Box, ChartPoint, NoConvergence, lift, load_model


def _pytha(chart, u, t, s):
    Q = lift(ChartPoint(chart, [u, u ** 2 / 2]))
    R = lift(ChartPoint(chart, [t, t ** 2 / 2]))
    P = lift(ChartPoint(chart, [s, -2 * (s - u) + u ** 2 / 2]))
    return P, Q, R


def _parabola(chart, lo=-2.0, hi=2.0):
    return Submanifold(chart, ("t",), ("t", "t^2/2"), Box([lo], [hi]))


def test_m_curve_is_parabola(a2):
    c = trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [2, 1], span=(-2, 2))
    assert c.line_defect() < 1e-10
    np.testing.assert_allclose(c.u[:, 1], c.u[:, 0] ** 2 / 2, atol=1e-9)


def test_m_curve_turns_back_at_fold(a2):
    c = trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [2, 1], span=(-2, 2))
    assert c.u[:, 0].min() < -0.5  # continued through x1 = 0 onto the other branch
    folds = [e for e in c.events if e.kind == "fold"]
    assert len(folds) == 1
    assert abs(folds[0].u[0]) < 1e-3


def test_e_curve_on_potential_chart_is_straight(a2):
    c = trace_e_curve(a2, ChartPoint(a2, [0.2, -0.4]), [1, -2], span=(-1, 1))
    assert c.line_defect() < 1e-10
    d = c.u - c.u[0]
    cross = d[:, 0] * -2 - d[:, 1] * 1
    assert np.abs(cross).max() < 1e-10


def test_quadratic_m_curve_is_straight(quadratic):
    c = trace_m_curve(quadratic, ChartPoint(quadratic, [0.0, 0.0]), [1, 1], span=(-1, 1))
    np.testing.assert_allclose(c.u[:, 0], c.u[:, 1], atol=1e-10)


def test_aa_e_curve_crosses_fold(aa):
    c = trace_e_curve(aa, ChartPoint(aa, [0.0, 0.8]), [1, 1], span=(-1, 1), steps=400)
    assert c.line_defect() < 1e-8
    assert c.u[:, 1].min() < 0 < c.u[:, 1].max() or any(e.kind == "fold" for e in c.events)


def test_curve_guards(a2):
    with pytest.raises(ValueError):
        trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [0, 0])
    with pytest.raises(ValueError):
        trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [1, 0], span=(0.5, 1))


def test_orthogonality_on_worked_triangle(a2):
    # m-leg through Q = (1, 1/2); S is the e-line through Q with direction (1, -2)
    c = trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [2, 1], span=(-1, 3))
    S = Submanifold(a2, ("t",), ("t", "-2*(t - 1) + 1/2"), Box([-2], [2]))
    ok, r = orthogonal_m_to_S(c, S, [1.0])
    assert ok and r == pytest.approx(0, abs=1e-12)


def test_orthogonality_parallel_case(a2):
    c = trace_m_curve(a2, ChartPoint(a2, [1.0, 0.5]), [2, 1], span=(-2, 2))
    # S along the x-image of the curve itself
    ok, r = orthogonal_m_to_S(c, _parabola(a2), [1.0])
    assert not ok and r == pytest.approx(3 / np.sqrt(10), abs=1e-9)  # cos between m = (2,1) and (1,1)
    with pytest.raises(PointNotOnCurve):
        orthogonal_m_to_S(c, Submanifold(a2, ("t",), ("t", "t"), Box([-1], [1])), [0.7])
    with pytest.raises(PointNotOnS):
        orthogonal_m_to_S(c, _parabola(a2, -1, 1), [1.5])


def test_orthogonality_decided_by_direction_on_sigma(a2):
    # at x1 = 0 the m-curve's p-velocity vanishes, the direction m still decides
    c = trace_m_curve(a2, ChartPoint(a2, [0.0, 0.0]), [2, 1], span=(-2, 2))
    S = Submanifold(a2, ("t",), ("t", "-2*t"), Box([-1], [1]))
    ok, r = orthogonal_m_to_S(c, S, [0.0])
    assert ok and r < 1e-12


def test_strict_orthogonality(a2):
    q = ChartPoint(a2, [1.0, 0.5])
    e = trace_e_curve(a2, q, [1, -2])
    m = trace_m_curve(a2, q, [2, 1])
    assert strictly_orthogonal(e, m, q)
    assert not strictly_orthogonal(trace_e_curve(a2, q, [2, 1]), m, q)
    assert strictly_orthogonal(trace_e_curve(a2, q, [1, 0]), trace_m_curve(a2, q, [0, 1]), q)


def test_worked_triangle(a2):
    P, Q, R = _pytha(a2, 1.0, 2.0, 0.0)
    np.testing.assert_allclose(P.x, [0, 2.5])
    res = pythagoras_check(P, Q, R, [1, -2], [2, 1])
    assert abs(res.residual) <= 1e-10 and res.strict


def test_zero_m_leg(a2):
    P, Q, _ = _pytha(a2, 1.0, 2.0, 0.0)
    res = pythagoras_check(P, Q, Q, [1, -2], [2, 1])
    assert res.lhs == res.rhs


@given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4), st.floats(-0.8, 0.8))
def test_pythagoras_on_random_triangles(u, t, s):
    a2 = load_model("a2").chart()
    s = u + s
    P, Q, R = _pytha(a2, u, t, s)
    res = pythagoras_check(P, Q, R, [1, -2], [2, 1])
    assert abs(res.residual) <= 1e-10 * (1 + abs(res.lhs))


def test_pythagoras_with_q_on_sigma(a2):
    P, Q, R = _pytha(a2, 0.0, 1.3, -0.6)
    assert abs(pythagoras_check(P, Q, R, [1, -2], [2, 1]).residual) <= 1e-10


def test_non_orthogonal_identity(a2, rng):
    for _ in range(20):
        q = rng.uniform(-1.5, 1.5, 2)
        e, m = rng.normal(size=(2, 2))
        Q = lift(ChartPoint(a2, q))
        P = lift(ChartPoint(a2, q + 0.3 * e))
        # r on the m-line through q: p(r) = p(q) + t m with p = (x1², x2), choose x1 > 0 branch
        pr = Q.p + 0.2 * m
        if pr[0] < 0:
            continue
        R = lift(ChartPoint(a2, [np.sqrt(pr[0]) * np.sign(q[0] or 1), pr[1]]))
        res = pythagoras_check(P, Q, R, e, m)
        assert res.residual == pytest.approx(res.residual_identity, abs=1e-12)


def test_pythagoras_rejects_misaligned_legs(a2):
    P, Q, R = _pytha(a2, 1.0, 2.0, 0.0)
    with pytest.raises(NotOnECurve):
        pythagoras_check(P, Q, R, [1, 0], [2, 1])
    with pytest.raises(NotOnMCurve):
        pythagoras_check(P, Q, R, [1, -2], [1, 0])


def test_projection_quadratic_is_foot_of_perpendicular(quadratic):
    S = Submanifold(quadratic, ("t",), ("t", "1 - t"), Box([-2], [3]))
    crit = project_onto(S, lift(ChartPoint(quadratic, [0.0, 0.0])))
    assert len(crit) == 1
    np.testing.assert_allclose(crit[0].u, [0.5, 0.5], atol=1e-8)
    assert crit[0].classification == "min"


def test_projection_on_parabola_e_variant(a2):
    # θ = 1 is stationary for D(p, q(θ)) with p = (0, 5/2)
    p = lift(ChartPoint(a2, [0.0, 2.5]))
    crit = project_onto(_parabola(a2), p, kind="e")
    thetas = [float(c.theta[0]) for c in crit]
    assert any(abs(t - 1) < 1e-8 for t in thetas)
    for c in crit:
        assert c.orthogonality_residual <= 1e-8


def test_projection_on_parabola_m_variant(a2):
    p = lift(ChartPoint(a2, [0.0, 2.5]))
    crit = project_onto(_parabola(a2), p)
    thetas = sorted(float(c.theta[0]) for c in crit)
    np.testing.assert_allclose(thetas, [0.0, -1 + np.sqrt(6)], atol=1e-7)
    for c in crit:
        assert c.orthogonality_residual <= 1e-6
    roots = scan_critical_points(_parabola(a2), p)
    assert len(roots) == len(crit)


def test_projection_multiple_roots_match_scan(a2):
    S = Submanifold(a2, ("t",), ("t", "0.3*t^3 - t"), Box([-2], [2]))
    p = lift(ChartPoint(a2, [1.0, 1.0]))
    crit = project_onto(S, p)
    roots = scan_critical_points(S, p)
    assert len(roots) == 5
    for r in roots:
        assert min(abs(float(c.theta[0]) - r) for c in crit) < 2e-3


def test_projection_two_parameter(quadratic):
    S = Submanifold(quadratic, ("a", "b"), ("a", "b"), Box([-1, -1], [1, 1]))
    crit = project_onto(S, lift(ChartPoint(quadratic, [0.4, -0.2])))
    assert len(crit) == 1 and crit[0].orthogonality_residual < 1e-6


def test_projection_seed_outside_box(quadratic):
    S = Submanifold(quadratic, ("t",), ("t", "t"), Box([-1], [1]))
    with pytest.raises(ValueError):
        project_onto(S, lift(ChartPoint(quadratic, [0.0, 0.0])), seeds=[[5.0]])


def test_projection_reports_failure(a2):
    # D(q(θ), p) along this line has no stationary point in the box
    S = Submanifold(a2, ("t",), ("t", "0"), Box([1.0], [1.5]))
    with pytest.raises(NoConvergence):
        project_onto(S, lift(ChartPoint(a2, [0.5, 0.0])), seeds=[[1.2]])


def test_submanifold_json(tmp_path, a2):
    S = _parabola(a2)
    f = tmp_path / "s.json"
    import json
    f.write_text(json.dumps(S.to_json()))
    T = Submanifold.load(a2, f)
    np.testing.assert_allclose(T.u([[0.3]]), S.u([[0.3]]))
    assert T.is_immersive([0.3])
