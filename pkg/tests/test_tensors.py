import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasihess import tensors as ts
from quasihess.equivalence import AffineLegendreMap, chart_coordinate_map, transform_chart
from quasihess.model import ChartPoint, load_model


def test_a2_metric_and_cubic(a2):
    cp = ChartPoint(a2, [1.0, 1.0])
    np.testing.assert_allclose(ts.metric(cp).h, np.diag([2.0, 1.0]), atol=1e-15)
    C = ts.cubic(cp).C
    assert C[0, 0, 0] == 2 and np.count_nonzero(C) == 1


def test_aa_metric_has_signs(aa):
    cp = ChartPoint(aa, [0.5, 1.0])
    # h = g_xx ⊕ (-g_pp) = diag(2 x1, -3 p2²)
    np.testing.assert_allclose(ts.metric(cp).h, np.diag([1.0, -3.0]), atol=1e-14)
    assert ts.cubic(cp).C[1, 1, 1] == pytest.approx(6.0)


@pytest.mark.parametrize("model", ["a2", "a3", "aa", "separable", "glued3"])
def test_metric_two_routes(model, rng):
    for chart in load_model(model).charts:
        for u in chart.domain.sample(rng, 30, 0.05):
            cp = ChartPoint(chart, u)
            np.testing.assert_allclose(ts.metric(cp).h, ts.metric_from_pairing(ts.frames(cp)), atol=1e-12, rtol=0)


@pytest.mark.parametrize("model", ["a2", "a3", "aa", "separable", "onedim", "glued3"])
def test_cubic_two_routes(model, rng):
    for chart in load_model(model).charts:
        for u in chart.domain.sample(rng, 10, 0.05):
            cp = ChartPoint(chart, u)
            np.testing.assert_allclose(ts.cubic(cp).C, ts.cubic_four_term(cp), atol=1e-5, rtol=0)


def test_cubic_is_symmetric(rng):
    chart = load_model("separable").chart()
    C = ts.cubic(ChartPoint(chart, chart.domain.sample(rng, 1, 0.1)[0])).C
    for perm in [(0, 2, 1), (1, 0, 2), (2, 1, 0)]:
        assert np.array_equal(C, C.transpose(perm))


@pytest.mark.parametrize("u, expected", [
    ([1.0, 0.0], "regular"), ([0.0, 0.0], "m_critical"), ([1e-12, 0.3], "m_critical"),
])
def test_a2_classification(a2, u, expected):
    assert ts.degeneracy_test(ChartPoint(a2, u)) == expected


def test_aa_classification(aa):
    assert ts.degeneracy_test(ChartPoint(aa, [0.0, 1.0])) == "m_critical"
    assert ts.degeneracy_test(ChartPoint(aa, [1.0, 0.0])) == "e_critical"
    assert ts.degeneracy_test(ChartPoint(aa, [0.0, 0.0])) == "both"
    assert ts.degeneracy_test(ChartPoint(aa, [1.0, 1.0])) == "regular"


def test_explicit_tolerance(a2):
    assert ts.degeneracy_test(ChartPoint(a2, [1e-3, 0.0]), tol=1e-2) == "m_critical"
    assert ts.degeneracy_test(ChartPoint(a2, [1e-3, 0.0])) == "regular"


@given(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
def test_null_split(x1, p2):
    cp = ChartPoint(load_model("aa").chart(), [x1, p2])
    ke, km, kh = ts.null_dimensions(cp)
    assert ke + km == kh


def test_alpha_connections_are_dual(aa):
    cp = ChartPoint(aa, [0.8, -0.6])
    dh = ts.metric_derivative(cp)
    for X, Y, Z in [(0, 0, 0), (1, 1, 1), (0, 1, 1)]:
        for a in (-1.0, 0.0, 0.5, 1.0):
            s = ts.alpha_tensor(cp, X, Y, Z, a) + ts.alpha_tensor(cp, X, Y, Z, -a)
            assert s == pytest.approx(dh[X, Y, Z], abs=1e-14)


def test_structure_constants_need_regular_metric(a2):
    with pytest.raises(ts.SingularMetric):
        ts.structure_constants(ChartPoint(a2, [0.0, 0.5]))


@pytest.mark.parametrize("model, u", [("onedim", [0.7]), ("onedim", [2.5]),
                                      ("separable", [0.3, 1.2, 0.5]), ("separable", [-1.0, 2.0, -0.8])])
def test_frobenius_and_wdvv(model, u):
    cp = ChartPoint(load_model(model).chart(), u)
    assert ts.frobenius_compatibility_residual(cp) <= 1e-9
    assert ts.wdvv_residual(cp) <= 1e-10
    ts.frobenius_product(cp, 0, 0)


def test_wdvv_detects_non_associative_product():
    # a generic quartic in 3 variables is not a WDVV solution
    from quasihess.model import GeneratingChart
    c = GeneratingChart.from_source("q", 3, [1, 2, 3], "x1^2*x2^2 + x2*x3^3 + x1*x2*x3 + (x1^2+x2^2+x3^2)", [-1] * 3, [1] * 3)
    assert ts.wdvv_residual(ChartPoint(c, [0.3, 0.4, 0.5])) > 1e-3


def test_tensors_transform_under_chart_maps(rng):
    chart = load_model("aa").chart()
    F = AffineLegendreMap([[1.3, 0.0], [0.4, 0.8]], [0.1, -0.2], [0.3, 0.05], 0.2)
    new = transform_chart(chart, F)
    M, m = chart_coordinate_map(chart, F)
    for u in chart.domain.sample(rng, 10, 0.2):
        a = ChartPoint(chart, u)
        b = ChartPoint(new, M @ u + m)
        np.testing.assert_allclose(ts.pullback2(ts.metric(b).h, M), ts.metric(a).h, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(ts.pullback3(ts.cubic(b).C, M), ts.cubic(a).C, rtol=1e-8, atol=1e-8)
