import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasihess import tensors as ts
from quasihess.divergence import (ChartMismatch, atlas_divergence, bregman_specialization, contrast_derivatives,
                                  contrast_tensors, divergence, divergence_arrays)
from quasihess.equivalence import Atlas
from quasihess.expr import parse
from quasihess.model import ChartPoint, SingularHessian, lift, load_model


def test_a2_closed_form(a2):
    p, q = lift(ChartPoint(a2, [1.0, 0.0])), lift(ChartPoint(a2, [0.0, 0.0]))
    assert divergence(p, q).value == pytest.approx(1 / 3, abs=1e-15)
    assert divergence(q, p).value == pytest.approx(2 / 3, abs=1e-15)


def test_definition_form(rng, aa):
    for u, v in aa.domain.sample(rng, 20).reshape(10, 2, 2):
        P, Q = lift(ChartPoint(aa, u)), lift(ChartPoint(aa, v))
        direct = P.z + Q.zprime - P.x @ Q.p
        assert divergence(P, Q).value == pytest.approx(float(direct), abs=1e-12)


@pytest.mark.parametrize("model", ["a2", "a3", "aa", "separable", "onedim"])
def test_diagonal_is_exactly_zero(model, rng):
    chart = load_model(model).chart()
    P = lift(ChartPoint(chart, chart.domain.sample(rng, 100, 0.05)))
    assert np.all(divergence_arrays(P.x, P.z, P.x, P.p, P.z) == 0.0)


def test_quadratic_is_half_squared_distance(quadratic, rng):
    for u, v in quadratic.domain.sample(rng, 40).reshape(20, 2, 2):
        D = divergence(lift(ChartPoint(quadratic, u)), lift(ChartPoint(quadratic, v))).value
        assert D == pytest.approx(0.5 * np.sum((u - v) ** 2), abs=1e-12)


def test_bregman_form(rng):
    chart = load_model("separable").chart()
    for u, v in chart.domain.sample(rng, 20, 0.1).reshape(10, 2, 3):
        p, q = ChartPoint(chart, u), ChartPoint(chart, v)
        D = divergence(lift(p), lift(q)).value
        assert bregman_specialization(chart, p, q) == pytest.approx(D, abs=1e-10)


def test_bregman_with_explicit_dual(quadratic):
    p, q = ChartPoint(quadratic, [1.0, 2.0]), ChartPoint(quadratic, [-0.5, 0.3])
    val = bregman_specialization(quadratic, p, q, dual=parse("(p1^2 + p2^2)/2"))
    assert val == pytest.approx(0.5 * (1.5 ** 2 + 1.7 ** 2), abs=1e-12)


def test_bregman_refuses_non_convex(a2):
    with pytest.raises(SingularHessian):
        bregman_specialization(a2, ChartPoint(a2, [-1.0, 0.0]), ChartPoint(a2, [1.0, 0.0]))


def test_atlas_divergence_across_charts():
    atlas = load_model("glued")
    a = ChartPoint(atlas.chart("alpha"), [0.4, 0.2])
    q = ChartPoint(atlas.chart("alpha"), [-0.3, 1.1])
    qb = ChartPoint(atlas.chart("beta"), [0.7, 0.6])  # the image of q
    assert atlas_divergence(atlas, a, qb).value == pytest.approx(atlas_divergence(atlas, a, q).value, abs=1e-12)


def test_atlas_divergence_without_transition():
    atlas = load_model("glued")
    lonely = Atlas("lonely", 2, atlas.charts)
    with pytest.raises(ChartMismatch):
        atlas_divergence(lonely, ChartPoint(atlas.chart("alpha"), [0.0, 0.0]),
                         ChartPoint(atlas.chart("beta"), [0.0, 0.0]))


def test_a2_contrast_entries(a2):
    d = contrast_derivatives(a2, ChartPoint(a2, [1.0, 1.0]), 0, 0, 0)
    assert abs(d.D_k_minus) < 1e-8 and abs(d.D_minus_k) < 1e-8
    assert d.D_kl_minus == pytest.approx(2.0, abs=1e-6)
    assert d.D_k_l == pytest.approx(-2.0, abs=1e-6)
    assert d.D_kl_m == pytest.approx(0.0, abs=1e-5)
    assert d.D_m_kl == pytest.approx(-2.0, abs=1e-5)


@pytest.mark.parametrize("model", ["a2", "a3", "aa", "separable"])
def test_contrast_tensors(model, rng):
    chart = load_model(model).chart()
    for u in chart.domain.sample(rng, 10, 0.1):
        cp = ChartPoint(chart, u)
        t = contrast_tensors(chart, u)
        h, C = ts.metric(cp).h, ts.cubic(cp).C
        assert t.D_minus_minus == 0.0
        assert np.abs(t.D_k_minus).max() <= 1e-6 and np.abs(t.D_minus_k).max() <= 1e-6
        np.testing.assert_allclose(t.metric_from_mixed, h, atol=1e-5)
        np.testing.assert_allclose(t.D_kl_minus, h, atol=1e-5)
        np.testing.assert_allclose(t.cubic_from_contrast, C, atol=1e-4)


@given(st.floats(-1.8, 1.8), st.floats(-1.8, 1.8), st.floats(-1.8, 1.8), st.floats(-1.8, 1.8))
def test_divergence_of_sum_chart_splits(a, b, c, d):
    # a generating function that is a sum over coordinates gives a sum of 1-d divergences
    chart = load_model("a2").chart()
    D = divergence(lift(ChartPoint(chart, [a, b])), lift(ChartPoint(chart, [c, d]))).value
    d1 = a ** 3 / 3 + 2 * c ** 3 / 3 - a * c ** 2
    d2 = 0.5 * (b - d) ** 2
    assert D == pytest.approx(d1 + d2, abs=1e-12)
