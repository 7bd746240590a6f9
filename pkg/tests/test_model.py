import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasihess.expr import DomainError
from quasihess.model import (Box, ChartPoint, ContactPoint, GeneratingChart, NoConvergence, OutsideDomain,
                             Partition, SingularHessian, canonical_transform, contact_form, e_legendre,
                             frames_arrays, inverse_gradient, legendre_transform_regular, lift, lift_arrays,
                             load_model, m_legendre, resolve_model_path)


def test_partition_derives_complement():
    part = Partition(3, (3, 1))
    assert part.I == (1, 3) and part.J == (2,)
    assert part.variables == ["x1", "x3", "p2"]
    assert part.in_I.tolist() == [True, True, False]


@pytest.mark.parametrize("I", [(0,), (4,), (1, 1)])
def test_partition_rejects_bad_index_sets(I):
    with pytest.raises(ValueError):
        Partition(3, I)


def test_chart_rejects_foreign_variables():
    with pytest.raises(ValueError):
        GeneratingChart.from_source("bad", 2, [1], "x1 + x2", [-1, -1], [1, 1])


def test_box_grid_shape_and_contains():
    b = Box([0, -1], [1, 1])
    G = b.grid([3, 5])
    assert G.shape == (3, 5, 2)
    assert b.contains(G).all()
    assert not b.contains([1.1, 0])
    assert b.intersect(Box([2, 2], [3, 3])) is None


def test_a2_lift(a2):
    pt = lift(ChartPoint(a2, [1.0, 2.0]))
    np.testing.assert_allclose(pt.x, [1, 2])
    np.testing.assert_allclose(pt.p, [1, 2])
    assert pt.z == pytest.approx(1 / 3 + 2)
    assert pt.zprime == pytest.approx(1 + 4 - 7 / 3)


def test_aa_lift_matches_closed_form(aa):
    x1, p2 = 0.7, -1.3
    pt = lift(ChartPoint(aa, [x1, p2]))
    np.testing.assert_allclose(pt.x, [x1, -p2 ** 3], atol=1e-15)
    np.testing.assert_allclose(pt.p, [x1 ** 2, p2], atol=1e-15)
    assert pt.z == pytest.approx(x1 ** 3 / 3 - 3 * p2 ** 4 / 4, abs=1e-15)


def test_chart_point_outside_domain(a2):
    with pytest.raises(OutsideDomain):
        ChartPoint(a2, [10.0, 0.0])
    with pytest.raises(ValueError):
        ChartPoint(a2, [0.0])


def test_strict_domain_errors_propagate():
    c = load_model("onedim").chart()
    with pytest.raises(DomainError):
        lift_arrays(c, np.array([-1.0]))
    x, p, z = lift_arrays(c, np.array([[-1.0], [1.0]]), strict=False)
    assert np.isnan(z[0]) and np.isfinite(z[1])


def test_legendre_maps_agree_with_lift(aa, rng):
    for u in aa.domain.sample(rng, 20):
        cp = ChartPoint(aa, u)
        pt = lift(cp)
        x, z = e_legendre(cp)
        p, zp = m_legendre(cp)
        np.testing.assert_allclose(x, pt.x, atol=1e-14)
        np.testing.assert_allclose(p, pt.p, atol=1e-14)
        assert z == pytest.approx(float(pt.z), abs=1e-13)
        assert zp == pytest.approx(float(pt.zprime), abs=1e-13)


@pytest.mark.parametrize("model", ["a2", "a3", "aa", "quadratic", "onedim", "separable"])
def test_lift_is_legendrian(model, rng):
    chart = load_model(model).chart()
    for u in chart.domain.sample(rng, 5, 0.1):
        cp = ChartPoint(chart, u)
        pt = lift(cp)
        phi, phip = frames_arrays(chart, u)
        dz = pt.p @ phi  # z is stationary along θ = 0 so dz = pᵀdx
        h = 1e-6
        for k in range(chart.n):
            e = np.eye(chart.n)[k] * h
            _, _, za = lift_arrays(chart, u + e)
            _, _, zb = lift_arrays(chart, u - e)
            assert (za - zb) / (2 * h) == pytest.approx(dz[k], abs=1e-6)
            v = np.concatenate([phi[:, k], phip[:, k], [dz[k]]])
            assert abs(contact_form(pt, v)) < 1e-12


def test_canonical_transform_gives_one_jet(aa):
    u = np.array([0.4, 1.2])
    pt = canonical_transform(lift(ChartPoint(aa, u)), aa.partition)
    j = aa.jet(u)
    np.testing.assert_allclose(pt.x, u, atol=1e-15)
    np.testing.assert_allclose(pt.p, j.g, atol=1e-15)
    assert pt.z == pytest.approx(float(j.v), abs=1e-15)


def test_height_duality_batch(rng):
    x, p = rng.normal(size=(2, 50, 3))
    z = rng.normal(size=50)
    pt = ContactPoint(x, p, z)
    np.testing.assert_allclose(pt.z + pt.zprime, np.einsum("ij,ij->i", p, x), atol=1e-14)
    assert pt[3].x.shape == (3,)


def test_legendre_transform_regular(quadratic):
    grad, dual = legendre_transform_regular(quadratic, [1.0, -2.0])
    np.testing.assert_allclose(grad, [1, -2])
    assert dual == pytest.approx(2.5)


def test_legendre_transform_rejects_singular(a3, aa):
    with pytest.raises(SingularHessian):
        legendre_transform_regular(a3, [0.0, 0.0])
    with pytest.raises(ValueError):
        legendre_transform_regular(aa, [0.5, 0.5])


def test_inverse_gradient_round_trip():
    c = load_model("separable").chart()
    x = np.array([0.3, 1.1, 0.4])
    grad, _ = legendre_transform_regular(c, x)
    np.testing.assert_allclose(inverse_gradient(c, grad, x0=x + 0.05), x, atol=1e-10)


def test_inverse_gradient_reports_failure(a2):
    with pytest.raises((NoConvergence, SingularHessian)):
        inverse_gradient(a2, [-1.0, 0.0], x0=[0.5, 0.0], maxiter=5)


@pytest.mark.parametrize("name", ["a2", "a3", "aa", "quadratic", "onedim", "separable", "glued", "glued3"])
def test_bundled_models_round_trip_json(name):
    atlas = load_model(name)
    again = type(atlas).from_json(json.loads(json.dumps(atlas.to_json())))
    assert [c.name for c in again.charts] == [c.name for c in atlas.charts]
    c0, c1 = atlas.chart(), again.chart()
    u = 0.5 * (c0.domain.min + c0.domain.max) + 0.1
    assert float(c0.jet(u).v) == pytest.approx(float(c1.jet(u).v), rel=1e-15)


def test_model_path_resolution(tmp_path):
    assert resolve_model_path("a2").name == "a2.json"
    with pytest.raises(FileNotFoundError):
        resolve_model_path(tmp_path / "nope.json")


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_a2_frames(x1, x2):
    c = load_model("a2").chart()
    phi, phip = frames_arrays(c, np.array([x1, x2]))
    np.testing.assert_array_equal(phi, np.eye(2))
    np.testing.assert_allclose(phip, np.diag([2 * x1, 1.0]), atol=1e-15)
