import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from krmcf.ambient import (AmbientFields, ProductKahlerAmbient, ambient_at, kahler_form_pair,
                           kahler_ricci_step)
from krmcf.base_geometry import ConformalSurfaceMetric, ricci_flow_step
from krmcf.errors import ChartError
from krmcf.grid import PeriodicGrid


def bumpy_mixed(n=64):
    x, y = PeriodicGrid.torus(n).coords()
    th = PeriodicGrid.sphere(n).coords()[0]
    m1 = ConformalSurfaceMetric.flat(n, u=0.1 * np.cos(x) + 0.05 * np.sin(y), r=2.0)
    m2 = ConformalSurfaceMetric.round(n, u=0.05 * np.cos(th))
    return ProductKahlerAmbient(m1, m2)


def bumpy_flat(n=64):
    x, _ = PeriodicGrid.torus(n).coords()
    return ProductKahlerAmbient(ConformalSurfaceMetric.flat(n, u=0.1 * np.cos(x)),
                                ConformalSurfaceMetric.flat(n))


points = st.tuples(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi),
                   st.floats(0.2, np.pi - 0.2), st.floats(0, 2 * np.pi))
vectors = arrays(np.float64, (4, 1), elements=st.floats(-3, 3))

AMB = bumpy_mixed(32)


def fields_at(p):
    return AmbientFields(AMB, np.asarray(p, dtype=float).reshape(4, 1))


@given(points, vectors, st.sampled_from([1, -1]))
def test_complex_structure_squares_to_minus_one(p, X, sign2):
    f = fields_at(p)
    np.testing.assert_allclose(f.J(f.J(X, sign2), sign2), -X, atol=1e-12)


@given(points, vectors, vectors, st.sampled_from([1, -1]))
def test_metric_is_hermitian_and_omega_matches(p, X, Y, sign2):
    f = fields_at(p)
    scale = 1 + np.sqrt(f.inner(X, X) * f.inner(Y, Y))
    assert abs(f.inner(f.J(X, sign2), f.J(Y, sign2)) - f.inner(X, Y)) < 1e-12 * scale
    assert abs(f.omega(X, Y, sign2) - f.inner(f.J(X, sign2), Y)) < 1e-12 * scale
    assert abs(f.omega(X, f.J(X, sign2), sign2) - f.inner(X, X)) < 1e-12 * scale


@given(points)
def test_curvature_tensor_symmetries(p):
    d = ambient_at(AMB, p)
    Rm = d.riemann
    np.testing.assert_allclose(Rm, -np.swapaxes(Rm, 0, 1), atol=1e-14)
    np.testing.assert_allclose(Rm, np.transpose(Rm, (2, 3, 0, 1)), atol=1e-14)
    bianchi = Rm + np.transpose(Rm, (0, 2, 3, 1)) + np.transpose(Rm, (0, 3, 1, 2))
    assert np.max(np.abs(bianchi)) < 1e-13
    np.testing.assert_allclose(np.einsum("bd,abcd->ac", d.inverse_metric, Rm), d.ricci, atol=1e-13)
    assert np.trace(d.inverse_metric @ d.ricci) == pytest.approx(d.scalar, abs=1e-12)
    # Kahler: J is an isometry and omega = g(J., .)
    np.testing.assert_allclose(d.J @ d.J, -np.eye(4), atol=1e-12)
    np.testing.assert_allclose(d.J.T @ d.metric @ d.J, d.metric, atol=1e-12)
    np.testing.assert_allclose(d.omega, (d.metric @ d.J).T, atol=1e-12)


def test_sectional_curvatures_of_factors():
    amb = ProductKahlerAmbient(ConformalSurfaceMetric.flat(32, r=2.0), ConformalSurfaceMetric.round(64))
    d = ambient_at(amb, [1.0, 2.0, 1.1, 0.4])
    g = d.metric
    K2 = d.riemann[2, 3, 2, 3] / (g[2, 2] * g[3, 3])
    assert K2 == pytest.approx(1.0, abs=1e-3)
    assert d.riemann[0, 2, 0, 2] == 0.0 and d.riemann[0, 1, 0, 1] == 0.0


def test_christoffel_symbols_match_closed_form():
    # P = Q = exp(2u), u = 0.1 cos y0: Gamma^0_00 = u', Gamma^0_11 = -u', Gamma^1_01 = u'
    for x in (0.3, 1.7, 4.0):
        G = ambient_at(bumpy_flat(64), [x, 0.5, 0.1, 0.2]).christoffel
        du = -0.1 * np.sin(x)
        assert G[0, 0, 0] == pytest.approx(du, abs=1e-5)
        assert G[0, 1, 1] == pytest.approx(-du, abs=1e-5)
        assert G[1, 0, 1] == pytest.approx(du, abs=1e-5)
        assert G[1, 1, 0] == pytest.approx(du, abs=1e-5)
        assert np.max(np.abs(G[2:])) == 0.0


def test_polar_christoffels():
    amb = ProductKahlerAmbient(ConformalSurfaceMetric.flat(32, r=2.0), ConformalSurfaceMetric.round(64))
    th = 0.8
    G = ambient_at(amb, [0.0, 0.0, th, 0.0]).christoffel
    assert G[2, 3, 3] == pytest.approx(-np.sin(th) * np.cos(th), abs=1e-12)
    assert G[3, 2, 3] == pytest.approx(1 / np.tan(th), abs=1e-12)


def test_complex_structure_is_parallel():
    """Finite-difference check of nabla J = 0 on a bumpy product."""
    amb = bumpy_mixed(64)
    p = np.array([0.7, 1.3, 1.0, 0.5])
    d = ambient_at(amb, p)
    eps = 1e-5
    for C in (0, 1, 2):
        e = np.zeros(4)
        e[C] = eps
        dJ = (ambient_at(amb, p + e).J - ambient_at(amb, p - e).J) / (2 * eps)
        G = d.christoffel[:, C, :]          # [A, D] = Gamma^A_{C D}
        nabla = dJ + G @ d.J - d.J @ G
        assert np.max(np.abs(nabla)) < 1e-6


def test_kahler_forms():
    w1, w2, w = kahler_form_pair(bumpy_mixed(32), [0.1, 0.2, 1.0, 0.3])
    np.testing.assert_allclose(w, w1 + w2)
    assert w1[0, 1] == pytest.approx(np.exp(2 * 0.1 * np.cos(0.1) + 2 * 0.05 * np.sin(0.2)), rel=1e-4)
    assert np.count_nonzero(w1[2:]) == 0 and np.count_nonzero(w2[:2]) == 0


def test_chart_and_normalization_errors():
    amb = bumpy_mixed(32)
    with pytest.raises(ChartError):
        ambient_at(amb, [0.0, 0.0, 1e-5, 0.0])
    with pytest.raises(ValueError):
        ProductKahlerAmbient(ConformalSurfaceMetric.flat(16), ConformalSurfaceMetric.round(16))


def test_kahler_ricci_step_is_componentwise():
    amb = bumpy_mixed(32)
    nxt = kahler_ricci_step(amb, 1e-3)
    np.testing.assert_array_equal(nxt.m1.u, ricci_flow_step(amb.m1, 1e-3).u)
    np.testing.assert_array_equal(nxt.m2.u, ricci_flow_step(amb.m2, 1e-3).u)
    assert nxt.r == amb.r


def test_same_average_curvature():
    a = ProductKahlerAmbient(ConformalSurfaceMetric.round(32), ConformalSurfaceMetric.round(32))
    assert a.same_average_curvature()
    assert not ProductKahlerAmbient(ConformalSurfaceMetric.flat(32, r=2.0),
                                    ConformalSurfaceMetric.round(32)).same_average_curvature()
