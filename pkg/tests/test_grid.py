import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from plaplab.grid import (
    Field,
    Grid,
    a_eps,
    b_eps,
    b_eps_slope,
    divergence,
    gradient_magnitude,
    hamilton_term_reg,
    node_gradient_sq,
    p_laplacian_reg,
    sphere_area,
)


def test_sphere_area_values():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("geom,N", [("line", 1), ("radial", 1), ("radial", 2), ("radial", 3)])
def test_volumes_sum_to_domain_measure(geom, N):
    g = Grid(geom, 3.0, 64, N)
    if geom == "line":
        assert g.volumes.sum() == pytest.approx(6.0)
    else:
        assert g.volumes.sum() == pytest.approx(sphere_area(N) * 3.0 ** N / N, rel=1e-3)


@pytest.mark.parametrize("kw", [dict(geometry="line", L=0.0, M=16), dict(geometry="line", L=1.0, M=4),
                                dict(geometry="line", L=1.0, M=16, N=2), dict(geometry="disk", L=1.0, M=16)])
def test_grid_rejects_bad_input(kw):
    with pytest.raises(ValueError):
        Grid(**kw)


def test_field_shape_checked():
    g = Grid("line", 1.0, 16)
    with pytest.raises(ValueError):
        Field(g, np.zeros(3))
    with pytest.raises(ValueError):
        Field(g, np.full(g.n_nodes, np.nan))


@given(arrays(float, 33, elements=st.floats(-10, 10)), st.sampled_from([("line", 1), ("radial", 2), ("radial", 3)]))
def test_divergence_telescopes_to_zero(flux, gN):
    geom, N = gN
    g = Grid(geom, 2.0, 32 if geom == "radial" else 16, N)
    F = flux[: g.n_nodes - 1]
    assert abs(np.dot(g.volumes, divergence(g, F))) <= 1e-10 * (1 + np.abs(F).sum())


@given(st.floats(0, 1e6), st.floats(1.01, 1.99), st.floats(1e-6, 0.4))
def test_a_eps_bounded_by_eps_power(xi, p, eps):
    assert a_eps(xi, p, eps) <= eps ** (p - 2) * (1 + 1e-12)


@given(st.floats(0, 1e6), st.floats(0.05, 2.0), st.floats(1e-8, 0.4))
def test_b_eps_nonnegative_and_below_power(xi, q, eps):
    # (xi + e^2)^{q/2} - e^q <= xi^{q/2} by subadditivity of s -> s^{q/2}, q <= 2
    b = float(b_eps(xi, q, eps))
    assert b >= 0
    assert b <= xi ** (q / 2) + 1e-12 * (1 + xi ** (q / 2))


def test_b_eps_limits():
    assert b_eps(0.0, 1.2, 1e-3) == 0.0
    assert float(b_eps(4.0, 1.0, 1e-12)) == pytest.approx(2.0)
    assert float(b_eps_slope(2.0, 1.0, 1e-12)) == pytest.approx(1.0)


def test_constant_field_has_zero_operators():
    g = Grid("line", 1.0, 16)
    f = Field(g, np.full(g.n_nodes, 3.0))
    assert np.all(p_laplacian_reg(f, 1.5, 1e-3).values == 0)
    assert np.all(hamilton_term_reg(f, 1.2, 1e-3).values == 0)
    assert np.all(gradient_magnitude(f).values == 0)


def test_stencils_on_linear_profile():
    g = Grid("line", 1.0, 16)
    u = 2.0 * g.x + 5.0
    for st_ in ("face", "upwind", "centered"):
        g2 = node_gradient_sq(g, u, st_)
        assert np.allclose(g2[1:-1], 4.0)
    with pytest.raises(ValueError):
        node_gradient_sq(g, u, "bogus")
