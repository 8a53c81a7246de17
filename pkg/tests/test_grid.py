"""Grid geometry and stencil kernels against independent oracles.

The oracles here are deliberately naive: double-loop convolution, closed-form
derivatives of polynomial fields, telescoping-sum identities. Anything the
rest of the package computes with these kernels inherits its correctness from
the checks in this file.
"""

import numpy as np
import pytest

from emberswarm.grid import (
    GridSpec,
    ScalarField,
    VectorField,
    advect_upwind,
    convolve,
    integrate,
    laplacian,
    transport_gradient,
)

from conftest import small_grid


def test_index_world_round_trip():
    g = small_grid(17, 0.05)
    for ix in (0, 1, 8, 16):
        for iy in (0, 5, 16):
            p = g.index_to_world(ix, iy)
            assert g.world_to_index(p) == (ix, iy)


def test_world_to_index_nearest_cell():
    g = GridSpec(10, 10, 0.1)
    assert g.world_to_index((0.04, 0.0)) == (0, 0)
    assert g.world_to_index((0.06, 0.0)) == (1, 0)
    # outer half-cell ring still maps to the rim cell
    assert g.world_to_index((-0.049, 0.95)) == (0, 9)


def test_contains_and_clip():
    g = small_grid(10, 0.1)
    xmin, xmax, ymin, ymax = g.bounds
    assert g.contains((xmin, ymin)) and g.contains((xmax, ymax))
    assert not g.contains((xmax + 1e-6, 0.0))
    clipped = g.clip_point((xmax + 3.0, ymin - 3.0))
    assert tuple(clipped) == (xmax, ymin)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(2, 10, 0.1)
    with pytest.raises(ValueError):
        GridSpec(10, 10, 0.0)
    g = small_grid(8, 0.1)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros((8, 7)))


def test_integrate_constant_field():
    g = small_grid(20, 0.25)
    f = ScalarField.full(g, 3.0)
    area = 20 * 20 * 0.25**2
    assert integrate(f) == pytest.approx(3.0 * area, rel=1e-14)


def test_laplacian_of_quadratic_is_constant():
    # f = x^2 + 2 y^2 has laplacian 6 exactly, and the 5-point stencil is
    # exact on quadratics away from the reflected boundary
    g = small_grid(30, 0.1)
    X, Y = g.cell_centers
    f = ScalarField(g, X**2 + 2.0 * Y**2)
    lap = laplacian(f).values
    assert np.allclose(lap[2:-2, 2:-2], 6.0, atol=1e-9)


def test_laplacian_zero_flux_boundary_conserves():
    # with reflected ghosts the laplacian is a closed diffusion operator:
    # its integral over the domain vanishes for any field
    g = small_grid(15, 0.2)
    rng = np.random.default_rng(7)
    f = ScalarField(g, rng.normal(size=g.shape))
    assert abs(integrate(laplacian(f))) < 1e-10


def test_advect_upwind_matches_one_sided_difference():
    g = small_grid(12, 0.5)
    X, Y = g.cell_centers
    f = ScalarField(g, 3.0 * X - 2.0 * Y)
    v = VectorField.constant(g, (1.5, -0.5))
    # interior of a linear ramp: upwind picks the exact slope either way
    out = advect_upwind(f, v).values
    assert np.allclose(out[1:-1, 1:-1], 1.5 * 3.0 + (-0.5) * (-2.0), atol=1e-12)


def test_advect_upwind_direction_switch():
    g = GridSpec(5, 3, 1.0)
    vals = np.zeros((5, 3))
    vals[2, :] = 1.0  # a spike at ix = 2
    f = ScalarField(g, vals)
    plus = advect_upwind(f, VectorField.constant(g, (1.0, 0.0))).values
    minus = advect_upwind(f, VectorField.constant(g, (-1.0, 0.0))).values
    # positive velocity uses the backward difference: spike cell sees +1,
    # downstream cell ix=3 sees -1
    assert plus[2, 1] == pytest.approx(1.0)
    assert plus[3, 1] == pytest.approx(-1.0)
    assert plus[1, 1] == pytest.approx(0.0)
    # negative velocity mirrors the pattern
    assert minus[2, 1] == pytest.approx(1.0)
    assert minus[1, 1] == pytest.approx(-1.0)
    assert minus[3, 1] == pytest.approx(0.0)


def _convolve_bruteforce(vals, sigma, h):
    nx, ny = vals.shape
    out = np.zeros_like(vals)
    for ix in range(nx):
        for iy in range(ny):
            acc = 0.0
            for jx in range(nx):
                for jy in range(ny):
                    d2 = ((ix - jx) ** 2 + (iy - jy) ** 2) * h**2
                    acc += np.exp(-d2 / (2.0 * sigma**2)) * vals[jx, jy]
            out[ix, iy] = acc * h**2
    return out


def test_convolve_matches_double_loop(rng):
    g = small_grid(14, 0.1)
    f = ScalarField(g, rng.random(g.shape))
    got = convolve(f, 0.25).values
    want = _convolve_bruteforce(f.values, 0.25, g.h)
    assert np.allclose(got, want, rtol=1e-7, atol=1e-9)


def test_convolve_rejects_bad_sigma():
    g = small_grid(8, 0.1)
    with pytest.raises(ValueError):
        convolve(ScalarField.zeros(g), 0.0)


def test_transport_gradient_interior_is_centered():
    g = small_grid(16, 0.2)
    rng = np.random.default_rng(3)
    f = ScalarField(g, rng.random(g.shape))
    ax, ay = transport_gradient(f)
    want = (f.values[2:, 1:-1] - f.values[:-2, 1:-1]) / (2 * g.h)
    assert np.allclose(ax[1:-1, 1:-1], want[:, :], atol=1e-13)


def test_transport_gradient_sums_to_zero():
    # the flux form absorbs boundary fluxes so any constant-velocity Euler
    # update conserves total mass exactly
    g = small_grid(11, 0.3)
    rng = np.random.default_rng(5)
    f = ScalarField(g, rng.random(g.shape))
    ax, ay = transport_gradient(f)
    assert abs(ax.sum()) < 1e-12
    assert abs(ay.sum()) < 1e-12


def test_vector_field_max_speed():
    g = small_grid(6, 0.1)
    v = VectorField.constant(g, (3.0, -4.0))
    assert v.max_speed == pytest.approx(5.0)
