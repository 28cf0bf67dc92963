import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvlab.energy import VectorField2D, energy
from bvlab.geometry import make_disk, make_ellipse
from bvlab.jacobian import VortexSet
from bvlab.lifting import (InteriorVortexError, ResolutionError, TopologyError, UnresolvedPhaseError,
                           VortexInCellError, build_polar_grid, bv_limit_lifting, project_to_s1, tangent_lifting,
                           unwrap_phase)


def _unit(d, phi, eps=0.1, eta=0.01):
    return VectorField2D(np.stack([np.cos(phi), np.sin(phi)], 1), d, eps, eta)


def test_unwrap_linear_phase(disk):
    phi = unwrap_phase(_unit(disk, disk.nodes[:, 0]))
    assert np.allclose(phi - phi[0], disk.nodes[:, 0] - disk.nodes[0, 0], atol=1e-12)
    c = unwrap_phase(_unit(disk, np.full(len(disk.nodes), np.pi / 2)))
    assert np.allclose(c, np.pi / 2)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1))
def test_unwrap_recovers_smooth_phase(a, b, c):
    d = make_disk(1.0, 12, 48)
    x, y = d.nodes.T
    phi = a * x + b * y + c * x * y + 10.0
    out = unwrap_phase(_unit(d, phi))
    shift = out - phi
    assert np.allclose(shift, shift[0], atol=1e-9)
    assert abs(shift[0] / (2 * np.pi) - round(shift[0] / (2 * np.pi))) < 1e-9


def test_unwrap_errors():
    d = make_disk(1.0, 12, 48)
    x, y = d.nodes.T
    # a vortex at (0.3, 0.2): nonzero winding in the triangles around it
    with pytest.raises(InteriorVortexError):
        unwrap_phase(_unit(d, np.arctan2(y - 0.2, x - 0.3)))
    with pytest.raises(UnresolvedPhaseError):
        unwrap_phase(_unit(d, 40.0 * x))
    with pytest.raises(ValueError):
        unwrap_phase(VectorField2D(2 * np.ones((len(d.nodes), 2)), d, 0.1, 0.1))


def test_tangent_lifting_disk():
    d = make_disk(1.0, 8, 256)
    lift = tangent_lifting(d)
    assert np.allclose(lift.g, d.theta + np.pi / 2, atol=1e-12)
    assert lift.jump == pytest.approx(-2 * np.pi + 2 * np.pi / 256, abs=1e-12)
    assert lift.curvature_error() < 1e-3
    assert lift.increments.sum() == pytest.approx(0.0, abs=1e-12)


def test_tangent_lifting_ellipse_curvature():
    d = make_ellipse(1.5, 0.8, 8, 1024)
    lift = tangent_lifting(d)
    assert lift.curvature_error() < 1e-3
    assert lift.increments.sum() == pytest.approx(0.0, abs=1e-12)


def test_bv_lifting_closes_up():
    d = make_disk(1.0, 8, 256)
    bl = bv_limit_lifting(d, VortexSet([0.0, np.pi], [1, 1]))
    u = np.stack([np.cos(bl.phi0), np.sin(bl.phi0)], 1)
    assert np.allclose(np.einsum("ij,ij->i", u, d.normal), 0.0, atol=1e-12)
    # the curvature integral 2 pi is cancelled by the two jumps of -pi
    g = tangent_lifting(d).g
    assert (bl.phi0 - g)[-1] == pytest.approx(-2 * np.pi)
    assert 2 * np.pi + sum(h for _, h in bl.jumps) == pytest.approx(0.0)


def test_bv_lifting_contract():
    d = make_disk(1.0, 8, 64)
    with pytest.raises(ValueError):
        bv_limit_lifting(d, _Fake([0.0, 1.0], [2, 0]))
    with pytest.raises(TopologyError):
        bv_limit_lifting(d, _Fake([0.0], [1]))
    single = bv_limit_lifting(d, VortexSet([0.0], [2]))
    assert [h for _, h in single.jumps] == [pytest.approx(-2 * np.pi)]


class _Fake:
    def __init__(self, p, d):
        self.positions, self.degrees = p, d


def test_polar_grid_constant_field():
    d = make_disk(1.0, 60, 360)
    u = VectorField2D(np.tile([1.0, 0.0], (len(d.nodes), 1)), d, 0.2, 0.02)
    g = build_polar_grid(u, 0.75)
    assert g.grid_energy == pytest.approx(0.0, abs=1e-10)
    assert g.satisfies_bound


@given(st.integers(0, 1000))
def test_polar_grid_bound_and_count(seed):
    d = make_disk(1.0, 60, 360)
    rng = np.random.default_rng(seed)
    x, y = d.nodes.T
    c = rng.normal(size=4)
    phi = c[0] * x + c[1] * y + c[2] * x * y
    m = 1 - 0.02 * (1 + np.sin(c[3] + x))
    u = VectorField2D(np.stack([m * np.cos(phi), m * np.sin(phi)], 1), d, 0.2, 0.02)
    g = build_polar_grid(u, 0.75)
    assert g.satisfies_bound
    expected = np.pi * g.R_out ** 2 / g.L ** 2
    assert expected / 2 <= g.n_cells <= 2 * expected


def test_polar_grid_errors():
    d = make_disk(1.0, 20, 80)
    u = VectorField2D(np.tile([1.0, 0.0], (len(d.nodes), 1)), d, 0.2, 1e-4)
    with pytest.raises(ResolutionError):
        build_polar_grid(u, 0.75)
    with pytest.raises(ValueError):
        build_polar_grid(u, 0.4)
    e = make_ellipse(1.2, 0.8, 20, 80)
    with pytest.raises(ValueError):
        build_polar_grid(VectorField2D(np.tile([1.0, 0.0], (len(e.nodes), 1)), e, 0.2, 0.04), 0.75)


def test_projection_of_constant_is_constant():
    d = make_disk(1.0, 40, 240)
    u = VectorField2D(np.tile([1.0, 0.0], (len(d.nodes), 1)), d, 0.2, 0.04)
    U, rep = project_to_s1(u, 0.75)
    assert np.allclose(U.values, [1.0, 0.0], atol=1e-12)
    assert rep.l2_sq == pytest.approx(0.0, abs=1e-20)
    assert rep.nonzero_degrees == 0


def test_projection_unit_length_and_small_error():
    d = make_disk(1.0, 60, 360)
    x, y = d.nodes.T
    phi = 1.5 * x + 0.8 * y ** 2
    m = 1 - 0.03 * 0.5 * (1 + x * y)
    u = VectorField2D(np.stack([m * np.cos(phi), m * np.sin(phi)], 1), d, 0.2, 0.03)
    U, rep = project_to_s1(u, 0.75)
    assert np.max(np.abs(U.modulus - 1)) < 1e-12
    assert rep.l2_sq <= 0.03 ** 1.5 * energy(u).total
    assert rep.solver["status"] == "converged"


def test_projection_refuses_vortex_on_grid():
    d = make_disk(1.0, 40, 240)
    x, y = d.nodes.T
    r = np.hypot(x - 0.4, y)
    z = (x - 0.4 + 1j * y) / np.maximum(r, 1e-12) * np.tanh(r / 0.02)
    u = VectorField2D(np.stack([z.real, z.imag], 1), d, 0.2, 0.04)
    with pytest.raises(VortexInCellError):
        project_to_s1(u, 0.75)
