import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvlab.energy import (VectorField2D, energy, energy_and_gradient, ks_energy, load_field, local_energy,
                          read_field, region_mask, save_field)
from bvlab.geometry import make_disk


def _field(d, f, eps=0.1, eta=0.05):
    return VectorField2D(f(d.nodes), d, eps, eta)


def test_constant_field(fine_disk):
    u = _field(fine_disk, lambda x: np.tile([1.0, 0.0], (len(x), 1)), eps=0.1)
    e = energy(u)
    assert e.dirichlet == pytest.approx(0.0, abs=1e-12) and e.penalty == pytest.approx(0.0, abs=1e-14)
    assert e.anchoring == pytest.approx(1 / (2 * 0.1), rel=1e-10)


def test_zero_field(fine_disk):
    u = _field(fine_disk, lambda x: np.zeros_like(x), eta=0.1)
    e = energy(u)
    assert e.dirichlet == pytest.approx(0.0, abs=1e-12) and e.anchoring == 0
    assert e.penalty == pytest.approx(np.pi / 0.1 ** 2, rel=1e-10)


def test_identity_field_converges():
    errs = []
    for n in (16, 32, 64):
        d = make_disk(1.0, n, 4 * n)
        e = energy(_field(d, lambda x: x.copy(), eps=0.1, eta=0.5))
        assert e.dirichlet == pytest.approx(2 * np.pi, rel=1e-10)
        assert e.anchoring == pytest.approx(1 / 0.1, rel=1e-10)
        errs.append(abs(e.penalty - np.pi / (3 * 0.25)))
    assert errs[2] < errs[1] < errs[0] and errs[2] < 1e-2


def test_local_energy_additive_and_half_disk(fine_disk):
    u = _field(fine_disk, lambda x: x.copy(), eps=0.1, eta=0.5)
    full = energy(u)
    assert local_energy(u, np.ones(len(fine_disk.triangles), bool)).total == pytest.approx(full.total)
    right = region_mask(fine_disk, lambda x, y: x > 0)
    a, b = local_energy(u, right), local_energy(u, ~right)
    assert (a + b).total == pytest.approx(full.total, rel=1e-12)
    assert a.dirichlet == pytest.approx(np.pi, rel=1e-6)
    assert a.anchoring == pytest.approx(1 / (2 * 0.1), rel=2e-3)
    empty = local_energy(u, np.zeros(len(fine_disk.triangles), bool))
    assert empty.total == 0.0


def test_gradient_zero_for_constant_interior(disk):
    u = _field(disk, lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    _, g = energy_and_gradient(u)
    interior = np.setdiff1d(np.arange(len(disk.nodes)), disk.boundary)
    assert np.max(np.abs(g[interior])) < 1e-12


def test_penalty_gradient_vanishes_on_unit_fields(disk, rng):
    phi = rng.normal(size=len(disk.nodes))
    u = VectorField2D(np.stack([np.cos(phi), np.sin(phi)], 1), disk, 0.1, 0.05)
    _, g_full = energy_and_gradient(u)
    _, g_big = energy_and_gradient(u.with_values(u.values, eta=50.0))
    assert np.allclose(g_full, g_big, atol=1e-9)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    d = make_disk(1.0, 6, 24)
    rng = np.random.default_rng(seed)
    u = VectorField2D(rng.normal(size=(len(d.nodes), 2)), d, 0.2, 0.5)
    _, g = energy_and_gradient(u)
    delta = rng.normal(size=u.values.shape)
    h = 1e-6
    fd = (energy(u.with_values(u.values + h * delta)).total - energy(u.with_values(u.values - h * delta)).total) / (2 * h)
    an = float(np.sum(g * delta))
    assert an == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_ks_energy_constant_and_consistency(fine_disk):
    d = fine_disk
    c = 0.3
    val = ks_energy(np.full(len(d.nodes), c), d, 0.1)
    from bvlab.lifting import tangent_lifting
    g = tangent_lifting(d).g
    ref = float(d.boundary_weights @ np.sin(c - g) ** 2) / (2 * np.pi * 0.1)
    assert val == pytest.approx(ref, rel=1e-12)
    phi = 0.7 * d.nodes[:, 0] + 0.2 * d.nodes[:, 1] ** 2
    u = VectorField2D(np.stack([np.cos(phi), np.sin(phi)], 1), d, 0.1, 0.01)
    assert ks_energy(phi, d, 0.1) == pytest.approx(energy(u).total, rel=1e-3)


def test_invalid_fields(disk):
    with pytest.raises(ValueError):
        VectorField2D(np.zeros((3, 2)), disk, 0.1, 0.1)
    with pytest.raises(ValueError):
        VectorField2D(np.full((len(disk.nodes), 2), np.nan), disk, 0.1, 0.1)
    with pytest.raises(ValueError):
        VectorField2D(np.zeros((len(disk.nodes), 2)), disk, 0.0, 0.1)


def test_snapshot_round_trip(disk, tmp_path, rng):
    u = VectorField2D(rng.normal(size=(len(disk.nodes), 2)), disk, 0.1, 0.01)
    p = tmp_path / "f.csv"
    save_field(u, p)
    v = load_field(p, disk)
    w = read_field(p)
    assert np.array_equal(u.values, v.values) and np.array_equal(u.values, w.values)
    assert w.domain.hash() == disk.hash() and w.eps == 0.1
    with pytest.raises(ValueError):
        load_field(p, make_disk(1.0, 8, 32))
