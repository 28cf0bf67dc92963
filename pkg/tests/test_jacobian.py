import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvlab.energy import VectorField2D, l2_norm
from bvlab.geometry import make_disk
from bvlab.jacobian import TestDictionary as Dictionary
from bvlab.jacobian import (MultiplicityError, UnresolvedCoreError, VortexSet,
                            boundary_line_pairing, build_escaping_vortex, default_dictionary, detect_boundary_vortices,
                            dual_norm, escaping_vortex_domain, interior_jacobian, jacobian_distance, limit_jacobian,
                            pair_boundary, pair_global, pair_interior, pairings,
                            stability_check_global, stability_check_interior)
from bvlab.lifting import TopologyError
from bvlab.renorm import recovery_field, recovery_mesh


def _linear(d, A):
    return VectorField2D(d.nodes @ np.asarray(A, float).T, d, 0.1, 0.01)


def test_interior_jacobian_linear_maps(disk):
    assert np.allclose(interior_jacobian(_linear(disk, np.eye(2))), 1.0)
    assert np.allclose(interior_jacobian(_linear(disk, [[1, 0], [0, -1]])), -1.0)
    c = VectorField2D(np.tile([0.3, 0.4], (len(disk.nodes), 1)), disk, 0.1, 0.01)
    assert np.allclose(interior_jacobian(c), 0.0)


@given(st.integers(0, 10 ** 6))
def test_global_pairing_with_constant_vanishes(seed):
    d = make_disk(1.0, 8, 32)
    u = VectorField2D(np.random.default_rng(seed).normal(size=(len(d.nodes), 2)), d, 0.1, 0.01)
    scale = np.sum(u.values ** 2)
    assert abs(pair_global(u, np.ones(len(d.nodes)))) <= 1e-10 * scale


def test_identity_pairings_converge():
    errs = []
    for n in (16, 32):
        d = make_disk(1.0, n, 4 * n)
        u = _linear(d, np.eye(2))
        q = 0.5 * (d.nodes ** 2).sum(axis=1)
        one = np.ones(len(d.nodes))
        g, i, b = pair_global(u, q), pair_interior(u, q), pair_boundary(u, q)
        assert g == pytest.approx(i + b, abs=1e-14)
        errs.append([abs(g + np.pi / 2), abs(i - np.pi / 2), abs(b + np.pi)])
        assert pair_boundary(u, one) == pytest.approx(-2 * np.pi, rel=5e-3)
    errs = np.array(errs)
    # second-order quadrature: halving the mesh at least halves the error
    assert np.all(errs[1] <= 0.5 * errs[0])


def test_global_equals_twice_interior_for_vanishing_zeta(fine_disk):
    d = fine_disk
    u = _linear(d, np.eye(2))
    zeta = 1.0 - (d.nodes ** 2).sum(axis=1)
    assert pair_global(u, zeta) == pytest.approx(2 * np.sum(zeta[d.triangles].mean(1) * d.straight_areas), rel=1e-3)
    assert pair_global(u, zeta) == pytest.approx(pair_interior(u, zeta), rel=1e-3)


def test_boundary_pairing_of_unit_field_is_tangential_derivative():
    d = make_disk(1.0, 48, 192)
    x, y = d.nodes.T
    phi = 0.8 * x + 0.5 * x * y
    u = VectorField2D(np.stack([np.cos(phi), np.sin(phi)], 1), d, 0.1, 0.01)
    zeta = 1.0 + y
    # -int d_tau phi zeta ds with the exact tangential derivative on the unit circle
    t = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    X, Y = np.cos(t), np.sin(t)
    exact = -np.mean((-0.8 * Y + 0.5 * (X * X - Y * Y)) * (1 + Y)) * 2 * np.pi
    assert pair_boundary(u, zeta) == pytest.approx(exact, rel=1e-3)
    assert boundary_line_pairing(u, zeta) == pytest.approx(exact, rel=1e-3)


def test_dual_norm_basics(disk):
    u = _linear(disk, np.eye(2))
    D = default_dictionary(disk)
    assert jacobian_distance(u, u, D) == 0.0
    with pytest.raises(ValueError):
        dual_norm([])
    with pytest.raises(ValueError):
        dual_norm(lambda e: 0.0, Dictionary())
    small = Dictionary(D.entries[:1])
    assert dual_norm(lambda e: pair_global(u, e), small) <= dual_norm(lambda e: pair_global(u, e), D)


def test_dictionary_is_lipschitz_one(disk):
    from bvlab.lifting import mesh_edges

    D = default_dictionary(disk)
    assert len(D) > 20
    ed = mesh_edges(disk)
    length = np.hypot(*(disk.nodes[ed[:, 0]] - disk.nodes[ed[:, 1]]).T)
    for e in D:
        assert e.lip <= 1.0
        # entries sample Lipschitz-1 functions at the nodes (distance via a sampled boundary)
        slope = np.abs(e.values[ed[:, 0]] - e.values[ed[:, 1]]) / length
        assert slope.max() <= 1.0 + 1e-4
        if e.vanishes_on_boundary:
            assert np.all(e.values[disk.boundary] == 0)


def test_pairings_table(disk):
    u = _linear(disk, np.eye(2))
    P = pairings(u, default_dictionary(disk))
    rows = P.to_rows()
    assert {"zeta", "global", "interior", "boundary"} <= set(rows[0])
    assert np.allclose(P.boundary, P.global_ - P.interior)


def test_limit_jacobian_mass(disk):
    m = limit_jacobian(disk, VortexSet([0.0, np.pi], [1, 1]))
    assert m.total_mass == pytest.approx(-2 * np.pi + 2 * np.pi, abs=1e-12)


def _smooth_pair(d, seed):
    rng = np.random.default_rng(seed)
    x, y = d.nodes.T
    c = rng.normal(size=(2, 6))
    basis = np.stack([np.ones_like(x), x, y, x * y, x * x, np.sin(2 * y)], 0)
    u = np.stack([c[0] @ basis, c[1] @ basis], 1)
    v = u + 0.3 * rng.normal() * np.stack([np.cos(3 * x + y), np.sin(x - 2 * y)], 1)
    return VectorField2D(u, d, 0.1, 0.01), VectorField2D(v, d, 0.1, 0.01)


@given(st.integers(0, 10 ** 6))
def test_interior_stability_inequality(seed):
    d = make_disk(1.0, 10, 40)
    u, v = _smooth_pair(d, seed)
    rep = stability_check_interior(u, v, default_dictionary(d, 8, 3))
    assert rep["ok"], rep["witness"]


def test_stability_identical_and_shifted(disk):
    u, _ = _smooth_pair(disk, 1)
    D = default_dictionary(disk, 8, 3)
    rep = stability_check_interior(u, u, D)
    assert rep["max_ratio"] == 0.0 and rep["l2"] == 0.0
    w = u.with_values(u.values + np.array([0.5, -0.2]))
    r2 = stability_check_interior(u, w, D)
    assert r2["l2_mean_removed"] == pytest.approx(0.0, abs=1e-12)
    assert r2["rows"][0]["lhs"] == pytest.approx(0.0, abs=1e-10)


def test_global_stability(disk):
    phi = disk.nodes[:, 0]
    u = VectorField2D(np.stack([np.cos(phi), np.sin(phi)], 1), disk, 0.1, 0.01)
    D = default_dictionary(disk, 8, 3)
    rep = stability_check_global([(u, u)], D)
    assert rep["rows"][0]["lhs"] == 0.0 and rep["rows"][0]["t"] == 0.0
    big = u.with_values(2 * u.values)
    with pytest.raises(ValueError):
        stability_check_global([(u, big)], D)


def test_vortex_set_contract():
    vs = VortexSet.parse("0:+1,pi:+1")
    assert vs.positions == [0.0, pytest.approx(np.pi)] and vs.degrees == [1, 1]
    with pytest.raises(ValueError):
        VortexSet([0.0, 1.0], [2, 0])
    with pytest.raises(TopologyError):
        VortexSet([0.0], [1])
    assert VortexSet([0.0], [2]).N == 1


def test_detection_round_trip():
    vs = VortexSet([0.4, 0.4 + np.pi], [1, 1])
    dom = recovery_mesh({"kind": "disk"}, vs, 1e-2, n_theta=128, n_r=16)
    u = recovery_field(dom, vs, 1e-2)
    got = detect_boundary_vortices(u)
    assert got.degrees == [1, 1]
    assert np.allclose(sorted(got.positions), sorted(vs.positions), atol=1e-2)


def test_detection_errors(disk):
    # constant field: relative phase winds by -2 pi, read as two unit vortices where u is normal
    c = VectorField2D(np.tile([1.0, 0.0], (len(disk.nodes), 1)), disk, 0.1, 0.01)
    vs = detect_boundary_vortices(c)
    assert vs.degrees == [1, 1]
    assert np.allclose(np.sort(np.cos(vs.positions)), [-1, 1], atol=1e-3)
    z = c.with_values(np.zeros_like(c.values))
    with pytest.raises(UnresolvedCoreError):
        detect_boundary_vortices(z)
    # the tangent field has no relative winding at all
    t = c.with_values(np.stack([-disk.nodes[:, 1], disk.nodes[:, 0]], 1))
    with pytest.raises(TopologyError):
        detect_boundary_vortices(t)


def test_detection_topology_error_carries_dump(disk):
    # relative phase makes one +pi step only: a single half-degree-like event summing to 1
    t = disk.theta
    g = t + np.pi / 2
    rel = -np.pi * (t > np.pi)
    rel = rel + (t / (2 * np.pi)) * np.pi
    ph = np.zeros(len(disk.nodes))
    ph[disk.boundary] = g + rel
    vals = np.stack([np.cos(ph), np.sin(ph)], 1)
    u = VectorField2D(vals, disk, 0.1, 0.01)
    with pytest.raises((TopologyError, MultiplicityError)) as exc:
        detect_boundary_vortices(u)
    if isinstance(exc.value, TopologyError) and hasattr(exc.value, "dump"):
        assert "degrees" in exc.value.dump


@pytest.mark.parametrize("eps", [0.04, 0.02])
def test_escaping_vortex_fixture(eps):
    dom = escaping_vortex_domain(eps, refine=2.0)
    u = build_escaping_vortex(eps, dom)
    mass = pair_boundary(u, np.ones(len(dom.nodes)))
    assert mass == pytest.approx(2 * np.pi, rel=0.02)
    C = l2_norm(dom, u.values - np.array([1.0, 0.0])) ** 2 / eps ** 2
    assert 0.01 < C < 10.0


def test_escaping_vortex_argument_check():
    with pytest.raises(ValueError):
        build_escaping_vortex(0.3)
