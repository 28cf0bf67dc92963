import numpy as np
import pytest
from hypothesis import given, strategies as st

from bvlab import renorm as rn
from bvlab.energy import stiffness
from bvlab.geometry import domain_from_spec, make_disk
from bvlab.jacobian import VortexSet, detect_boundary_vortices
from bvlab.lifting import TopologyError
from bvlab.optimizer import MinimizeConfig

ANTI = VortexSet([0.0, np.pi], [1, 1])


def test_gamma0():
    g = rn.gamma0()
    assert g == pytest.approx(-4.80985, abs=1e-5)
    assert g == pytest.approx(np.pi + np.pi * np.log(1 / (4 * np.pi)), rel=1e-14)
    assert g < 0


def test_w_disk_closed_forms():
    assert rn.w_disk(ANTI) == pytest.approx(-2 * np.pi * np.log(2), rel=1e-14)
    assert rn.w_disk(ANTI) == pytest.approx(-4.35517, abs=1e-5)
    for delta in (0.3, 1.0, np.pi / 2, 2.5):
        w = rn.w_disk(VortexSet([0.0, delta], [1, 1]))
        assert w == pytest.approx(-2 * np.pi * np.log(2 * np.sin(delta / 2)), rel=1e-12)
    with pytest.raises(rn.SingularConfigurationError):
        rn.w_disk_points([[1.0, 0.0], [1.0, 0.0]], [1, 1])


def test_w_disk_minimum_at_antipodal():
    d = np.linspace(0.2, 2 * np.pi - 0.2, 2001)
    w = np.array([rn.w_disk(VortexSet([0.0, t], [1, 1])) for t in d])
    dw = np.gradient(w, d)
    crossings = d[np.flatnonzero(np.diff(np.sign(dw)) != 0)]
    assert len(crossings) == 1 and abs(crossings[0] - np.pi) < 5e-3
    assert np.argmin(w) == np.argmin(np.abs(d - np.pi))


@given(st.floats(0, 2 * np.pi), st.floats(0.1, 3.0), st.floats(0.5, 3.0))
def test_w_disk_rotation_and_scaling(rot, delta, R):
    vs = VortexSet([0.3, 0.3 + delta], [1, 1])
    turned = VortexSet([(0.3 + rot) % (2 * np.pi), (0.3 + delta + rot) % (2 * np.pi)], [1, 1])
    assert rn.w_disk(turned) == pytest.approx(rn.w_disk(vs), rel=1e-9, abs=1e-9)
    assert rn.w_disk(vs, R) == pytest.approx(rn.w_disk(vs) - 2 * np.pi * np.log(R), rel=1e-9, abs=1e-9)


def test_harmonic_extension_of_sine():
    d = make_disk(n_r=32, n_theta=128)
    ext = rn.harmonic_extend(d, np.sin(d.theta))
    # the element weights carry the curved-boundary area correction, so linear data is reproduced only
    # to the discretization error
    assert np.max(np.abs(ext.values - d.nodes[:, 1])) < 5e-3
    K = stiffness(d)
    assert ext.values @ (K @ ext.values) == pytest.approx(np.pi, rel=2e-3)
    c = rn.harmonic_extend(d, np.full(len(d.boundary), 0.7))
    assert np.allclose(c.values, 0.7)
    assert c.values @ (K @ c.values) == pytest.approx(0.0, abs=1e-12)


@pytest.fixture(scope="module")
def renorm_disk():
    return make_disk(n_r=64, n_theta=256)


def test_w_numeric_antipodal(renorm_disk):
    r = rn.w_numeric(renorm_disk, ANTI)
    assert r.W == pytest.approx(-2 * np.pi * np.log(2), rel=0.02)
    assert r.converged and len(r.values) == len(r.rhos)
    # intermediates settle toward the limit
    assert r.cauchy[-1] < r.cauchy[0]


def test_w_numeric_quarter_separation(renorm_disk):
    r = rn.w_numeric(renorm_disk, VortexSet([0.0, np.pi / 2], [1, 1]))
    assert r.W == pytest.approx(-np.pi * np.log(2), rel=0.02)


def test_w_numeric_rejects_bad_schedules(renorm_disk):
    with pytest.raises(ValueError):
        rn.w_numeric(renorm_disk, ANTI, rho_schedule=(0.1, 0.05))
    with pytest.raises(ValueError):
        rn.w_numeric(renorm_disk, ANTI, rho_schedule=(0.05, 0.1, 0.2))
    with pytest.raises(ValueError):
        rn.w_numeric(renorm_disk, VortexSet([0.0], [2]))


def test_perturbed_disk_trend():
    ws = []
    for amp in (0.0, 0.02, 0.04):
        d = domain_from_spec({"kind": "fourier", "coeffs": [[amp, 3]]}, n_r=48, n_theta=256)
        ws.append(rn.w_numeric(d, ANTI).W)
    assert ws[0] == pytest.approx(-2 * np.pi * np.log(2), rel=0.02)
    steps = np.abs(np.diff(ws))
    assert np.all(steps < 0.5)
    assert abs(ws[2] - ws[0]) >= abs(ws[1] - ws[0]) - 1e-3


def test_recovery_field_round_trip():
    eps = 1e-2
    vs = VortexSet([0.5, 0.5 + np.pi], [1, 1])
    d = rn.recovery_mesh({"kind": "disk"}, vs, eps, n_theta=128, n_r=32)
    u = rn.recovery_field(d, vs, eps)
    assert np.allclose(np.linalg.norm(u.values, axis=1), 1.0, atol=1e-14)
    got = detect_boundary_vortices(u)
    assert got.degrees == [1, 1]
    assert np.allclose(np.sort(got.positions), np.sort(vs.positions), atol=0.02)


def test_recovery_resolution_error():
    d = make_disk(n_r=16, n_theta=64)
    with pytest.raises(rn.ResolutionError):
        rn.recovery_field(d, ANTI, 1e-4)


def test_split_multiplicities():
    s = rn.split_multiplicities(VortexSet([1.0], [2]), 1e-3)
    assert s.degrees == [1, 1]
    assert abs(s.positions[1] - s.positions[0]) == pytest.approx(1 / np.log(1e3))
    assert rn.split_multiplicities(ANTI, 1e-3) is ANTI


def test_double_vortex_first_order():
    vs = VortexSet([0.0], [2])
    es = []
    eps_list = [1e-2, 1e-3, 1e-4]
    for eps in eps_list:
        d = rn.recovery_mesh({"kind": "disk"}, vs, eps, n_theta=128, n_r=32)
        es.append(rn.energy(rn.recovery_field(d, vs, eps)).total)
    # the split pair sits 1/|log eps| apart, adding 2 pi log|log eps| to the energy
    L = np.abs(np.log(eps_list))
    A, B, _ = rn.fit_log(eps_list, np.array(es) - 2 * np.pi * np.log(L))
    assert A == pytest.approx(2 * np.pi, rel=0.03)
    ratios = np.array(es) / L
    assert np.all(np.abs(ratios / (2 * np.pi) - 1) < 0.1)


def test_fit_log_exact_line():
    eps = [1e-2, 1e-3, 1e-4]
    A, B, res = rn.fit_log(eps, [3 * abs(np.log(e)) - 1 for e in eps])
    assert (A, B) == (pytest.approx(3), pytest.approx(-1))
    assert res < 1e-12
    with pytest.raises(ValueError):
        rn.fit_log(eps[:2], [1, 2])


def test_topology_error_names_eps():
    with pytest.raises(TopologyError, match="eps=0.2"):
        rn.gamma_sweep_minimize({"kind": "disk"}, [0.2, 0.1, 0.05], n_theta=96, n_r=16, init="reflected",
                                cfg=MinimizeConfig(max_iters=1))


def test_recovery_sweep_report_shape():
    rep = rn.gamma_sweep_recovery({"kind": "disk"}, ANTI, [1e-2, 5e-3, 2.5e-3], n_theta=128, n_r=32, workers=2)
    d = rep.to_dict()
    assert set(d["fit"]) == {"A", "B", "residual"}
    assert d["prediction"]["B"] == pytest.approx(-2 * np.pi * np.log(2) + 2 * rn.gamma0())
    assert [r["eps"] for r in d["records"]] == [1e-2, 5e-3, 2.5e-3]
    assert all(r["vortices"]["degrees"] == [1, 1] for r in d["records"])
