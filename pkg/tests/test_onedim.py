import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import dblquad

from bvlab import onedim as od
from bvlab.onedim import Profile1D


def _random_profile(seed, n=161, lo=-0.5, hi=3.6, eps=0.05):
    rng = np.random.default_rng(seed)
    x = np.linspace(-1, 1, n)
    c = rng.normal(size=5)
    v = c[0] + c[1] * x + c[2] * np.sin(3 * x + c[3]) + c[4] * x ** 2
    v = lo + (hi - lo) * (v - v.min()) / max(np.ptp(v), 1e-12)
    return Profile1D((-1, 1), v, eps)


def test_constant_profiles():
    p = Profile1D.sample(lambda x: np.full_like(x, 2 * np.pi), (0, 1), 0.01)
    assert od.f_eps(p) == pytest.approx(0.0, abs=1e-12)
    c = 0.7
    q = Profile1D.sample(lambda x: np.full_like(x, c), (0, 2), 0.01)
    assert od.f_eps(q) == pytest.approx(2 * np.sin(c) ** 2 / (2 * np.pi * 0.01), rel=1e-12)


def test_linear_profile_nonlocal_exact():
    p = Profile1D((0.0, 1.5), 0.8 * np.linspace(0, 1.5, 31), 0.01)
    assert od.nonlocal_energy(p) == pytest.approx(0.8 ** 2 * 1.5 ** 2, rel=1e-12)


def test_nonlocal_against_brute_force():
    x = np.linspace(0, 1, 9)
    v = np.array([0, 0.3, 0.1, 0.9, 1.4, 1.2, 2.0, 2.1, 3.0])
    p = Profile1D((0, 1), v, 0.1)
    f = lambda s, t: ((np.interp(s, x, v) - np.interp(t, x, v)) / (s - t)) ** 2 if s != t else 0.0
    ref = 0.0
    for i in range(8):
        for j in range(8):
            ref += dblquad(f, x[i], x[i + 1], x[j], x[j + 1], epsabs=1e-11, epsrel=1e-11)[0]
    assert od.nonlocal_energy(p) == pytest.approx(ref, rel=1e-7)


def test_uniform_and_general_paths_agree():
    p = _random_profile(3, n=101)
    x = p.nodes.copy()
    x[1:-1] += 1e-7 * np.sin(np.arange(1, len(x) - 1))
    q = Profile1D(p.interval, p.values, p.eps, x)
    assert not q.uniform
    assert od.nonlocal_energy(q) == pytest.approx(od.nonlocal_energy(p), rel=1e-5)


def test_gradient_matches_finite_differences():
    p = _random_profile(5, n=81)
    E, g = od.f_eps_and_gradient(p)
    rng = np.random.default_rng(0)
    d = rng.normal(size=len(p.values))
    h = 1e-6
    fd = (od.f_eps(p.with_values(p.values + h * d), check=False)
          - od.f_eps(p.with_values(p.values - h * d), check=False)) / (2 * h)
    assert g @ d == pytest.approx(fd, rel=1e-6)
    assert E == pytest.approx(od.f_eps(p, check=False))


def test_resolution_check():
    p = Profile1D.sample(np.sin, (0, 1), 0.01, n=11)
    with pytest.raises(od.ResolutionError):
        od.f_eps(p)


def test_peierls_profile_trace():
    eps = 1e-2
    fld, tr = od.peierls_profile(eps, 1.0)
    assert tr(0.0) == pytest.approx(np.pi / 2)
    assert od.peierls_phase(1e8, 0.0, eps) == pytest.approx(0.0, abs=1e-6)
    assert od.peierls_phase(-1e8, 0.0, eps) == pytest.approx(np.pi, abs=1e-6)
    # int sin^2 of the trace over (-R, R) in rescaled units is 2 arctan R
    R = 50.0
    p = Profile1D.sample(lambda x: od.peierls_phase(x, 0.0, 1 / (2 * np.pi)), (-R, R), 1 / (2 * np.pi), h=0.01)
    assert od.anchoring_integral(p) == pytest.approx(2 * np.arctan(R), rel=1e-5)


def test_oracle_values():
    assert od.GAMMA0 == pytest.approx(-4.80985, abs=1e-5)
    assert od.peierls_energy_oracle(1e-3) == pytest.approx(np.pi * np.log(1000) - 4.809854526746569, abs=1e-12)
    assert od.peierls_energy_oracle(1e-3) == pytest.approx(16.8911, abs=5e-4)
    with pytest.raises(ValueError):
        od.peierls_energy_oracle(2.0, 1.0)


def test_exact_integral_matches_mesh():
    eps = 1e-2
    fld, _ = od.peierls_profile(eps, 1.0)
    assert od.halfdisk_energy(fld) == pytest.approx(od.peierls_energy_exact(eps), rel=2e-3)


def test_halfdisk_zero_field():
    m = od.halfdisk_mesh(1.0, h_min=0.05)
    assert od.halfdisk_energy(od.HalfDiskField(m, np.zeros(len(m.nodes)), 0.1)) == 0.0


@given(st.integers(0, 10 ** 6))
def test_trace_inequality(seed):
    rng = np.random.default_rng(seed)
    m = od.halfdisk_mesh(1.0, h_min=0.01, growth=0.2)
    x, y = m.nodes.T
    c = rng.normal(size=4)
    psi = c[0] * x + c[1] * np.sin(2 * x + c[2]) * np.exp(-y) + c[3] * x * y
    fld = od.HalfDiskField(m, psi, 0.05)
    assert od.halfdisk_energy(fld) >= od.f_eps(fld.trace(), check=False) - 1e-9


def test_poisson_extension():
    x = np.linspace(-5, 5, 11)
    assert np.allclose(od.poisson_extension(x, np.full(11, 2.0), [0.3, -7], [0.5, 2.0]), 2.0)
    eps = 0.01
    xs = np.linspace(-20, 20, 40001)
    vals = od.peierls_phase(xs, 0.0, eps)
    X, Y = np.array([0.0, 0.3, -0.5]), np.array([0.05, 0.2, 0.4])
    ext = od.poisson_extension(xs, vals, X, Y, left=np.pi, right=0.0)
    assert np.allclose(ext, od.peierls_phase(X, Y, eps), atol=1e-4)
    with pytest.raises(ValueError):
        od.poisson_extension(xs, vals, [0.0], [0.0])


def test_reflection_has_zero_normal_derivative():
    g = lambda x: np.arctan2(2 * np.pi * 0.05, x)
    out = od.reflection_normal_derivative(g, 0.5)
    assert out["max_radial"] < 1e-3 * max(out["max_tangential"], 1.0)


def test_truncate_examples():
    p = Profile1D.sample(lambda t: np.clip(np.pi * (1 + t) / 2, 0, np.pi), (-1, 1), 0.05)
    assert np.allclose(od.truncate(p, 0).values, p.values)
    q = Profile1D((0, 1), 2 * np.pi * np.linspace(0, 1, 11), 0.05)
    tq = od.truncate(q, 0)
    assert np.allclose(tq(np.linspace(0, 1, 101)), np.minimum(2 * np.pi * np.linspace(0, 1, 101), np.pi))


@given(st.integers(0, 10 ** 6))
def test_truncation_superadditivity(seed):
    p = _random_profile(seed, lo=-2.0, hi=8.0)
    assert od.superadditivity_margin(p)["margin"] >= -1e-8


def test_rearrangement_extremal_and_errors():
    r = od.rearrangement_bound([(0, 0.25)], [(0.75, 1)], (0, 1))
    assert r.lhs == pytest.approx(np.log(9 / 8), abs=1e-12) and r.rhs == pytest.approx(np.log(9 / 8), abs=1e-12)
    inner = od.rearrangement_bound([(0.1, 0.35)], [(0.75, 1)], (0, 1))
    assert inner.lhs > r.lhs and inner.rhs == pytest.approx(r.rhs)
    with pytest.raises(ValueError):
        od.rearrangement_bound([(0, 0.6)], [(0.5, 1)], (0, 1))
    with pytest.raises(ValueError):
        od.rearrangement_bound([(0, 0.5)], [(0.5, 1)], (0, 1))


def _union(rng, lo, hi, k):
    pts = np.sort(rng.uniform(lo, hi, 2 * k))
    return [(pts[2 * i], pts[2 * i + 1]) for i in range(k)]


@given(st.integers(0, 10 ** 6))
def test_rearrangement_inequality(seed):
    rng = np.random.default_rng(seed)
    pts = np.sort(rng.uniform(0, 1, 8))
    segs = [(pts[2 * i], pts[2 * i + 1]) for i in range(4)]
    idx = rng.permutation(4)
    A = [segs[i] for i in idx[:2]]
    B = [segs[i] for i in idx[2:]]
    r = od.rearrangement_bound(A, B, (0, 1))
    assert r.lhs >= r.rhs - 1e-10
    c = sum(b - a for a, b in B) * 0.99
    lhs, rhs = od.rearrangement_bound_fraction(A, B, (0, 1), c)
    assert lhs >= rhs - 1e-10


def test_coarea_examples():
    z = Profile1D((-1, 1), np.zeros(41), 0.05)
    res = od.theta_coarea(z)
    assert np.all(res.theta == 0)
    x = np.linspace(-1, 1, 401)
    step = Profile1D((-1, 1), np.pi * (x < 0), 0.05)
    s = od.theta_coarea(step)
    assert s.monotone and s.margin >= -1e-8
    with pytest.raises(ValueError):
        od.theta_coarea(Profile1D((-1, 1), np.full(5, 4.0), 0.05))


@given(st.integers(0, 10 ** 6))
def test_coarea_inequality(seed):
    p = _random_profile(seed, lo=0.0, hi=np.pi, n=121)
    res = od.theta_coarea(p)
    assert res.monotone
    assert res.margin >= -1e-8


def test_higher_multiplicity():
    one = od.higher_multiplicity_profile(1, 1e-3, 0.5)
    assert od.halfdisk_energy(one) == pytest.approx(np.pi * np.log(0.5 / 1e-3) + od.GAMMA0, rel=0.1)
    cs = [od.higher_multiplicity_constant(od.higher_multiplicity_profile(2, e, 0.5), 2, 0.5) for e in (2e-4, 1e-4)]
    assert abs(cs[0] - cs[1]) < 0.2 * max(abs(cs[0]), 0.1)
    with pytest.raises(ValueError):
        od.higher_multiplicity_profile(2, 0.1, 0.5)


def test_minimize_from_peierls_is_near_stationary():
    eps = 1e-2
    res = od.minimize_f_eps(eps, 1.0, max_iters=1)
    ramp = od.minimize_f_eps(eps, 1.0, max_iters=1, init=lambda x: np.pi * (1 - x) / 2)
    assert res.initial_grad_norm < 0.15 * ramp.initial_grad_norm
    full = od.minimize_f_eps(eps, 1.0)
    assert full.status == "converged"
    assert full.energy <= od.f_eps(Profile1D.sample(lambda x: od.peierls_phase(x, 0, eps), (-1, 1), eps)) + 1e-9
    assert full.excess >= od.GAMMA0 - 3.0
    assert od.fitted_lower_constant([full]) == pytest.approx(-full.excess)


def test_transition_contract():
    with pytest.raises(ValueError):
        od.Transition(left=2.0, right=0.0)
