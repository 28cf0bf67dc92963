"""Renormalized energy of boundary vortices, recovery fields and energy sweeps."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from .energy import EnergyBreakdown, VectorField2D, energy, local_energy, stiffness
from .geometry import CircleCurve, Domain, TWO_PI, graded_rho, graded_theta, domain_from_spec
from .jacobian import VortexSet, detect_boundary_vortices, angular_separation
from .lifting import BVLimitLifting, bv_limit_lifting, tangent_lifting

log = logging.getLogger(__name__)


def gamma0() -> float:
    """Core constant pi (1 - log 4 pi) = pi + pi log(1 / 4 pi)."""
    return float(np.pi * (1.0 - np.log(4.0 * np.pi)))


class SingularConfigurationError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


def w_disk_points(points, degrees) -> float:
    """-2 pi sum_{k<j} d_k d_j log|a_k - a_j| for points on a circle."""
    p = np.asarray(points, dtype=float)
    d = np.asarray(degrees, dtype=float)
    w = 0.0
    for k in range(len(p)):
        for j in range(k + 1, len(p)):
            r = np.hypot(*(p[k] - p[j]))
            if r == 0.0:
                raise SingularConfigurationError("coincident vortices")
            w -= TWO_PI * d[k] * d[j] * np.log(r)
    return float(w)


def w_disk(vortices: VortexSet, R: float = 1.0) -> float:
    """Renormalized energy of vortices at angles ``positions`` on the circle of radius R."""
    if any(abs(d) != 1 for d in vortices.degrees):
        raise ValueError("the closed form needs multiplicities +-1")
    t = np.asarray(vortices.positions)
    pts = R * np.stack([np.cos(t), np.sin(t)], axis=1)
    return w_disk_points(pts, vortices.degrees)


# ---------------------------------------------------------------------------
# singular part: angle functions about boundary points

@dataclass
class _Pole:
    a: np.ndarray       # boundary point
    cut: np.ndarray     # outward direction of the branch cut
    nu: np.ndarray      # outward normal (displacement direction)
    d: int
    t: float


def _poles(domain: Domain, vortices) -> list:
    out = []
    for t, dj in zip(vortices.positions, vortices.degrees):
        p = domain.curve.point(np.array([t]))[0]
        a = domain.center + p
        cut = p / np.hypot(*p)
        d1 = domain.curve.d1(np.array([t]))[0]
        tau = d1 / np.hypot(*d1)
        out.append(_Pole(a, cut, np.array([tau[1], -tau[0]]), int(dj), float(t)))
    return out


def _angle(x, pole: _Pole, shift=0.0):
    """arg((x - a - shift nu) conj(-cut)) + pi/2, which takes values in (0, pi) along a flat boundary."""
    p = pole.a[None, :] + np.asarray(shift)[..., None] * pole.nu[None, :]
    z = (x[:, 0] - p[:, 0]) + 1j * (x[:, 1] - p[:, 1])
    c = -(pole.cut[0] + 1j * pole.cut[1])
    return np.angle(z * np.conj(c)) + 0.5 * np.pi


def _angle_grad(x, pole: _Pole):
    dx = x - pole.a[None, :]
    r2 = (dx ** 2).sum(axis=1)
    return np.stack([-dx[:, 1], dx[:, 0]], axis=1) / r2[:, None]


def singular_phase(x, poles) -> np.ndarray:
    return sum(p.d * _angle(x, p) for p in poles)


def singular_grad(x, poles) -> np.ndarray:
    return sum(p.d * _angle_grad(x, p) for p in poles)


@dataclass
class HarmonicExtension:
    """phi* = sum_j d_j Theta_j + h with h discrete harmonic."""

    domain: Domain
    poles: list
    h: np.ndarray
    values: np.ndarray
    lifting: BVLimitLifting | None

    def boundary_h(self, t) -> np.ndarray:
        """Exact boundary values of the regular part at curve parameters t."""
        t = np.atleast_1d(t)
        x = self.domain.boundary_point(t)
        if self.lifting is None:
            return self.domain.interpolate(self.h, x)
        res = self.lifting.at(self.domain, t) - singular_phase(x, self.poles)
        ref = np.interp(t, np.append(self.domain.theta, TWO_PI),
                        np.append(self.h[self.domain.boundary], self.h[self.domain.boundary][0]))
        return res + TWO_PI * np.rint((ref - res) / TWO_PI)


def harmonic_extend(domain: Domain, phi0, vortices: VortexSet | None = None) -> HarmonicExtension:
    """Harmonic extension of boundary data.

    ``phi0`` is a BVLimitLifting (vortices are read off its jumps) or an
    array of boundary-node values for vortex-free data.
    """
    K = stiffness(domain).tocsr()
    b = domain.boundary
    xb = domain.nodes[b]
    if isinstance(phi0, BVLimitLifting):
        if vortices is None:
            vortices = VortexSet([t for t, _ in phi0.jumps], [int(round(-h / np.pi)) for _, h in phi0.jumps])
        poles = _poles(domain, vortices)
        data = phi0.phi0 - singular_phase(xb, poles)
        # nodes sitting on a vortex: use the mean of the neighbours
        for p in poles:
            hit = np.flatnonzero(np.hypot(*(xb - p.a).T) < 1e-12)
            for k in hit:
                data[k] = np.nan
        nan = np.isnan(data)
        if nan.any():
            idx = np.arange(len(data))
            good = ~nan
            data[nan] = np.interp(idx[nan], idx[good], np.unwrap(data[good]), period=len(data))
        data = np.unwrap(data)
        if abs(np.angle(np.exp(1j * (data[0] - data[-1]))) - (data[0] - data[-1])) > 1e-9:
            data[:] = np.unwrap(data)
        lift = phi0
    else:
        poles = []
        data = np.asarray(phi0, dtype=float)
        if data.shape != b.shape:
            raise ValueError("boundary data must have one value per boundary node")
        lift = None
    n = len(domain.nodes)
    interior = np.setdiff1d(np.arange(n), b)
    h = np.zeros(n)
    h[b] = data
    A = K[interior][:, interior].tocsc()
    rhs = -K[interior][:, b] @ data
    sol = spsolve(A, rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("harmonic extension solve failed")
    h[interior] = sol
    vals = h + (singular_phase(domain.nodes, poles) if poles else 0.0)
    if poles:
        # the singular part is undefined at the vortex nodes themselves
        for p in poles:
            hit = np.hypot(*(domain.nodes - p.a).T) < 1e-12
            vals[hit] = h[hit] + sum(q.d * _angle(domain.nodes[hit], q, 1e-12) for q in poles)
    return HarmonicExtension(domain, poles, h, vals, lift)


# ---------------------------------------------------------------------------
# renormalized energy by singularity splitting

@dataclass
class RenormResult:
    W: float
    rhos: list
    values: list
    fit_residual: float
    cauchy: list
    converged: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _circle_exit(domain: Domain, pole: _Pole, rho: float):
    """Curve parameters where the circle of radius rho about the pole leaves the boundary, and the
    angular range of that circle lying inside the domain."""
    c = domain.center

    def dist(t):
        return np.hypot(*(domain.boundary_point(t)[0] - pole.a)) - rho

    # walk away from t_j until the distance exceeds rho
    def bracket(sign):
        step = rho / max(np.hypot(*domain.curve.d1(np.array([pole.t]))[0]), 1e-12)
        lo = pole.t
        hi = pole.t + sign * step
        while dist(hi) < 0:
            lo, hi = hi, hi + sign * step
        return brentq(dist, min(lo, hi), max(lo, hi), xtol=1e-15) if sign > 0 else brentq(dist, hi, lo, xtol=1e-15)

    t_plus = bracket(+1)
    t_minus = bracket(-1)
    xp = domain.boundary_point(t_plus)[0] - pole.a
    xm = domain.boundary_point(t_minus)[0] - pole.a
    w_in = np.arctan2(-pole.nu[1], -pole.nu[0])
    wp = w_in + np.angle(np.exp(1j * (np.arctan2(xp[1], xp[0]) - w_in)))
    wm = w_in + np.angle(np.exp(1j * (np.arctan2(xm[1], xm[0]) - w_in)))
    return t_minus, t_plus, min(wp, wm), max(wp, wm)


def _renorm_at(ext: HarmonicExtension, rho: float, quad_opts) -> float:
    d = ext.domain
    poles = ext.poles
    ex = [_circle_exit(d, p, rho) for p in poles]

    def bd_integrand(kind):
        def f(t):
            x = d.boundary_point(np.array([t]))
            d1 = d.curve.d1(np.array([t]))[0]
            sp_ = np.hypot(*d1)
            nu = np.array([d1[1], -d1[0]]) / sp_
            gS = singular_grad(x, poles)[0] @ nu
            if kind == "S":
                val = singular_phase(x, poles)[0]
            else:
                val = ext.boundary_h(np.array([t]))[0]
            return val * gS * sp_
        return f

    # boundary pieces between consecutive excluded windows
    wins = sorted([(tm % TWO_PI, tp % TWO_PI) for tm, tp, _, _ in ex])
    pieces = []
    for k in range(len(wins)):
        a = wins[k][1]
        b = wins[(k + 1) % len(wins)][0]
        if b <= a:
            b += TWO_PI
        pieces.append((a, b))
    IS = ISh = 0.0
    for a, b in pieces:
        # geometric breakpoints toward both ends, where the integrand behaves like 1/t
        m = 0.5 * (a + b)
        half = 0.5 * (b - a)
        offs = half * np.geomspace(1e-6, 1.0, 12)[:-1]
        pts = np.sort(np.concatenate([a + offs, b - offs]))
        pts = pts[(pts > a) & (pts < b)]
        IS += quad(bd_integrand("S"), a, b, points=pts, **quad_opts)[0]
        ISh += quad(bd_integrand("h"), a, b, points=pts, **quad_opts)[0]
    # arcs of the small circles inside the domain (normal points toward the vortex)
    for p, (_, _, w0, w1) in zip(poles, ex):
        def arc(w, kind, p=p):
            e = np.array([np.cos(w), np.sin(w)])
            x = (p.a + rho * e)[None, :]
            gS = singular_grad(x, poles)[0] @ (-e)
            val = singular_phase(x, poles)[0] if kind == "S" else d.interpolate(ext.h, x)[0]
            return val * gS * rho
        IS += quad(arc, w0, w1, args=("S",), **quad_opts)[0]
        ISh += quad(arc, w0, w1, args=("h",), **quad_opts)[0]
    # Dirichlet energy of the regular part outside the small disks
    cen = d.nodes[d.triangles].mean(axis=1)
    keep = np.ones(len(cen), dtype=bool)
    for p in poles:
        keep &= np.hypot(*(cen - p.a).T) > rho
    from .energy import cell_gradients
    gh = cell_gradients(d, ext.h)
    Ih = float(np.sum(d.weights[keep] * (gh[keep] ** 2).sum(axis=1)))
    N = sum(abs(p.d) for p in poles)
    return IS + 2.0 * ISh + Ih - N * np.pi * np.log(1.0 / rho)


def w_numeric(domain: Domain, vortices: VortexSet, rho_schedule=(0.1, 0.05, 0.025, 0.0125, 0.00625),
              cauchy_tol: float = 0.05, ext: HarmonicExtension | None = None) -> RenormResult:
    """lim_{rho -> 0} int_{Omega minus balls} |grad phi*|^2 - N pi log(1/rho), extrapolated linearly in rho."""
    if any(abs(d) != 1 for d in vortices.degrees):
        raise ValueError("w_numeric needs multiplicities +-1")
    rhos = [float(r) for r in rho_schedule]
    if len(rhos) < 3 or np.any(np.diff(rhos) >= 0):
        raise ValueError("rho schedule must be decreasing with at least three entries")
    if ext is None:
        ext = harmonic_extend(domain, bv_limit_lifting(domain, vortices), vortices)
    pts = [p.a for p in ext.poles]
    sep = min((np.hypot(*(a - b)) for i, a in enumerate(pts) for b in pts[i + 1:]), default=np.inf)
    if rhos[0] >= 0.5 * sep:
        raise ValueError("largest rho must be below half the vortex separation")
    opts = dict(limit=400, epsabs=1e-11, epsrel=1e-11)
    with warnings.catch_warnings():
        # the interpolated regular part is only piecewise smooth on the inner arcs
        warnings.simplefilter("ignore", IntegrationWarning)
        vals = [_renorm_at(ext, r, opts) for r in rhos]
    x = np.array(rhos[-3:])
    y = np.array(vals[-3:])
    slope, W = np.polyfit(x, y, 1)
    resid = float(np.max(np.abs(np.polyval([slope, W], x) - y)))
    cauchy = [abs(b - a) for a, b in zip(vals[:-1], vals[1:])]
    ok = cauchy[-1] <= cauchy_tol * max(1.0, abs(W))
    if not ok:
        raise ResolutionError(f"renormalized energy intermediates are not settling: {vals}")
    return RenormResult(float(W), rhos, [float(v) for v in vals], resid, cauchy, bool(ok))


# ---------------------------------------------------------------------------
# recovery fields

def patch_cutoff(r, r_patch):
    """1 near the vortex, decaying linearly to 0 at r_patch (clip((R - r)/R^2, 0, 1))."""
    return np.clip((r_patch - r) / r_patch ** 2, 0.0, 1.0)


def split_multiplicities(vortices: VortexSet, eps: float, domain: Domain | None = None) -> VortexSet:
    """Replace each vortex of multiplicity d (|d| > 1) by |d| unit vortices a distance 1/|log eps| apart."""
    if all(abs(d) == 1 for d in vortices.degrees):
        return vortices
    step = 1.0 / abs(np.log(eps))
    pos, deg = [], []
    for t, d in zip(vortices.positions, vortices.degrees):
        k = np.arange(abs(d)) - 0.5 * (abs(d) - 1)
        if domain is not None:
            ts = t + k * step / float(domain.curve.speed(np.array([t]))[0])
        else:
            ts = t + k * step
        pos += list(np.mod(ts, TWO_PI))
        deg += [int(np.sign(d))] * abs(d)
    return VortexSet(pos, deg)


def recovery_phase(domain: Domain, vortices: VortexSet, eps: float, r_patch: float | None = None,
                   ext: HarmonicExtension | None = None) -> np.ndarray:
    """Nodal phase: h + sum_j d_j Theta_j with each singularity pushed outside by 2 pi eps inside its patch.

    Vortices of higher multiplicity are first split into unit vortices.
    """
    r_patch = 10.0 * np.sqrt(eps) if r_patch is None else float(r_patch)
    vortices = split_multiplicities(vortices, eps, domain)
    if ext is None:
        ext = harmonic_extend(domain, bv_limit_lifting(domain, vortices), vortices)
    x = domain.nodes
    psi = ext.h.copy()
    for p in ext.poles:
        r = np.hypot(*(x - p.a).T)
        shift = TWO_PI * eps * patch_cutoff(r, r_patch)
        psi += p.d * _angle(x, p, shift)
    return psi


def recovery_field(domain: Domain, vortices: VortexSet, eps: float, r_patch: float | None = None,
                   eta: float | None = None, ext: HarmonicExtension | None = None) -> VectorField2D:
    """Unit field exp(i psi) following the harmonic extension away from the vortices and the
    half-plane core profile near them."""
    r_patch = 10.0 * np.sqrt(eps) if r_patch is None else float(r_patch)
    vortices = split_multiplicities(vortices, eps, domain)
    # mesh spacing near each vortex must resolve the patch
    b = domain.nodes[domain.boundary]
    for t in vortices.positions:
        a = domain.boundary_point(t)[0]
        near = np.sort(np.hypot(*(b - a).T))[1]
        if r_patch < 2.0 * near:
            raise ResolutionError(f"patch radius {r_patch:.3g} below the mesh spacing {near:.3g}")
    psi = recovery_phase(domain, vortices, eps, r_patch, ext)
    return VectorField2D(np.stack([np.cos(psi), np.sin(psi)], axis=1), domain, eps, eps ** 3 if eta is None else eta)


def recovery_mesh(spec: dict, vortices: VortexSet, eps: float, n_theta: int = 256, n_r: int = 64,
                  resolution: float = 8.0, growth: float = 0.05) -> Domain:
    """Mesh graded toward the vortex positions and the boundary with spacing eps / resolution."""
    R = float(spec.get("radius", 1.0))
    h = eps / resolution
    vortices = split_multiplicities(vortices, eps)
    theta = graded_theta(n_theta, focus=list(vortices.positions), h_min=h / R, growth=growth)
    rho = graded_rho(n_r, h_min=h / R, growth=growth)
    return domain_from_spec(spec, n_r=len(rho) - 1, n_theta=len(theta), theta=theta, rho=rho)


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRecord:
    eps: float
    eta: float
    energy: EnergyBreakdown
    vortices: VortexSet | None
    separation: float | None
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "eta": self.eta, "energy": self.energy.to_dict(),
                "vortices": None if self.vortices is None else self.vortices.to_dict(),
                "separation": self.separation, **self.detail}


@dataclass
class GammaReport:
    mode: str
    records: list
    A: float
    B: float
    fit_residual: float
    A_pred: float
    B_pred: float
    W: float
    N: int
    penalty_record: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "records": [r.to_dict() for r in self.records],
                "fit": {"A": self.A, "B": self.B, "residual": self.fit_residual},
                "prediction": {"A": self.A_pred, "B": self.B_pred, "W": self.W, "N": self.N, "gamma0": gamma0()},
                "penalty": self.penalty_record, **{k: v for k, v in self.extra.items() if k != "fields"}}


def fit_log(eps_list, energies):
    """Least-squares fit E = A |log eps| + B; returns (A, B, max residual)."""
    x = np.abs(np.log(np.asarray(eps_list, dtype=float)))
    y = np.asarray(energies, dtype=float)
    if len(x) < 3:
        raise ValueError("the fit needs at least three eps values")
    A, B = np.polyfit(x, y, 1)
    return float(A), float(B), float(np.max(np.abs(A * x + B - y)))


def renormalized_energy(domain: Domain, vortices: VortexSet, spec: dict | None = None) -> float:
    if isinstance(domain.curve, CircleCurve) and all(abs(d) == 1 for d in vortices.degrees):
        return w_disk(vortices, domain.curve.radius)
    if any(abs(d) != 1 for d in vortices.degrees):
        return float("nan")
    return w_numeric(domain, vortices).W


def _detect(u, eps):
    try:
        return detect_boundary_vortices(u)
    except ValueError as exc:
        raise type(exc)(f"at eps={eps:g}: {exc}") from exc


def _penalty_record(records) -> dict:
    pa = [r.energy.penalty + r.energy.anchoring for r in records]
    ref = pa[0] if pa and pa[0] > 0 else 1.0
    ratios = [p / ref for p in pa]
    return {"penalty_plus_anchoring": pa, "ratio_to_coarsest": ratios, "max_ratio": max(ratios, default=0.0)}


def gamma_sweep_recovery(spec: dict, vortices: VortexSet, eps_list, eta_exponent: float = 3.0,
                         n_theta: int = 256, n_r: int = 64, resolution: float = 8.0, growth: float = 0.05,
                         r_patch_factor: float = 10.0, detect: bool = True, workers: int = 1) -> GammaReport:
    """Energies of recovery fields over eps; the eps evaluations run on ``workers`` threads."""
    eps_list = [float(e) for e in eps_list]

    def one(eps):
        dom = recovery_mesh(spec, vortices, eps, n_theta, n_r, resolution, growth)
        eta = eps ** eta_exponent
        u = recovery_field(dom, vortices, eps, r_patch_factor * np.sqrt(eps), eta)
        e = energy(u)
        vs = _detect(u, eps) if detect else None
        log.info("recovery eps=%g: E=%.6f", eps, e.total)
        rec = SweepRecord(eps, eta, e, vs, angular_separation(vs) if vs else None, {"n_nodes": int(len(dom.nodes))})
        return rec, dom

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, eps_list))
    else:
        out = [one(e) for e in eps_list]
    records = [r for r, _ in out]
    W = renormalized_energy(out[0][1], vortices)
    A, B, res = fit_log(eps_list, [r.energy.total for r in records])
    N = len(vortices.degrees)
    return GammaReport("recovery", records, A, B, res, np.pi * sum(abs(d) for d in vortices.degrees),
                       W + N * gamma0(), W, N, _penalty_record(records))


def minimize_mesh(spec: dict, eps_min: float, n_theta: int = 512, n_r: int = 48,
                  boundary_h: float | None = None) -> Domain:
    """Uniform in angle, radially graded toward the boundary down to eps_min / 4."""
    h = eps_min / 4.0 if boundary_h is None else boundary_h
    R = float(spec.get("radius", 1.0))
    rho = graded_rho(n_r, h_min=h / R, growth=0.1)
    return domain_from_spec(spec, n_r=len(rho) - 1, n_theta=n_theta, rho=rho)


def local_excess(u: VectorField2D, vortices: VortexSet, radius: float = 0.25) -> list:
    """Energy in B_radius(a_j) minus pi |d_j| log(radius / eps) for each vortex."""
    d = u.domain
    cen = d.nodes[d.triangles].mean(axis=1)
    out = []
    for t, dj in zip(vortices.positions, vortices.degrees):
        a = d.boundary_point(t)[0]
        mask = np.hypot(*(cen - a).T) < radius
        e = local_energy(u, mask)
        out.append(float(e.total - np.pi * abs(dj) * np.log(radius / u.eps)))
    return out


def gamma_sweep_minimize(spec: dict, eps_list, eta_exponent: float = 3.0, n_theta: int = 512, n_r: int = 48,
                         boundary_h: float | None = None, init: str = "constant", seed: int = 0,
                         cfg=None, on_stage=None) -> GammaReport:
    """eps-continuation from the given initialization on one mesh, graded toward the boundary."""
    from .optimizer import Schedule, continuation, init_field

    eps_list = [float(e) for e in eps_list]
    dom = minimize_mesh(spec, min(eps_list), n_theta, n_r, boundary_h)
    sched = Schedule(eps_list, eta_exponent=eta_exponent)
    u0 = init_field(dom, init, seed=seed, eps=eps_list[0], eta=sched.etas[0])
    stages = continuation(u0, sched, cfg, on_stage=on_stage)
    records = []
    for st in stages:
        vs = _detect(st.field, st.eps)
        # upper bound: recovery field for the detected vortices on the same mesh
        try:
            rec = energy(recovery_field(dom, vs, st.eps, eta=st.eta)).total if all(
                abs(d) == 1 for d in vs.degrees) else None
        except ResolutionError:
            rec = None
        records.append(SweepRecord(st.eps, st.eta, st.energy, vs, angular_separation(vs),
                                   {"iters": st.iters, "grad_norm": st.grad_norm, "status": st.status,
                                    "recovery_energy": rec, "local_excess": local_excess(st.field, vs)}))
    A, B, res = fit_log(eps_list, [r.energy.total for r in records])
    final = records[-1].vortices
    W = renormalized_energy(dom, final)
    N = final.N
    B_pred = W + N * gamma0()
    lower = [float(np.pi * N * abs(np.log(r.eps)) + B_pred) for r in records]
    slack = max(0.0, max(lo - r.energy.total for lo, r in zip(lower, records)))
    extra = {"lower_bound": lower, "lower_bound_slack": slack,
             "upper_bound": [r.detail.get("recovery_energy") for r in records],
             "mesh": dom.describe(), "fields": [st.field for st in stages]}
    return GammaReport("minimize", records, A, B, res, np.pi * sum(abs(d) for d in final.degrees), B_pred, W, N,
                       _penalty_record(records), extra)
