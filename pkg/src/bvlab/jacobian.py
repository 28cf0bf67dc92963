"""Jacobians of planar maps, dual-norm lower bounds and boundary vortex detection.

The global Jacobian pairs as  <J(u), zeta> = -int u x grad u . grad^perp zeta,
the interior Jacobian is jac(u) = d1 u x d2 u and the boundary Jacobian is
J_bd(u) = J(u) - 2 jac(u).  All integrals here use the straight triangles of
the mesh, so the discrete integration-by-parts identities are exact on the
polygonal domain.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .energy import VectorField2D, cell_gradients
from .geometry import Domain, TWO_PI, graded_rho, graded_theta, make_disk
from .lifting import TopologyError, tangent_lifting


class UnresolvedCoreError(ValueError):
    pass


class MultiplicityError(ValueError):
    pass


def cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# ---------------------------------------------------------------------------
# vortex sets

@dataclass
class VortexSet:
    """Boundary vortices: curve parameters (angle-like, in [0, 2 pi)) and multiplicities."""

    positions: list
    degrees: list

    def __post_init__(self):
        self.positions = [float(np.mod(p, TWO_PI)) for p in self.positions]
        self.degrees = [int(d) for d in self.degrees]
        if len(self.positions) != len(self.degrees):
            raise ValueError("positions and degrees differ in length")
        if any(d == 0 for d in self.degrees):
            raise ValueError("multiplicities must be nonzero")
        if len(set(np.round(self.positions, 14))) != len(self.positions):
            raise ValueError("vortex positions must be distinct")
        if sum(self.degrees) != 2:
            raise TopologyError(f"multiplicities sum to {sum(self.degrees)}, expected 2")

    @property
    def N(self) -> int:
        return len(self.positions)

    def sorted(self) -> "VortexSet":
        o = np.argsort(self.positions)
        return VortexSet([self.positions[i] for i in o], [self.degrees[i] for i in o])

    def to_dict(self) -> dict:
        return {"positions": self.positions, "degrees": self.degrees}

    @classmethod
    def parse(cls, text: str) -> "VortexSet":
        """Parse ``"0:+1,pi:+1"``; positions accept ``pi`` multiples."""
        pos, deg = [], []
        for item in text.split(","):
            p, d = item.split(":")
            p = p.strip().lower().replace("pi", str(np.pi))
            pos.append(float(eval(p, {"__builtins__": {}}, {})) if p else 0.0)
            deg.append(int(d))
        return cls(pos, deg)


@dataclass
class LimitJacobianMeasure:
    diffuse: np.ndarray           # -kappa ds at the boundary nodes
    atoms: list                   # (position, pi d_j)

    @property
    def total_mass(self) -> float:
        return float(self.diffuse.sum() + sum(a for _, a in self.atoms))


def limit_jacobian(domain: Domain, vortices: VortexSet) -> LimitJacobianMeasure:
    return LimitJacobianMeasure(-domain.curvature * domain.boundary_weights,
                                [(p, np.pi * d) for p, d in zip(vortices.positions, vortices.degrees)])


# ---------------------------------------------------------------------------
# test functions

@dataclass
class TestFunction:
    name: str
    values: np.ndarray
    lip: float
    vanishes_on_boundary: bool = False


@dataclass
class TestDictionary:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def boundary_vanishing(self) -> "TestDictionary":
        return TestDictionary([e for e in self.entries if e.vanishes_on_boundary])

    def add(self, domain: Domain, name: str, values, vanishes=False, lip: float | None = None):
        """Add an entry rescaled to Lipschitz constant at most 1.

        ``lip`` is the known Lipschitz constant of the sampled function; without
        it the largest P1 gradient on the mesh is used.
        """
        v = np.asarray(values, dtype=float)
        lip = max_gradient(domain, v) if lip is None else float(lip)
        if lip > 1.0:
            v = v / lip
            lip = 1.0
        if vanishes:
            v = v.copy()
            v[domain.boundary] = 0.0
        self.entries.append(TestFunction(name, v, lip, vanishes))
        return self


def max_gradient(domain: Domain, values) -> float:
    g = cell_gradients(domain, np.asarray(values, dtype=float))
    return float(np.max(np.hypot(g[:, 0], g[:, 1]))) if len(g) else 0.0


def boundary_distance(domain: Domain, pts) -> np.ndarray:
    t = np.linspace(0.0, TWO_PI, 8192, endpoint=False)
    tree = cKDTree(domain.boundary_point(t))
    return tree.query(np.asarray(pts))[0]


def default_dictionary(domain: Domain, n_boundary: int = 16, n_interior: int = 5,
                       radii: Sequence[float] = (0.1, 0.2, 0.4)) -> TestDictionary:
    """Affine functions, a quadratic moment and Lipschitz-1 hat bumps.

    Bump radii are fractions of the diameter; bumps sit on a boundary-arc
    grid and on an interior grid.  Each bump also enters truncated by the
    distance to the boundary, which vanishes there.
    """
    x = domain.nodes
    c = domain.center
    diam = domain.diameter
    D = TestDictionary()
    rmax = float(np.max(np.hypot(*(x - c).T)))
    D.add(domain, "x1", x[:, 0] - c[0], lip=1.0)
    D.add(domain, "x2", x[:, 1] - c[1], lip=1.0)
    D.add(domain, "quad", ((x - c) ** 2).sum(axis=1) / (2.0 * diam), lip=rmax / diam)
    dist = boundary_distance(domain, x)
    D.add(domain, "dist", dist, vanishes=True, lip=1.0)
    tb = np.linspace(0.0, TWO_PI, n_boundary, endpoint=False)
    centers = [("bd", p) for p in domain.boundary_point(tb)]
    g = np.linspace(-0.5, 0.5, n_interior) * diam
    for gx in g:
        for gy in g:
            p = c + np.array([gx, gy])
            if boundary_distance(domain, p[None, :])[0] > 0.05 * diam and domain.curve.param_of(
                    (p - c)[None, :])[0][0] < 1.0:
                centers.append(("in", p))
    for r in radii:
        rr = r * diam
        for kind, p in centers:
            bump = np.maximum(rr - np.hypot(*(x - p).T), 0.0)
            if not np.any(bump > 0):
                continue
            nm = f"{kind}({p[0]:.3f},{p[1]:.3f};{rr:.3f})"
            D.add(domain, "hat" + nm, bump, lip=1.0)
            trunc = np.minimum(bump, dist)
            if np.any(trunc > 0):
                D.add(domain, "hat0" + nm, trunc, vanishes=True, lip=1.0)
    return D


# ---------------------------------------------------------------------------
# Jacobians and pairings

def interior_jacobian(u: VectorField2D) -> np.ndarray:
    """Per-cell d1 u x d2 u."""
    g = cell_gradients(u.domain, u.values)          # [cell, comp, dir]
    return g[:, 0, 0] * g[:, 1, 1] - g[:, 1, 0] * g[:, 0, 1]


def _zeta_values(zeta):
    return zeta.values if isinstance(zeta, TestFunction) else np.asarray(zeta, dtype=float)


def pair_global(u: VectorField2D, zeta) -> float:
    d = u.domain
    z = _zeta_values(zeta)
    g = cell_gradients(d, u.values)                  # [cell, comp, dir]
    gz = cell_gradients(d, z)
    ubar = u.values[d.triangles].mean(axis=1)
    c1 = cross(ubar, g[:, :, 0])
    c2 = cross(ubar, g[:, :, 1])
    # grad^perp zeta = (-d2 zeta, d1 zeta)
    integrand = -(c1 * (-gz[:, 1]) + c2 * gz[:, 0])
    return float(np.sum(integrand * d.straight_areas))


def pair_interior(u: VectorField2D, zeta) -> float:
    """int 2 jac(u) zeta."""
    d = u.domain
    z = _zeta_values(zeta)
    zbar = z[d.triangles].mean(axis=1)
    return float(np.sum(2.0 * interior_jacobian(u) * zbar * d.straight_areas))


def pair_boundary(u: VectorField2D, zeta) -> float:
    return pair_global(u, zeta) - pair_interior(u, zeta)


def boundary_line_pairing(u: VectorField2D, zeta) -> float:
    """-sum over boundary edges of int (u x d_s u) zeta ds for the piecewise linear trace."""
    d = u.domain
    z = _zeta_values(zeta)
    b = d.boundary
    bn = np.roll(b, -1)
    ua, ub = u.values[b], u.values[bn]
    return float(-np.sum(cross(ua, ub) * 0.5 * (z[b] + z[bn])))


@dataclass
class JacobianPairing:
    names: list
    global_: np.ndarray
    interior: np.ndarray

    @property
    def boundary(self) -> np.ndarray:
        return self.global_ - self.interior

    def to_rows(self) -> list:
        return [{"zeta": n, "global": float(a), "interior": float(b), "boundary": float(a - b)}
                for n, a, b in zip(self.names, self.global_, self.interior)]


def pairings(u: VectorField2D, dictionary: TestDictionary) -> JacobianPairing:
    names = [e.name for e in dictionary]
    g = np.array([pair_global(u, e) for e in dictionary])
    i = np.array([pair_interior(u, e) for e in dictionary])
    return JacobianPairing(names, g, i)


def dual_norm(values, dictionary: TestDictionary | None = None) -> float:
    """Max |pairing| over a dictionary: a lower bound for the Lipschitz-dual norm.

    ``values`` is either a sequence of pairings or a callable zeta -> pairing
    (then ``dictionary`` is required).
    """
    if callable(values):
        if dictionary is None or len(dictionary) == 0:
            raise ValueError("dual norm needs a nonempty dictionary")
        vals = [values(e) for e in dictionary]
    else:
        vals = list(np.atleast_1d(values))
        if len(vals) == 0:
            raise ValueError("dual norm needs a nonempty dictionary")
    return float(np.max(np.abs(vals)))


def jacobian_distance(u: VectorField2D, v: VectorField2D, dictionary: TestDictionary, kind: str = "global") -> float:
    """Dictionary lower bound for ||J(u) - J(v)|| (kind: global, interior or boundary)."""
    f = {"global": pair_global, "interior": pair_interior, "boundary": pair_boundary}[kind]
    return dual_norm([f(u, e) - f(v, e) for e in dictionary])


# ---------------------------------------------------------------------------
# stability inequalities

def consistent_l2(domain: Domain, values) -> float:
    """Exact L2 norm of a P1 field over the straight triangles."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    a = v[domain.triangles]                          # [cell, 3, comp]
    s = (a ** 2).sum(axis=1) + (a.sum(axis=1)) ** 2  # sum_i a_i^2 + (sum a_i)^2
    return float(np.sqrt(np.sum(domain.straight_areas[:, None] * s / 12.0)))


def _dirichlet_straight(u: VectorField2D) -> float:
    g = cell_gradients(u.domain, u.values)
    return float(np.sqrt(np.sum(u.domain.straight_areas * (g ** 2).sum(axis=(1, 2)))))


def stability_check_interior(u: VectorField2D, v: VectorField2D, dictionary: TestDictionary,
                             slack: float = 1e-6) -> dict:
    """|int (jac u - jac v) zeta| <= 1/2 ||u-v|| (||grad u|| + ||grad v||) ||grad zeta||_inf.

    Checked for every boundary-vanishing entry, with the plain and the
    mean-removed L2 distance.  ``slack`` is relative to the scale of the RHS.
    """
    d = u.domain
    ents = dictionary.boundary_vanishing().entries
    if not ents:
        raise ValueError("dictionary has no boundary-vanishing entries")
    diff = u.values - v.values
    area = float(d.straight_areas.sum())
    mean = np.array([np.sum(d.straight_areas * diff[d.triangles][:, :, c].mean(axis=1)) for c in range(2)]) / area
    dl2 = consistent_l2(d, diff)
    dl2_mean = consistent_l2(d, diff - mean)
    grads = _dirichlet_straight(u) + _dirichlet_straight(v)
    jd = interior_jacobian(u) - interior_jacobian(v)
    rows = []
    ok = True
    worst = None
    for e in ents:
        zbar = e.values[d.triangles].mean(axis=1)
        lhs = abs(float(np.sum(jd * zbar * d.straight_areas)))
        lip = max_gradient(d, e.values)
        rhs = 0.5 * dl2 * grads * lip
        rhs_m = 0.5 * dl2_mean * grads * lip
        tol = slack * max(rhs, 1e-300) + 1e-14 * (1.0 + grads ** 2)
        good = lhs <= rhs_m + tol and lhs <= rhs + tol
        ok &= good
        if not good and worst is None:
            worst = e.name
        rows.append({"zeta": e.name, "lhs": lhs, "rhs": rhs, "rhs_mean_removed": rhs_m})
    ratio = max(r["lhs"] / r["rhs_mean_removed"] if r["rhs_mean_removed"] > 0 else 0.0 for r in rows)
    return {"ok": bool(ok), "witness": worst, "max_ratio": ratio, "l2": dl2, "l2_mean_removed": dl2_mean,
            "grad_sum": grads, "rows": rows}


def stability_check_global(pairs, dictionary: TestDictionary, c_cap: float = 1e3) -> dict:
    """Fit the smallest C with ||J(u)-J(v)|| <= t + C sqrt(t), t = ||u-v||(||grad u||+||grad v||)."""
    rows = []
    for u, v in pairs:
        if np.max(v.modulus) > 1.0 + 1e-12:
            raise ValueError("stability_check_global needs |v| <= 1")
        t = consistent_l2(u.domain, u.values - v.values) * (_dirichlet_straight(u) + _dirichlet_straight(v))
        lhs = jacobian_distance(u, v, dictionary)
        c = max(lhs - t, 0.0) / np.sqrt(t) if t > 0 else (0.0 if lhs == 0 else np.inf)
        rows.append({"t": t, "lhs": lhs, "C": c})
    cs = [r["C"] for r in rows]
    return {"C_fit": float(max(cs)) if cs else 0.0, "bounded": bool(all(np.isfinite(cs)) and max(cs, default=0) <= c_cap),
            "rows": rows}


# ---------------------------------------------------------------------------
# vortex detection

def boundary_relative_phase(u: VectorField2D):
    """Unwrapped phase of u along the boundary minus the tangent lifting.

    Returns (r, r_end): r at the boundary nodes and the value reached after a
    full loop back to node 0.
    """
    d = u.domain
    z = u.complex[d.boundary]
    mod = np.abs(z)
    if np.min(mod) < 0.5:
        k = int(np.argmin(mod))
        raise UnresolvedCoreError(f"|u| = {mod[k]:.3f} < 1/2 at boundary node {k}: vortex cores are unresolved")
    a = np.angle(z)
    psi = np.concatenate([[a[0]], a[0] + np.cumsum(np.angle(z[1:] * np.conj(z[:-1])))])
    psi_end = psi[-1] + np.angle(z[0] * np.conj(z[-1]))
    g = tangent_lifting(d).g
    return psi - g, psi_end - (g[0] + TWO_PI)


def detect_boundary_vortices(u: VectorField2D, window: float | None = None, threshold: float = 0.2,
                             return_info: bool = False):
    """Boundary vortices from crossings of the relative phase through odd multiples of pi/2.

    Crossings closer than ``window`` (arc length, default 5% of the
    perimeter) form one vortex; its multiplicity is minus the phase change
    between the neighbouring plateaus divided by pi.
    """
    d = u.domain
    L = d.perimeter
    window = 0.05 * L if window is None else float(window)
    r, r_end = boundary_relative_phase(u)
    s = d.arc
    n = len(r)
    rr = np.append(r, r_end)
    ss = np.append(s, L)
    lev = np.floor(rr / np.pi + 0.5)
    ev_pos, ev_sign = [], []
    for j in range(n):
        if lev[j + 1] == lev[j]:
            continue
        lo, hi = sorted((lev[j], lev[j + 1]))
        for m in np.arange(lo, hi):
            c = (m + 0.5) * np.pi
            f = (c - rr[j]) / (rr[j + 1] - rr[j])
            ev_pos.append(ss[j] + f * (ss[j + 1] - ss[j]))
            ev_sign.append(np.sign(rr[j + 1] - rr[j]))
    info = {"relative_phase": r, "arc": s, "events": ev_pos}
    if not ev_pos:
        raise TopologyError(f"no vortices found; relative phase changes by {r_end - r[0]:.3f}")
    ev = np.sort(np.asarray(ev_pos))
    # rotate the loop to start in the widest event-free gap
    gaps = np.diff(np.append(ev, ev[0] + L))
    k = int(np.argmax(gaps))
    start = np.mod(ev[k] + 0.5 * gaps[k], L)
    evr = np.sort(np.mod(ev - start, L))
    clusters = [[evr[0]]]
    for e in evr[1:]:
        if e - clusters[-1][-1] <= window:
            clusters[-1].append(e)
        else:
            clusters.append([e])

    def phase_at(x):
        """Relative phase at rotated arc position x, continuous along the rotated loop."""
        sa = np.mod(x + start, L)
        val = np.interp(sa, ss, rr)
        if x + start >= L:          # passed node 0 once: add the loop change
            val += r_end - r[0]
        return val

    bounds = [0.0]
    for a, b in zip(clusters[:-1], clusters[1:]):
        bounds.append(0.5 * (a[-1] + b[0]))
    bounds.append(L)
    # values at the boundaries; the last equals the first after one loop
    vals = [phase_at(x) for x in bounds[:-1]]
    vals.append(vals[0] + (r_end - r[0]))
    pos, deg, raw = [], [], []
    for i, cl in enumerate(clusters):
        dr = -(vals[i + 1] - vals[i]) / np.pi
        di = int(np.rint(dr))
        raw.append(dr)
        if di == 0:
            continue
        if abs(dr - di) >= threshold:
            raise MultiplicityError(f"fractional multiplicity {dr:.3f} near arc {np.mod(np.mean(cl) + start, L):.4f}")
        sc = np.mod(np.mean(cl) + start, L)
        pos.append(float(d.arc_to_param(sc)))
        deg.append(di)
    info.update({"clusters": [[float(np.mod(c + start, L)) for c in cl] for cl in clusters], "raw_degrees": raw})
    if sum(deg) != 2 or not deg:
        err = TopologyError(f"detected multiplicities {deg} sum to {sum(deg)} (expected 2)")
        err.dump = {"positions": pos, "degrees": deg, "raw": raw}
        raise err
    vs = VortexSet(pos, deg)
    return (vs, info) if return_info else vs


def angular_separation(vs: VortexSet) -> float:
    """Smallest angular distance between consecutive vortices (two-vortex case: their separation)."""
    p = np.sort(np.asarray(vs.positions))
    gaps = np.diff(np.append(p, p[0] + TWO_PI))
    return float(np.min(gaps)) if len(p) > 1 else TWO_PI


# ---------------------------------------------------------------------------
# escaping vortex

_PP = 0.5j
_PM = -0.5j


def _u0(z):
    a = (z - _PP) / np.abs(z - _PP)
    b = (z - _PM) / np.abs(z - _PM)
    return a * np.conj(b)


@lru_cache(maxsize=2)
def _escape_phase(order: int = 28, n_col: int = 720):
    """Harmonic correction Phi on B_1 minus the disks B_{1/4}(+-i/2) (least squares in a Trefftz basis).

    With U = U0 exp(i Phi), U = 1 on the unit circle, U = e^{i theta_+} on
    the circle around +i/2 and e^{-i theta_-} on the circle around -i/2.
    """
    t = np.linspace(0.0, TWO_PI, n_col, endpoint=False)
    zo = np.exp(1j * t)
    zp = _PP + 0.25 * np.exp(1j * t)
    zm = _PM + 0.25 * np.exp(1j * t)
    bo = -np.unwrap(np.angle(_u0(zo)))
    bp = np.unwrap(np.angle(zp - _PM))
    bm = -np.unwrap(np.angle(zm - _PP))
    z = np.concatenate([zo, zp, zm])
    rhs = np.concatenate([bo, bp, bm])

    def basis(z):
        cols = [np.ones_like(z.real), np.log(np.abs(z - _PP)), np.log(np.abs(z - _PM))]
        for k in range(1, order + 1):
            zk = z ** k
            ap = (0.25 / (z - _PP)) ** k
            am = (0.25 / (z - _PM)) ** k
            cols += [zk.real, zk.imag, ap.real, ap.imag, am.real, am.imag]
        return np.stack(cols, axis=-1)

    A = basis(z)
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    resid = float(np.max(np.abs(A @ coef - rhs)))
    return coef, resid, basis


def escape_map(X: np.ndarray) -> np.ndarray:
    """The unit-scale map U at points X (N,2): degree +1 core at i/2, degree -1 core at -i/2, U = 1 outside B_1."""
    coef, _, basis = _escape_phase()
    z = X[:, 0] + 1j * X[:, 1]
    out = np.ones(len(z), dtype=complex)
    inb = np.abs(z) < 1.0
    dp = np.abs(z - _PP)
    dm = np.abs(z - _PM)
    cp = dp < 0.25
    cm = dm < 0.25
    mid = inb & ~cp & ~cm
    if np.any(mid):
        zz = z[mid]
        out[mid] = _u0(zz) * np.exp(1j * (basis(zz) @ coef))
    out[cp] = 4.0 * (z[cp] - _PP)
    out[cm] = 4.0 * np.conj(z[cm] - _PM)
    return np.stack([out.real, out.imag], axis=1)


def escaping_vortex_domain(eps: float, n_base: int = 96, refine: float = 4.0) -> Domain:
    """B_{1/4}((0,-3/4)) meshed finely near its top point (0,-1/2)."""
    h = eps / (10.0 * refine)
    theta = graded_theta(n_base, focus=[np.pi / 2], h_min=4 * h, growth=0.1, width=4 * eps)
    rho = graded_rho(max(16, n_base // 4), h_min=4 * h, growth=0.1, depth_focus=4 * 1.2 * eps)
    return make_disk(radius=0.25, center=(0.0, -0.75), theta=theta, rho=rho)


def build_escaping_vortex(eps: float, domain: Domain | None = None, eta: float | None = None) -> VectorField2D:
    """u_eps(x) = U((x - P)/eps) with P = (0,-1/2) the top of B_{1/4}((0,-3/4)); only the degree -1 core lies inside."""
    if not (0 < eps < 0.25):
        raise ValueError("need 0 < eps < 1/4")
    d = domain if domain is not None else escaping_vortex_domain(eps)
    P = np.array([0.0, -0.5])
    vals = escape_map((d.nodes - P) / eps)
    return VectorField2D(vals, d, eps, eps ** 3 if eta is None else eta)
