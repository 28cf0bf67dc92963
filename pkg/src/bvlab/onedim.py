"""One-dimensional nonlocal functional, half-disk localized energies and the Peierls profile.

F_eps(phi; I) = 1/(2 pi) int_{IxI} |(phi(s) - phi(t)) / (s - t)|^2 + 1/(2 pi eps) int_I sin^2 phi

Profiles are piecewise linear.  On uniform nodes the double integral is a
quadratic form whose far-field part is Toeplitz and is applied with FFTs;
on general nodes each element's inner integral is done in closed form and
the outer one by Gauss rules graded toward the element ends.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize as _sp_minimize
from scipy.signal import fftconvolve

from .geometry import _graded_segment

log = logging.getLogger(__name__)

GAMMA0 = float(np.pi * (1.0 - np.log(4.0 * np.pi)))
_LOG2 = float(np.log(2.0))


class ResolutionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# profiles

@dataclass
class Profile1D:
    """Piecewise-linear phase on an interval; ``nodes`` defaults to a uniform grid."""

    interval: tuple
    values: np.ndarray
    eps: float
    nodes: np.ndarray | None = None

    def __post_init__(self):
        a, b = map(float, self.interval)
        if not b > a:
            raise ValueError("interval must have positive length")
        self.interval = (a, b)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or len(self.values) < 2:
            raise ValueError("need at least two samples")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("samples must be finite")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.nodes is None:
            self.nodes = np.linspace(a, b, len(self.values))
        else:
            self.nodes = np.asarray(self.nodes, dtype=float)
            if self.nodes.shape != self.values.shape or np.any(np.diff(self.nodes) <= 0):
                raise ValueError("nodes must be increasing with one value each")
            if abs(self.nodes[0] - a) > 1e-12 * (b - a) or abs(self.nodes[-1] - b) > 1e-12 * (b - a):
                raise ValueError("nodes must span the interval")

    @classmethod
    def sample(cls, fn, interval, eps, n=None, h=None):
        """Uniform sampling with n nodes, or spacing at most h (default eps/8)."""
        a, b = interval
        if n is None:
            h = eps / 8.0 if h is None else h
            n = int(np.ceil((b - a) / h)) + 1
        x = np.linspace(a, b, n)
        return cls((a, b), fn(x), eps)

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def uniform(self) -> bool:
        h = self.spacing
        return bool(np.max(np.abs(h - h.mean())) <= 1e-9 * h.mean())

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def check_resolution(self):
        if np.max(self.spacing) >= self.eps / 4.0:
            raise ResolutionError(f"node spacing {np.max(self.spacing):.3g} must be below eps/4 = {self.eps / 4:.3g}")

    def with_values(self, values, nodes=None) -> "Profile1D":
        return Profile1D(self.interval, values, self.eps, self.nodes if nodes is None else nodes)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)


# ---------------------------------------------------------------------------
# nonlocal term on uniform nodes

_GL12 = np.polynomial.legendre.leggauss(12)


@lru_cache(maxsize=8)
def _pair_tables(n: int):
    """Scale-free element-pair integrals for offsets k = 0..n-1 (zero for k < 2).

    P[k,a,b] = int int b_a(s) b_b(s) / (s - t - k)^2, Q with both bases in t,
    R[k,a,b] = int int b_a(s) b_b(t) / (s - t - k)^2, b_0 = 1 - x, b_1 = x.
    """
    x, w = _GL12
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    B = np.stack([1.0 - x, x])                      # (2, q)
    P = np.zeros((n, 2, 2))
    Q = np.zeros((n, 2, 2))
    R = np.zeros((n, 2, 2))
    ks = np.arange(2, n)
    ww = w[:, None] * w[None, :]
    for lo in range(0, len(ks), 4096):
        k = ks[lo:lo + 4096]
        K = ww[None] / (x[None, :, None] - x[None, None, :] - k[:, None, None]) ** 2   # (k, s, t)
        Ks = K.sum(axis=2)
        Kt = K.sum(axis=1)
        P[k] = np.einsum("ks,as,bs->kab", Ks, B, B)
        Q[k] = np.einsum("kt,at,bt->kab", Kt, B, B)
        R[k] = np.einsum("kst,as,bt->kab", K, B, B)
    cP = np.cumsum(P, axis=0)
    cQ = np.cumsum(Q, axis=0)
    for arr in (P, Q, R, cP, cQ):
        arr.setflags(write=False)
    return R, cP, cQ


def _nonlocal_uniform(v: np.ndarray, grad: bool):
    """int int ((phi(s) - phi(t)) / (s - t))^2 on a uniform grid (independent of the spacing)."""
    v = v - v.mean()
    n = len(v) - 1
    m = np.diff(v)
    L = (v[:-1], v[1:])
    # same element and neighbouring elements
    T = float(m @ m)
    c = 1.0 - _LOG2
    mm = m[:-1] * m[1:]
    dm = m[:-1] - m[1:]
    T += 2.0 * float(np.sum(mm + c * dm ** 2))
    gm = 2.0 * m
    gm[:-1] += 2.0 * (m[1:] + 2.0 * c * dm)
    gm[1:] += 2.0 * (m[:-1] - 2.0 * c * dm)
    G = [np.zeros(n), np.zeros(n)]
    if n >= 3:
        R, cP, cQ = _pair_tables(n)
        S = cP[n - 1 - np.arange(n)] + cQ[np.arange(n)]      # (n, 2, 2)
        for a in range(2):
            for b in range(2):
                G[a] += 2.0 * S[:, a, b] * L[b]
                r = R[:, a, b]
                y = fftconvolve(L[b], r[::-1])[n - 1:2 * n - 1]
                z = fftconvolve(L[a], r)[:n]
                G[a] -= 2.0 * y
                G[b] -= 2.0 * z
        Tp = 0.5 * float(G[0] @ L[0] + G[1] @ L[1])
        T += 2.0 * Tp
    if not grad:
        return T, None
    g = np.zeros(n + 1)
    g[:-1] += 2.0 * G[0]
    g[1:] += 2.0 * G[1]
    g[:-1] -= gm
    g[1:] += gm
    return T, g


# ---------------------------------------------------------------------------
# nonlocal term on general nodes

def _graded_rule(levels: int = 12, order: int = 6):
    f = 4.0 ** -np.arange(levels, 0, -1)
    br = np.concatenate([[0.0], f, [0.5], 1.0 - f[::-1], [1.0]])
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = br[:-1, None], br[1:, None]
    return (a + 0.5 * (b - a) * (x + 1.0)).ravel(), (0.5 * (b - a) * w).ravel()


_GRADED = _graded_rule()


def _nonlocal_general(x: np.ndarray, v: np.ndarray) -> float:
    v = v - v.mean()
    h = np.diff(x)
    m = np.diff(v) / h
    s0, s1 = x[:-1], x[1:]
    tq, wq = _GRADED
    total = float(np.sum(m ** 2 * h ** 2))
    for j in range(len(h)):
        t = s0[j] + h[j] * tq                           # (q,)
        phit = v[j] + m[j] * (t - s0[j])
        d0 = s0[None, :] - t[:, None]                   # (q, n)
        beta = v[None, :-1] + m[None, :] * (-d0) - phit[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            G = (m ** 2 * h)[None, :] + 2.0 * m[None, :] * beta * np.log1p(h[None, :] / d0) \
                + beta ** 2 * h[None, :] / (d0 * (d0 + h[None, :]))
        G[:, j] = 0.0
        total += h[j] * float(wq @ G.sum(axis=1))
    return total


def nonlocal_energy(phi: Profile1D) -> float:
    """int_{IxI} ((phi(s) - phi(t)) / (s - t))^2 (without the 1/(2 pi) factor)."""
    if phi.uniform:
        return _nonlocal_uniform(phi.values, False)[0]
    return _nonlocal_general(phi.nodes, phi.values)


def _sin2_elements(h, p, q, grad=False):
    """Exact int sin^2 of the linear interpolant on each element."""
    S, D = p + q, q - p
    sc = np.sinc(D / np.pi)
    val = 0.5 * h * (1.0 - np.cos(S) * sc)
    if not grad:
        return val
    small = np.abs(D) < 1e-4
    Ds = np.where(small, 1.0, D)
    dsc = np.where(small, -D / 3.0 + D ** 3 / 30.0, (Ds * np.cos(Ds) - np.sin(Ds)) / Ds ** 2)
    dp = 0.5 * h * (np.sin(S) * sc + np.cos(S) * dsc)
    dq = 0.5 * h * (np.sin(S) * sc - np.cos(S) * dsc)
    return val, dp, dq


def anchoring_integral(phi: Profile1D, shift=0.0) -> float:
    v = phi.values - shift
    return float(np.sum(_sin2_elements(phi.spacing, v[:-1], v[1:])))


def f_eps(phi: Profile1D, check: bool = True) -> float:
    if check:
        phi.check_resolution()
    return nonlocal_energy(phi) / (2 * np.pi) + anchoring_integral(phi) / (2 * np.pi * phi.eps)


def f_eps_parts(phi: Profile1D) -> dict:
    nl = nonlocal_energy(phi) / (2 * np.pi)
    an = anchoring_integral(phi) / (2 * np.pi * phi.eps)
    return {"nonlocal": nl, "anchoring": an, "total": nl + an}


def f_eps_and_gradient(phi: Profile1D):
    """Value and nodal gradient (uniform nodes only)."""
    if not phi.uniform:
        raise ValueError("gradients are implemented for uniform nodes")
    T, g = _nonlocal_uniform(phi.values, True)
    v = phi.values
    val, dp, dq = _sin2_elements(phi.spacing, v[:-1], v[1:], grad=True)
    ga = np.zeros_like(v)
    ga[:-1] += dp
    ga[1:] += dq
    c = 1.0 / (2 * np.pi * phi.eps)
    return T / (2 * np.pi) + c * float(val.sum()), g / (2 * np.pi) + c * ga


# ---------------------------------------------------------------------------
# truncation

def truncate(phi: Profile1D, k: int, shifted: bool = False) -> Profile1D:
    """T_k phi = (phi ^ (k+1) pi) v k pi, exact for the piecewise-linear profile.

    Crossings of the two levels are inserted as nodes.  With ``shifted`` the
    result is T_k phi - k pi, taking values in [0, pi].
    """
    lo, hi = k * np.pi, (k + 1) * np.pi
    x, v = phi.nodes, phi.values
    xs, vs = [x[0]], [v[0]]
    for i in range(len(x) - 1):
        a, b = v[i], v[i + 1]
        for lev in sorted((lo, hi), reverse=bool(b < a)):
            if (a - lev) * (b - lev) < 0:
                s = (lev - a) / (b - a)
                xc = x[i] + s * (x[i + 1] - x[i])
                if xc - xs[-1] > 1e-12 * (x[i + 1] - x[i]) and x[i + 1] - xc > 1e-12 * (x[i + 1] - x[i]):
                    xs.append(xc)
                    vs.append(lev)
        xs.append(x[i + 1])
        vs.append(b)
    vals = np.clip(np.array(vs), lo, hi)
    if shifted:
        vals = vals - lo
    return Profile1D(phi.interval, vals, phi.eps, np.array(xs))


def truncation_levels(phi: Profile1D) -> range:
    return range(int(np.floor(phi.values.min() / np.pi)), int(np.ceil(phi.values.max() / np.pi)))


def superadditivity_margin(phi: Profile1D) -> dict:
    """f_eps(phi) - sum_j f_eps(phi^(j)) over all levels crossed by phi."""
    whole = f_eps(phi, check=False)
    parts = [f_eps(truncate(phi, k, shifted=True), check=False) for k in truncation_levels(phi)]
    return {"whole": whole, "parts": parts, "margin": whole - float(np.sum(parts))}


# ---------------------------------------------------------------------------
# rearrangement

def _union(iv, name):
    iv = sorted((float(a), float(b)) for a, b in iv)
    for a, b in iv:
        if not b > a:
            raise ValueError(f"{name}: empty or reversed interval ({a}, {b})")
    for (a0, b0), (a1, b1) in zip(iv[:-1], iv[1:]):
        if a1 < b0:
            raise ValueError(f"{name}: intervals overlap")
    return iv


def _measure(iv):
    return float(sum(b - a for a, b in iv))


def pair_kernel_integral(A, B) -> float:
    """int_A int_B |s - t|^-2 for disjoint interval unions (closed form per pair)."""
    total = 0.0
    for a1, a2 in A:
        for b1, b2 in B:
            if a2 <= b1:
                lo1, hi1, lo2, hi2 = a1, a2, b1, b2
            elif b2 <= a1:
                lo1, hi1, lo2, hi2 = b1, b2, a1, a2
            else:
                raise ValueError("A and B overlap")
            if lo2 == hi1:
                return float("inf")
            total += np.log(lo2 - lo1) + np.log(hi2 - hi1) - np.log(lo2 - hi1) - np.log(hi2 - lo1)
    return float(total)


@dataclass
class RearrangementResult:
    lhs: float
    rhs: float
    rhs_weak: float
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def rearrangement_bound(A, B, I, tol: float = 1e-10) -> RearrangementResult:
    A = _union(A, "A")
    B = _union(B, "B")
    i0, i1 = map(float, I)
    for a, b in A + B:
        if a < i0 - 1e-15 or b > i1 + 1e-15:
            raise ValueError("A and B must lie inside I")
    lI, lA, lB = i1 - i0, _measure(A), _measure(B)
    if lA + lB >= lI:
        raise ValueError("|A| + |B| must be below |I|")
    lhs = pair_kernel_integral(A, B)
    rhs = np.log(lI - lA) + np.log(lI - lB) - np.log(lI) - np.log(lI - lA - lB)
    weak = np.log(lB / lI) + np.log(lA / lI) - np.log((lI - lA - lB) / lI)
    return RearrangementResult(lhs, float(rhs), float(weak), bool(lhs >= rhs - tol))


def rearrangement_bound_fraction(A, B, I, c: float) -> tuple[float, float]:
    """(lhs, log(1 + c|A|/|P|)) for |B| >= c|I|."""
    A = _union(A, "A")
    B = _union(B, "B")
    lI = float(I[1] - I[0])
    if not 0 < c < 1 or _measure(B) < c * lI:
        raise ValueError("need 0 < c < 1 and |B| >= c|I|")
    P = lI - _measure(A) - _measure(B)
    if P <= 0:
        raise ValueError("|A| + |B| must be below |I|")
    return pair_kernel_integral(A, B), float(np.log1p(c * _measure(A) / P))


# ---------------------------------------------------------------------------
# co-area diagnostic

def _superlevel(phi: Profile1D, level: float, above: bool):
    """Interval union {phi > level} (or {phi < level}) of the piecewise-linear profile."""
    x, v = phi.nodes, (phi.values - level) * (1 if above else -1)
    out = []
    start = x[0] if v[0] > 0 else None
    for i in range(len(x) - 1):
        a, b = v[i], v[i + 1]
        if (a > 0) != (b > 0):
            xc = x[i] + (x[i + 1] - x[i]) * a / (a - b) if a != b else x[i]
            if a > 0:
                out.append((start, xc))
                start = None
            else:
                start = xc
    if start is not None:
        out.append((start, x[-1]))
    return [(a, b) for a, b in out if b > a]


@dataclass
class CoareaResult:
    gamma: np.ndarray
    theta: np.ndarray
    lhs: float
    rhs: float
    monotone: bool
    margin: float

    def to_dict(self) -> dict:
        return {"gamma": self.gamma.tolist(), "theta": self.theta.tolist(), "lhs": self.lhs, "rhs": self.rhs,
                "monotone": self.monotone, "margin": self.margin}


def theta_coarea(phi: Profile1D, gamma_grid=None) -> CoareaResult:
    """Theta_phi(gamma) = int int_{E_gamma^2} |(hat phi(s) - hat phi(t)) / (s - t)|^2 on a gamma grid, and the
    lower Stieltjes sum of int (1 - 2 gamma / pi)^2 dTheta against the full double integral."""
    if phi.values.min() < -1e-12 or phi.values.max() > np.pi + 1e-12:
        raise ValueError("profile must take values in [0, pi]; clamp it first")
    g = np.linspace(0.0, 0.5 * np.pi, 64) if gamma_grid is None else np.asarray(gamma_grid, dtype=float)
    if np.any(np.diff(g) <= 0) or g[0] < 0 or g[-1] > 0.5 * np.pi:
        raise ValueError("gamma grid must increase within [0, pi/2]")
    th = np.zeros(len(g))
    for i, gam in enumerate(g):
        A = _superlevel(phi, np.pi - gam, True)
        B = _superlevel(phi, gam, False)
        if A and B:
            th[i] = 2.0 * np.pi ** 2 * pair_kernel_integral(A, B)
    wgt = (1.0 - 2.0 * g / np.pi) ** 2
    dth = np.diff(th)
    fin = np.isfinite(dth)
    rhs = float(np.sum(np.where(fin & (wgt[1:] > 0), wgt[1:] * np.where(fin, dth, 0.0), 0.0)))
    lhs = nonlocal_energy(phi)
    mono = bool(np.all(np.diff(th[np.isfinite(th)]) >= -1e-12 * max(1.0, np.nanmax(np.abs(th[np.isfinite(th)])))))
    return CoareaResult(g, th, lhs, rhs, mono, lhs - rhs)


# ---------------------------------------------------------------------------
# half-disk meshes and localized energies

@dataclass(eq=False)
class HalfDiskMesh:
    r: float
    nodes: np.ndarray
    triangles: np.ndarray
    flat: np.ndarray          # nodes on the segment y = 0, ordered by x
    arc: np.ndarray           # nodes on the half circle

    def __post_init__(self):
        p = self.nodes[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        self.areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        inv = np.stack([np.stack([e2[:, 1], -e2[:, 0]], -1), np.stack([-e1[:, 1], e1[:, 0]], -1)], 1) / det[:, None, None]
        # gradients of the three barycentric functions
        g12 = inv                                         # rows: grad of lambda_1, lambda_2
        self.grad_basis = np.concatenate([-(g12[:, 0] + g12[:, 1])[:, None], g12], axis=1)

    def dirichlet(self, psi) -> float:
        g = np.einsum("ta,tad->td", np.asarray(psi)[self.triangles], self.grad_basis)
        return float(np.sum(self.areas * (g ** 2).sum(axis=1)))


def halfdisk_mesh(r: float = 1.0, focus=(0.0,), h_min: float = 0.01, growth: float = 0.1,
                  h_max: float | None = None, width: float = 0.0) -> HalfDiskMesh:
    """Structured mesh of B_r^+ through the elliptical square-to-disk map.

    Parameter lines are graded toward the focus points on the flat side and
    toward the flat side itself, with finest spacing h_min.
    """
    if not r > 0 or not h_min > 0:
        raise ValueError("radius and h_min must be positive")
    h_max = r / 12.0 if h_max is None else h_max
    foc = np.asarray(list(focus), dtype=float)
    if np.any(np.abs(foc) >= r):
        raise ValueError("focus points must lie inside the flat segment")

    def sx(u):
        d = np.min(np.abs(u[:, None] * r - foc[None, :]), axis=1) if len(foc) else np.full(len(u), np.inf)
        return np.minimum(h_max, h_min + growth * np.maximum(d - width, 0.0)) / r

    def sy(u):
        return np.minimum(h_max, h_min + growth * u * r) / r

    xi = _graded_segment(-1.0, 1.0, sx, n_min=8, clusters=list(foc / r))
    et = _graded_segment(0.0, 1.0, sy, n_min=4)
    X, E = np.meshgrid(xi, et, indexing="ij")
    px = r * X * np.sqrt(1.0 - 0.5 * E ** 2)
    py = r * E * np.sqrt(1.0 - 0.5 * X ** 2)
    nodes = np.stack([px.ravel(), py.ravel()], axis=1)
    nx, ny = len(xi), len(et)
    idx = np.arange(nx * ny).reshape(nx, ny)
    a, b, c, d = idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]
    # split each cell along the diagonal pointing away from the nearest square corner
    flip = (X[:-1, :-1] + X[1:, 1:] < 0)
    t1 = np.where(flip[..., None], np.stack([a, b, d], -1), np.stack([a, b, c], -1))
    t2 = np.where(flip[..., None], np.stack([b, c, d], -1), np.stack([a, c, d], -1))
    tris = np.concatenate([t1.reshape(-1, 3), t2.reshape(-1, 3)])
    flat = idx[:, 0]
    arc = np.unique(np.concatenate([idx[0, :], idx[-1, :], idx[:, -1]]))
    return HalfDiskMesh(float(r), nodes, tris, flat, arc)


@dataclass(eq=False)
class HalfDiskField:
    mesh: HalfDiskMesh
    psi: np.ndarray
    eps: float
    g: object = None           # callable of x or values on the flat nodes

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float)
        if self.psi.shape != (len(self.mesh.nodes),):
            raise ValueError("one value per mesh node expected")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def trace(self) -> Profile1D:
        x = self.mesh.nodes[self.mesh.flat, 0]
        return Profile1D((x[0], x[-1]), self.psi[self.mesh.flat], self.eps, x)

    def boundary_phase(self) -> np.ndarray:
        x = self.mesh.nodes[self.mesh.flat, 0]
        if self.g is None:
            return np.zeros(len(x))
        return np.asarray(self.g(x) if callable(self.g) else self.g, dtype=float)


def halfdisk_energy(field: HalfDiskField, parts: bool = False):
    """int |grad psi|^2 + 1/(2 pi eps) int_{I_r} sin^2(psi - g)."""
    m = field.mesh
    D = m.dirichlet(field.psi)
    x = m.nodes[m.flat, 0]
    v = field.psi[m.flat] - field.boundary_phase()
    A = float(np.sum(_sin2_elements(np.diff(x), v[:-1], v[1:]))) / (2 * np.pi * field.eps)
    if parts:
        return {"dirichlet": D, "anchoring": A, "total": D + A}
    return D + A


# ---------------------------------------------------------------------------
# Peierls profile

def peierls_phase(x, y, eps):
    return np.arctan2(y + 2 * np.pi * eps, x)


def peierls_profile(eps: float, r: float = 1.0, resolution: float = 4.0, growth: float = 0.08):
    """Meshed Peierls field arg(x + i(y + 2 pi eps)) on B_r^+ and its trace on I_r (uniform nodes)."""
    if not 0 < eps < r:
        raise ValueError("need 0 < eps < r")
    mesh = halfdisk_mesh(r, (0.0,), h_min=eps / resolution, growth=growth)
    fld = HalfDiskField(mesh, peierls_phase(mesh.nodes[:, 0], mesh.nodes[:, 1], eps), eps)
    tr = Profile1D.sample(lambda x: peierls_phase(x, 0.0, eps), (-r, r), eps, h=eps / (2 * resolution))
    return fld, tr


def peierls_energy_oracle(eps: float, r: float = 1.0) -> float:
    """Limit value pi log(r / eps) + gamma0."""
    if not 0 < eps < r:
        raise ValueError("need 0 < eps < r")
    return float(np.pi * np.log(r / eps) + GAMMA0)


def peierls_energy_exact(eps: float, r: float = 1.0) -> float:
    """The half-disk energy of the Peierls field by adaptive quadrature of its closed-form density."""
    from scipy.integrate import quad

    a = 2 * np.pi * eps

    def ring(th):
        s = np.sin(th)
        # int_0^r p / (p^2 + 2 a p s + a^2) dp in closed form
        c = np.cos(th)
        val = 0.5 * np.log((r * r + 2 * a * r * s + a * a) / (a * a))
        if c != 0.0:
            val -= s / abs(c) * (np.arctan((r + a * s) / (a * abs(c))) - np.arctan(s / abs(c)))
        return val

    D = quad(ring, 0.0, np.pi, epsabs=1e-13, epsrel=1e-13, limit=400, points=[0.5 * np.pi])[0]
    return float(D + 2.0 * np.arctan(r / a))


# ---------------------------------------------------------------------------
# Poisson extension

def poisson_extension(x_nodes, values, X, Y, left=None, right=None) -> np.ndarray:
    """Bounded harmonic extension of piecewise-linear data (constant tails) to height Y > 0.

    Exact convolution with the half-plane Poisson kernel y / (pi (x^2 + y^2)).
    """
    xn = np.asarray(x_nodes, dtype=float)
    v = np.asarray(values, dtype=float)
    left = v[0] if left is None else left
    right = v[-1] if right is None else right
    X = np.atleast_1d(np.asarray(X, dtype=float))
    Y = np.broadcast_to(np.asarray(Y, dtype=float), X.shape)
    if np.any(Y <= 0):
        raise ValueError("heights must be positive")
    out = np.zeros(X.shape)
    m = np.diff(v) / np.diff(xn)
    for k in range(X.size):
        xk, yk = X.flat[k], Y.flat[k]
        u = xn - xk
        at = np.arctan(u / yk)
        lg = np.log(u ** 2 + yk ** 2)
        # int over [u_i, u_{i+1}] of (v_i + m_i (u - u_i)) y / (pi (u^2 + y^2)) du
        val = np.sum((v[:-1] - m * u[:-1]) * (at[1:] - at[:-1]) / np.pi + m * yk * (lg[1:] - lg[:-1]) / (2 * np.pi))
        val += left * (at[0] + 0.5 * np.pi) / np.pi + right * (0.5 * np.pi - at[-1]) / np.pi
        out.flat[k] = val
    return out


def reflected_data(g, r: float, n: int = 2000):
    """Nodes and values of g~_r: g on [-r, r], g(r^2 / x) outside, with the limit g(0) as tails."""
    xi = np.linspace(-r, r, 2 * n + 1)
    inner = xi[1:-1]
    pos = r * r / np.linspace(r, r / n, n)[1:]
    x = np.concatenate([-pos[::-1], xi, pos])
    vals = np.where(np.abs(x) <= r, g(np.clip(x, -r, r)), g(r * r / np.where(x == 0, 1.0, x)))
    return x, vals, float(g(np.array([0.0]))[0])


def reflection_normal_derivative(g, r: float, n_theta: int = 33, n: int = 4000, h_rel: float = 1e-5) -> dict:
    """Radial derivative of the harmonic extension of g~_r on the half circle (vanishes exactly)."""
    x, v, tail = reflected_data(g, r, n)
    th = np.linspace(0.0, np.pi, n_theta + 2)[1:-1]
    h = h_rel * r
    out = poisson_extension(x, v, (r + h) * np.cos(th), (r + h) * np.sin(th), tail, tail)
    inn = poisson_extension(x, v, (r - h) * np.cos(th), (r - h) * np.sin(th), tail, tail)
    dr = (out - inn) / (2 * h)
    tang = (poisson_extension(x, v, r * np.cos(th + h / r), r * np.sin(th + h / r), tail, tail)
            - poisson_extension(x, v, r * np.cos(th - h / r), r * np.sin(th - h / r), tail, tail)) / (2 * h)
    return {"theta": th, "radial": dr, "tangential": tang,
            "max_radial": float(np.max(np.abs(dr))), "max_tangential": float(np.max(np.abs(tang)))}


# ---------------------------------------------------------------------------
# higher multiplicity

def _cutoff(rad, r):
    return np.clip((r - rad) / r ** 2, 0.0, 1.0)


def higher_multiplicity_profile(d: int, eps: float, r: float, resolution: float = 4.0,
                                growth: float = 0.1) -> HalfDiskField:
    """d near-jumps of height pi at x_j = j / |log eps|, glued to d arg(x + iy) on the half circle."""
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    if not 0 < r < 1 or not 0 < eps < np.exp(-1.0 / r ** 2):
        raise ValueError("need 0 < r < 1 and eps < exp(-1/r^2)")
    a = 1.0 / abs(np.log(eps))
    xj = a * np.arange(1, d + 1)
    if xj[-1] >= r * (1.0 - r):
        raise ValueError("near-jump points leave the region where the cutoff equals one")
    mesh = halfdisk_mesh(r, tuple(xj), h_min=eps / resolution, growth=growth, h_max=r / 16.0)
    X, Y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    f = _cutoff(np.hypot(X, Y), r)
    psi = sum(np.arctan2(Y + 2 * np.pi * eps * f, X - f * x) for x in xj)
    return HalfDiskField(mesh, psi, eps)


def higher_multiplicity_constant(field: HalfDiskField, d: int, r: float) -> float:
    """C-hat with E = pi d log(r / eps) + C-hat d^2 (1 + |log r| + log|log eps|)."""
    E = halfdisk_energy(field)
    eps = field.eps
    return float((E - np.pi * d * np.log(r / eps)) / (d ** 2 * (1 + abs(np.log(r)) + np.log(abs(np.log(eps))))))


# ---------------------------------------------------------------------------
# minimization of the discrete functional

@dataclass
class Transition:
    """Single pi-transition: values pinned at the centre node, box constraint [low, high]."""

    left: float = np.pi
    right: float = 0.0
    centre: float = 0.5 * np.pi

    def __post_init__(self):
        if abs(abs(self.left - self.right) - np.pi) > 1e-12:
            raise ValueError("transition data must encode a single pi jump")


@dataclass
class OneDimResult:
    profile: Profile1D
    energy: float
    excess: float
    iterations: int
    grad_norm: float
    initial_grad_norm: float
    status: str
    parts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eps": self.profile.eps, "interval": list(self.profile.interval), "n_nodes": len(self.profile.values),
                "energy": self.energy, "excess": self.excess, "iterations": self.iterations,
                "grad_norm": self.grad_norm, "initial_grad_norm": self.initial_grad_norm, "status": self.status,
                **self.parts}


def minimize_f_eps(eps: float, r: float = 1.0, data: Transition | None = None, h: float | None = None,
                   max_iters: int = 20000, gtol: float = 1e-9, init: Profile1D | None = None) -> OneDimResult:
    """Minimize the discrete F_eps on (-r, r) over profiles in [0, pi] with the centre value pinned."""
    data = Transition() if data is None else data
    if not 0 < eps < r:
        raise ValueError("need 0 < eps < r")
    h = eps / 8.0 if h is None else h
    n = 2 * int(np.ceil(r / h)) + 1
    x = np.linspace(-r, r, n)
    if init is None:
        base = np.arctan2(2 * np.pi * eps, x)
        v0 = data.right + base if data.left > data.right else data.left + np.pi - base
    else:
        v0 = init(x)
    lo, hi = min(data.left, data.right), max(data.left, data.right)
    bounds = [(lo, hi)] * n
    c = n // 2
    v0 = np.clip(v0, lo, hi)
    v0[c] = data.centre
    bounds[c] = (data.centre, data.centre)
    prof = Profile1D((-r, r), v0, eps)
    prof.check_resolution()

    def fun(v):
        return f_eps_and_gradient(prof.with_values(v))

    def pg_norm(v, g):
        # projected gradient in the mass-weighted norm
        g = g.copy()
        g[c] = 0.0
        g[(v <= lo) & (g > 0)] = 0.0
        g[(v >= hi) & (g < 0)] = 0.0
        return float(np.sqrt(np.sum(g ** 2) / h))

    _, g0 = fun(v0)
    res = _sp_minimize(fun, v0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_iters, "maxfun": 2 * max_iters, "ftol": 1e-15, "gtol": gtol,
                                "maxcor": 20})
    out = prof.with_values(res.x)
    E, g = f_eps_and_gradient(out)
    pg, pg0 = pg_norm(res.x, g), pg_norm(v0, g0)
    if res.success or pg <= 1e-3 * pg0:
        status = "converged"
    elif res.nit >= max_iters:
        status = "max_iters"
    else:
        raise ConvergenceError(f"1D minimization stalled: {res.message} (gradient {pg:.3g}, initial {pg0:.3g})")
    log.info("1D minimization eps=%g: E=%.8f after %d iterations (%s)", eps, E, res.nit, res.message)
    return OneDimResult(out, float(E), float(E - np.pi * np.log(r / eps)), int(res.nit), pg, pg0, status,
                        f_eps_parts(out))


def fitted_lower_constant(results) -> float:
    """Empirical M with excess >= -M over the runs."""
    return float(-min(r.excess for r in results))
