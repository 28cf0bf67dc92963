"""Domains, boundary frames and structured polar meshes.

Every domain is star-shaped about its center and described by a closed
curve ``x(t) = c + gamma(t)``, t in [0, 2 pi).  The interior mesh is the
image of a tensor grid in (rho, t) under ``(rho, t) -> c + rho * gamma(t)``;
each grid cell is split into two straight triangles.  Cell weights are the
exact areas of the curved cells, so quadrature of constants is exact.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class GeometryError(ValueError):
    """Raised for invalid or self-intersecting domain descriptions."""


# ---------------------------------------------------------------------------
# boundary curves

class Curve:
    """Closed star-shaped curve gamma(t) relative to the domain center."""

    kind = "curve"

    def point(self, t):
        raise NotImplementedError

    def d1(self, t):
        raise NotImplementedError

    def d2(self, t):
        raise NotImplementedError

    def param_of(self, p):
        """Return (rho, t) for points p given relative to the center."""
        raise NotImplementedError

    def speed(self, t):
        d = self.d1(t)
        return np.hypot(d[..., 0], d[..., 1])

    def swept(self, t):
        # gamma x gamma', the Jacobian weight of the radial map (divided by rho)
        g = self.point(t)
        d = self.d1(t)
        return g[..., 0] * d[..., 1] - g[..., 1] * d[..., 0]

    def curvature(self, t):
        d = self.d1(t)
        dd = self.d2(t)
        num = d[..., 0] * dd[..., 1] - d[..., 1] * dd[..., 0]
        return num / np.hypot(d[..., 0], d[..., 1]) ** 3

    def describe(self) -> dict:
        raise NotImplementedError


class CircleCurve(Curve):
    kind = "disk"

    def __init__(self, radius: float):
        self.radius = float(radius)

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        return self.radius * np.stack([-np.sin(t), np.cos(t)], axis=-1)

    def d2(self, t):
        return -self.point(t)

    def param_of(self, p):
        p = np.atleast_2d(p)
        t = np.mod(np.arctan2(p[:, 1], p[:, 0]), TWO_PI)
        return np.hypot(p[:, 0], p[:, 1]) / self.radius, t

    def describe(self):
        return {"kind": "disk", "radius": self.radius}


class FourierCurve(Curve):
    """r(t) = R (1 + sum_k a_k cos(m_k t)) in polar form."""

    kind = "fourier"

    def __init__(self, coeffs, radius: float = 1.0):
        self.coeffs = [(float(a), int(m)) for a, m in coeffs]
        self.radius = float(radius)
        for _, m in self.coeffs:
            if m < 1:
                raise GeometryError("Fourier modes must be positive integers")

    def _r(self, t, order=0):
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t) if order == 0 else np.zeros_like(t)
        for a, m in self.coeffs:
            # derivatives of cos(m t) cycle through -sin, -cos, sin
            if order == 0:
                out = out + a * np.cos(m * t)
            elif order == 1:
                out = out - a * m * np.sin(m * t)
            else:
                out = out - a * m * m * np.cos(m * t)
        return self.radius * out

    def point(self, t):
        r = self._r(t)
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        r, r1 = self._r(t), self._r(t, 1)
        c, s = np.cos(t), np.sin(t)
        return np.stack([r1 * c - r * s, r1 * s + r * c], axis=-1)

    def d2(self, t):
        t = np.asarray(t, dtype=float)
        r, r1, r2 = self._r(t), self._r(t, 1), self._r(t, 2)
        c, s = np.cos(t), np.sin(t)
        return np.stack([r2 * c - 2 * r1 * s - r * c, r2 * s + 2 * r1 * c - r * s], axis=-1)

    def param_of(self, p):
        p = np.atleast_2d(p)
        t = np.mod(np.arctan2(p[:, 1], p[:, 0]), TWO_PI)
        return np.hypot(p[:, 0], p[:, 1]) / self._r(t), t

    def describe(self):
        return {"kind": "fourier", "radius": self.radius, "coeffs": [[a, m] for a, m in self.coeffs]}


class EllipseCurve(Curve):
    kind = "ellipse"

    def __init__(self, a: float, b: float):
        self.a, self.b = float(a), float(b)

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)

    def d1(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([-self.a * np.sin(t), self.b * np.cos(t)], axis=-1)

    def d2(self, t):
        return -self.point(t)

    def param_of(self, p):
        p = np.atleast_2d(p)
        x, y = p[:, 0] / self.a, p[:, 1] / self.b
        return np.hypot(x, y), np.mod(np.arctan2(y, x), TWO_PI)

    def describe(self):
        return {"kind": "ellipse", "axes": [self.a, self.b]}


# ---------------------------------------------------------------------------
# grids

def uniform_theta(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


def uniform_rho(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n + 1)


def _graded_segment(a, b, spacing, n_min=1, clusters=()):
    """Nodes in [a, b] (endpoints included) following a spacing function."""
    x = [np.linspace(a, b, 4001)]
    for c in list(clusters) + [a, b]:
        off = np.geomspace(1e-10 * (b - a), b - a, 2000)
        x += [c - off, c + off]
    x = np.unique(np.clip(np.concatenate(x), a, b))
    dens = 1.0 / spacing(x)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    n = max(n_min, int(np.ceil(cum[-1])))
    return np.interp(np.linspace(0.0, cum[-1], n + 1), cum, x)


def graded_theta(n_base: int, focus=(), h_min: float | None = None, growth: float = 0.15,
                 width: float = 0.0) -> np.ndarray:
    """Angles in [0, 2 pi) refined geometrically around ``focus`` angles.

    Spacing is ``min(2 pi / n_base, h_min + growth * max(dist - width, 0))``
    where dist is the angular distance to the nearest focus.  Focus angles
    and 0 are nodes.
    """
    h0 = TWO_PI / n_base
    focus = np.mod(np.asarray(list(focus), dtype=float), TWO_PI)
    if len(focus) == 0 or h_min is None or h_min >= h0:
        return uniform_theta(n_base)

    def spacing(t):
        d = np.abs(t[:, None] - focus[None, :])
        d = np.minimum(d, TWO_PI - d).min(axis=1)
        return np.minimum(h0, h_min + growth * np.maximum(d - width, 0.0))

    anchors = np.unique(np.concatenate([[0.0], focus, [TWO_PI]]))
    pts = [np.array([0.0])]
    for a, b in zip(anchors[:-1], anchors[1:]):
        if b - a < 1e-14:
            continue
        cl = [c for f in focus for c in (f - width, f + width) if a < c < b]
        pts.append(_graded_segment(a, b, spacing, clusters=cl)[1:])
    t = np.concatenate(pts)
    return t[t < TWO_PI - 1e-14]


def graded_rho(n_base: int, h_min: float | None = None, growth: float = 0.15,
               depth_focus: float = 0.0) -> np.ndarray:
    """Normalized radial levels 0 = rho_0 < ... < rho_n = 1, refined near 1.

    The finest spacing ``h_min`` is used on the band [1 - depth_focus, 1].
    """
    h0 = 1.0 / n_base
    if h_min is None or h_min >= h0:
        return uniform_rho(n_base)

    def spacing(r):
        d = np.maximum((1.0 - depth_focus) - r, 0.0)
        return np.minimum(h0, h_min + growth * d)

    return _graded_segment(0.0, 1.0, spacing, n_min=4, clusters=[1.0 - depth_focus])


# ---------------------------------------------------------------------------
# domain

@dataclass(eq=False)
class Domain:
    """Star-shaped domain with a structured polar mesh.

    Node 0 is the center; ring i (1..n_r) holds nodes ``1 + (i-1) n_t + j``.
    The last ring is the boundary, ordered by increasing arc length from t=0.
    """

    curve: Curve
    center: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    nodes: np.ndarray = field(init=False, repr=False)
    triangles: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        self.rho = np.asarray(self.rho, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.rho[0] != 0.0 or abs(self.rho[-1] - 1.0) > 1e-15 or np.any(np.diff(self.rho) <= 0):
            raise GeometryError("radial levels must increase from 0 to 1")
        if self.theta[0] != 0.0 or np.any(np.diff(self.theta) <= 0) or self.theta[-1] >= TWO_PI:
            raise GeometryError("angles must increase within [0, 2 pi) starting at 0")
        self._build()
        self._check_valid()

    # -- construction -----------------------------------------------------
    @property
    def n_r(self) -> int:
        return len(self.rho) - 1

    @property
    def n_t(self) -> int:
        return len(self.theta)

    def node_index(self, i, j):
        """Index of ring i (>=1), angle j (mod n_t)."""
        return 1 + (np.asarray(i) - 1) * self.n_t + np.mod(j, self.n_t)

    def _build(self):
        nr, nt = self.n_r, self.n_t
        gam = self.curve.point(self.theta)
        rings = self.rho[1:, None, None] * gam[None, :, :]
        self.nodes = np.vstack([self.center[None, :], (rings + self.center).reshape(-1, 2)])

        j = np.arange(nt)
        jp = (j + 1) % nt
        tris = [np.stack([np.zeros(nt, int), self.node_index(1, j), self.node_index(1, jp)], axis=1)]
        t_hi = np.append(self.theta[1:], TWO_PI)
        dt = t_hi - self.theta
        # 1D Gauss points per angular interval
        tq = self.theta[:, None] + 0.5 * dt[:, None] * (_GL_X[None, :] + 1.0)
        wq = 0.5 * dt[:, None] * _GL_W[None, :]
        lam = 0.5 * (_GL_X + 1.0)
        sw = self.curve.swept(tq)
        wts = [0.5 * self.rho[1] ** 2 * (sw * wq).sum(axis=1)]
        self._cell_ring = [np.zeros(nt, int)]
        for i in range(1, nr):
            a = self.node_index(i, j)
            b = self.node_index(i + 1, j)
            c = self.node_index(i + 1, jp)
            d = self.node_index(i, jp)
            tris.append(np.stack([a, b, c], axis=1))
            tris.append(np.stack([a, c, d], axis=1))
            r0, r1 = self.rho[i], self.rho[i + 1]
            rd = r0 + lam * (r1 - r0)
            w1 = 0.5 * (r1 ** 2 - rd ** 2)
            w2 = 0.5 * (rd ** 2 - r0 ** 2)
            wts.append((sw * wq * w1[None, :]).sum(axis=1))
            wts.append((sw * wq * w2[None, :]).sum(axis=1))
            self._cell_ring += [np.full(nt, i), np.full(nt, i)]
        self.triangles = np.vstack(tris).astype(np.int64)
        self.weights = np.concatenate(wts)
        self.cell_ring = np.concatenate(self._cell_ring)
        del self._cell_ring

        p = self.nodes[self.triangles]
        x0, y0 = p[:, 0, 0], p[:, 0, 1]
        x1, y1 = p[:, 1, 0], p[:, 1, 1]
        x2, y2 = p[:, 2, 0], p[:, 2, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if np.any(det <= 0):
            raise GeometryError("mesh has inverted or degenerate triangles")
        g = np.empty((len(det), 3, 2))
        g[:, 0, 0], g[:, 0, 1] = (y1 - y2) / det, (x2 - x1) / det
        g[:, 1, 0], g[:, 1, 1] = (y2 - y0) / det, (x0 - x2) / det
        g[:, 2, 0], g[:, 2, 1] = (y0 - y1) / det, (x1 - x0) / det
        self.grad_basis = g
        self.straight_areas = 0.5 * det

        # lumped nodal masses
        self.node_mass = np.bincount(self.triangles.ravel(), weights=np.repeat(self.weights / 3.0, 3),
                                     minlength=len(self.nodes))

        # boundary data
        self.boundary = self.node_index(nr, j)
        d1 = self.curve.d1(self.theta)
        speed = np.hypot(d1[:, 0], d1[:, 1])
        self.tangent = d1 / speed[:, None]
        # outward normal for a counterclockwise curve; tau = nu_perp = (-nu2, nu1)
        self.normal = np.stack([self.tangent[:, 1], -self.tangent[:, 0]], axis=1)
        self.curvature = self.curve.curvature(self.theta)
        self.edge_weights = np.stack([0.5 * speed * dt, 0.5 * speed[jp] * dt], axis=1)
        self.boundary_weights = self.edge_weights[:, 0] + np.roll(self.edge_weights[:, 1], 1)
        seg = (self.curve.speed(tq) * wq).sum(axis=1)
        if isinstance(self.curve, CircleCurve):
            seg = self.curve.radius * dt
        self.arc = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        self.perimeter = float(seg.sum())
        # boundary edge j (nodes j, j+1) sits in the outer triangle of the last ring
        self.edge_triangle = len(self.triangles) - 2 * nt + j if nr > 1 else j

    def _check_valid(self):
        t = np.linspace(0, TWO_PI, 2048, endpoint=False)
        if np.min(self.curve.swept(t)) <= 0:
            raise GeometryError("boundary curve is not star-shaped about the center")
        if np.any(self.weights <= 0):
            raise GeometryError("non-positive cell area")

    # -- derived quantities ----------------------------------------------
    @property
    def area(self) -> float:
        """Exact enclosed area (spectral quadrature of 1/2 gamma x gamma')."""
        if isinstance(self.curve, CircleCurve):
            return float(np.pi * self.curve.radius ** 2)
        t = np.linspace(0, TWO_PI, 8192, endpoint=False)
        return float(0.5 * self.curve.swept(t).mean() * TWO_PI)

    @property
    def diameter(self) -> float:
        b = self.nodes[self.boundary]
        step = max(1, len(b) // 512)
        bb = b[::step]
        return float(np.max(np.hypot(*(bb[:, None, :] - bb[None, :, :]).transpose(2, 0, 1))))

    @property
    def boundary_points(self) -> np.ndarray:
        return self.nodes[self.boundary]

    def reach_estimate(self) -> float:
        """Local reach estimate min 1/kappa^+ over boundary nodes."""
        kmax = np.max(np.abs(self.curvature))
        return float(np.inf if kmax == 0 else 1.0 / kmax)

    def boundary_frame(self, s):
        """(nu, tau) at arc length s."""
        s = float(s)
        if not (0.0 <= s < self.perimeter):
            raise ValueError(f"arc position {s} outside [0, {self.perimeter})")
        t = self.arc_to_param(s)
        d = self.curve.d1(np.array([t]))[0]
        tau = d / np.hypot(*d)
        nu = np.array([tau[1], -tau[0]])
        return nu, np.array([-nu[1], nu[0]])

    def arc_to_param(self, s):
        if isinstance(self.curve, CircleCurve):
            return np.asarray(s) / self.curve.radius
        from scipy.integrate import quad
        from scipy.optimize import brentq

        def arc(t):
            return quad(lambda x: float(self.curve.speed(np.array([x]))[0]), 0.0, t, limit=200)[0]

        s = float(s)
        return brentq(lambda t: arc(t) - s, 0.0, TWO_PI, xtol=1e-14)

    def param_to_arc(self, t):
        t = np.mod(np.asarray(t, dtype=float), TWO_PI)
        if isinstance(self.curve, CircleCurve):
            return t * self.curve.radius
        from scipy.integrate import quad
        f = np.vectorize(lambda x: quad(lambda y: float(self.curve.speed(np.array([y]))[0]), 0.0, x, limit=200)[0])
        return f(t)

    def boundary_point(self, t) -> np.ndarray:
        return self.center + self.curve.point(np.atleast_1d(t))

    def gauss_bonnet(self) -> float:
        return float(np.sum(self.curvature * self.boundary_weights))

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.curve.describe()).encode())
        for arr in (self.center, self.rho, self.theta):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def describe(self) -> dict:
        d = dict(self.curve.describe())
        d["center"] = [float(c) for c in self.center]
        d["n_r"] = self.n_r
        d["n_theta"] = self.n_t
        r = self.reach_estimate()
        d["reach_estimate"] = None if np.isinf(r) else r
        return d

    # -- point location ----------------------------------------------------
    def locate(self, pts):
        """Triangle index and barycentric weights of points (clamped to the mesh)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rho, t = self.curve.param_of(pts - self.center)
        rho = np.clip(rho, 0.0, 1.0)
        i = np.clip(np.searchsorted(self.rho, rho, side="right") - 1, 0, self.n_r - 1)
        j = np.searchsorted(self.theta, t, side="right") - 1
        j = np.mod(j, self.n_t)
        nt = self.n_t
        cand = np.where(i == 0, j, nt + 2 * (i - 1) * nt + j)
        cand2 = np.where(i == 0, j, cand + nt)
        best_tri = cand.copy()
        best_bary = None
        best_score = np.full(len(pts), -np.inf)
        for c in (cand, cand2):
            bary = self._bary(c, pts)
            score = bary.min(axis=1)
            take = score > best_score
            best_tri[take] = c[take]
            best_bary = bary if best_bary is None else np.where(take[:, None], bary, best_bary)
            best_score = np.maximum(score, best_score)
        best_bary = np.clip(best_bary, 0.0, None)
        best_bary /= best_bary.sum(axis=1, keepdims=True)
        return best_tri, best_bary

    def _bary(self, tri, pts):
        p0 = self.nodes[self.triangles[tri, 0]]
        g = self.grad_basis[tri]
        d = pts - p0
        l1 = np.einsum("ij,ij->i", g[:, 1], d)
        l2 = np.einsum("ij,ij->i", g[:, 2], d)
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def interpolate(self, values, pts):
        """P1 interpolation of nodal values at arbitrary points."""
        tri, bary = self.locate(pts)
        v = np.asarray(values)[self.triangles[tri]]
        if v.ndim == 2:
            return np.einsum("ij,ij->i", bary, v)
        return np.einsum("ij,ijk->ik", bary, v)


def _check_res(n_r, n_theta):
    if int(n_r) < 4 or int(n_theta) < 8:
        raise ValueError("need n_r >= 4 and n_theta >= 8")


def make_disk(radius: float = 1.0, n_r: int = 32, n_theta: int = 128, center=(0.0, 0.0),
              theta=None, rho=None) -> Domain:
    """Disk of given radius with a structured polar mesh.

    ``theta`` and ``rho`` override the uniform angular / radial grids
    (see :func:`graded_theta`, :func:`graded_rho`).
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    if theta is None or rho is None:
        _check_res(n_r, n_theta)
    theta = uniform_theta(int(n_theta)) if theta is None else theta
    rho = uniform_rho(int(n_r)) if rho is None else rho
    return Domain(CircleCurve(radius), np.asarray(center, float), rho, theta)


def make_perturbed_disk(fourier_coeffs, n_r: int = 32, n_theta: int = 128, radius: float = 1.0,
                        center=(0.0, 0.0), theta=None, rho=None) -> Domain:
    """Disk with boundary r(t) = R (1 + sum a_k cos(m_k t))."""
    _check_res(n_r, n_theta)
    curve = FourierCurve(fourier_coeffs, radius)
    t = np.linspace(0, TWO_PI, 4096, endpoint=False)
    if np.min(curve._r(t)) <= 0:
        raise GeometryError("perturbed radius is not positive")
    theta = uniform_theta(int(n_theta)) if theta is None else theta
    rho = uniform_rho(int(n_r)) if rho is None else rho
    return Domain(curve, np.asarray(center, float), rho, theta)


def make_ellipse(a: float, b: float, n_r: int = 32, n_theta: int = 128, center=(0.0, 0.0),
                 theta=None, rho=None) -> Domain:
    _check_res(n_r, n_theta)
    if not (a > 0 and b > 0):
        raise ValueError("semi-axes must be positive")
    theta = uniform_theta(int(n_theta)) if theta is None else theta
    rho = uniform_rho(int(n_r)) if rho is None else rho
    return Domain(EllipseCurve(a, b), np.asarray(center, float), rho, theta)


def domain_from_spec(spec: dict, n_r: int, n_theta: int, **kw) -> Domain:
    kind = spec.get("kind", "disk")
    kw.setdefault("center", tuple(spec.get("center", (0.0, 0.0))))
    if kind == "disk":
        return make_disk(spec.get("radius", 1.0), n_r, n_theta, **kw)
    if kind == "fourier":
        return make_perturbed_disk(spec.get("coeffs", []), n_r, n_theta, radius=spec.get("radius", 1.0), **kw)
    if kind == "ellipse":
        a, b = spec.get("axes", [1.0, 1.0])
        return make_ellipse(a, b, n_r, n_theta, **kw)
    raise ValueError(f"unknown domain kind {kind!r}")
