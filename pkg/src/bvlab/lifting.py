"""Phase liftings and projection of finite-energy fields onto unit fields.

The projection works on a disk: a polar grid of spacing L = eta^beta is
laid over the mesh, the Ginzburg-Landau problem is solved in every grid
cell with the field itself as Dirichlet data on the grid lines, the result
is normalized and the inner region is stretched back onto the full disk.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .energy import VectorField2D, energy, stiffness, cell_gradients, l2_norm, boundary_l2_norm
from .geometry import CircleCurve, Domain, TWO_PI


class UnresolvedPhaseError(ValueError):
    pass


class InteriorVortexError(ValueError):
    pass


class TopologyError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class VortexInCellError(RuntimeError):
    pass


def _wrap(a):
    return np.angle(np.exp(1j * np.asarray(a)))


def mesh_edges(domain: Domain) -> np.ndarray:
    t = domain.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


# ---------------------------------------------------------------------------
# unwrapping

def unwrap_phase(U: VectorField2D, margin: float = 0.1) -> np.ndarray:
    """Scalar phi with exp(i phi) = U at every node, anchored so phi[0] in [0, 2 pi)."""
    d = U.domain
    z = U.complex
    if np.max(np.abs(np.abs(z) - 1.0)) > 1e-8:
        raise ValueError("unwrap_phase needs a unit-length field")
    edges = mesh_edges(d)
    jump = _wrap(np.angle(z[edges[:, 1]] * np.conj(z[edges[:, 0]])))
    bad = np.abs(jump) >= np.pi - margin
    if np.any(bad):
        k = int(np.argmax(bad))
        raise UnresolvedPhaseError(f"phase jump {jump[k]:.3f} on edge {tuple(edges[k])} exceeds pi - margin")
    # winding of every triangle
    tri = d.triangles
    za, zb, zc = z[tri[:, 0]], z[tri[:, 1]], z[tri[:, 2]]
    wind = (np.angle(zb * np.conj(za)) + np.angle(zc * np.conj(zb)) + np.angle(za * np.conj(zc))) / TWO_PI
    k = np.rint(wind).astype(int)
    if np.any(k != 0):
        t = int(np.flatnonzero(k)[0])
        raise InteriorVortexError(f"nonzero winding {k[t]} around triangle {t}; no continuous lifting")

    n = len(z)
    g = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)).tocsr()
    order, pred = breadth_first_order(g, 0, directed=False, return_predecessors=True)
    if len(order) != n:
        raise ValueError("mesh graph is disconnected")
    ang = np.angle(z)
    phi = np.empty(n)
    phi[0] = np.mod(ang[0], TWO_PI)
    for v in order[1:]:
        p = pred[v]
        phi[v] = phi[p] + _wrap(ang[v] - ang[p])
    return phi


# ---------------------------------------------------------------------------
# boundary liftings

@dataclass
class BoundaryLifting:
    """Phase g of the unit tangent at the boundary nodes.

    g increases continuously from node 0 to the last node and drops by 2 pi
    when closing the loop back to node 0 (``jump_node``).
    """

    g: np.ndarray
    increments: np.ndarray
    kappa_fd: np.ndarray
    kappa: np.ndarray
    jump_node: int = 0

    @property
    def jump(self) -> float:
        return float(self.increments[-1])

    def curvature_error(self) -> float:
        """Largest mismatch between the discrete derivative of g and kappa, away from the jump."""
        return float(np.max(np.abs(self.kappa_fd[1:-1] - self.kappa[1:-1])))


def tangent_lifting(domain: Domain) -> BoundaryLifting:
    tau = domain.tangent
    ang = np.arctan2(tau[:, 1], tau[:, 0])
    steps = _wrap(np.diff(ang))
    g = np.concatenate([[ang[0]], ang[0] + np.cumsum(steps)])
    closing = g[0] - g[-1]
    incr = np.concatenate([np.diff(g), [closing]])
    # centered differences in arc length, periodic with the jump removed
    arc = domain.arc
    L = domain.perimeter
    gp = np.concatenate([[g[-1] - TWO_PI], g, [g[0] + TWO_PI]])
    sp_ = np.concatenate([[arc[-1] - L], arc, [L]])
    kfd = (gp[2:] - gp[:-2]) / (sp_[2:] - sp_[:-2])
    return BoundaryLifting(g, incr, kfd, domain.curvature.copy())


def tangent_phase(domain: Domain, t, lift: BoundaryLifting | None = None) -> np.ndarray:
    """Continuous branch of arg(tau) at boundary parameters t in [0, 2 pi)."""
    lift = lift or tangent_lifting(domain)
    t = np.mod(np.atleast_1d(np.asarray(t, dtype=float)), TWO_PI)
    d = domain.curve.d1(t)
    raw = np.arctan2(d[:, 1], d[:, 0])
    ref = np.interp(t, np.append(domain.theta, TWO_PI), np.append(lift.g, lift.g[0] + TWO_PI))
    return raw + TWO_PI * np.rint((ref - raw) / TWO_PI)


@dataclass
class BVLimitLifting:
    """Boundary phase with derivative kappa and jumps -pi d_j at the vortices."""

    phi0: np.ndarray
    jumps: list
    params: np.ndarray
    constant: float = 0.0

    def at(self, domain: Domain, t) -> np.ndarray:
        t = np.mod(np.atleast_1d(np.asarray(t, dtype=float)), TWO_PI)
        out = tangent_phase(domain, t) + self.constant
        for tj, h in self.jumps:
            out = out + h * (t > tj)
        return out


def _positions_degrees(vortices):
    pos = np.mod(np.asarray(vortices.positions, dtype=float), TWO_PI)
    deg = np.asarray(vortices.degrees, dtype=int)
    return pos, deg


def bv_limit_lifting(domain: Domain, vortices) -> BVLimitLifting:
    """phi0 = g - pi * sum_{a_j < t} d_j, constant in pi Z so that e^{i phi0} . nu = 0."""
    pos, deg = _positions_degrees(vortices)
    if np.any(deg == 0):
        raise ValueError("vortex multiplicities must be nonzero")
    if int(deg.sum()) != 2:
        raise TopologyError(f"multiplicities sum to {int(deg.sum())}, need 2 for the phase to close up")
    lift = tangent_lifting(domain)
    th = domain.theta
    phi = lift.g.copy()
    for tj, dj in zip(pos, deg):
        phi = phi - np.pi * dj * (th > tj)
    jumps = [(float(tj), float(-np.pi * dj)) for tj, dj in sorted(zip(pos, deg))]
    return BVLimitLifting(phi, jumps, th.copy())


# ---------------------------------------------------------------------------
# polar grid projection

def _ring_of_node(domain: Domain) -> np.ndarray:
    r = np.zeros(len(domain.nodes), dtype=int)
    r[1:] = (np.arange(1, len(domain.nodes)) - 1) // domain.n_t + 1
    return r


def _node_density(u: VectorField2D) -> np.ndarray:
    """Nodal GL density |grad u|^2 + (1-|u|^2)^2 / eta^2 (gradient part averaged over adjacent cells)."""
    d = u.domain
    g = cell_gradients(d, u.values)
    cd = (g ** 2).sum(axis=(1, 2))
    w = np.repeat(d.weights, 3)
    num = np.bincount(d.triangles.ravel(), weights=np.repeat(cd, 3) * w, minlength=len(d.nodes))
    den = np.bincount(d.triangles.ravel(), weights=w, minlength=len(d.nodes))
    pot = (1.0 - (u.values ** 2).sum(axis=1)) ** 2 / u.eta ** 2
    return num / den + pot


@dataclass
class PolarGrid:
    L: float
    beta: float
    eta: float
    R: float
    circles: np.ndarray              # ring indices of the grid circles, ascending
    sectors: list                    # per annulus, angular indices of the rays
    theta_shift: list                # per annulus, angular shift (radians)
    central_ring: int                # the central cell is the disk bounded by this ring
    R_out: float
    grid_energy: float
    bound: float
    volume_energy: float
    cells: list = field(repr=False, default_factory=list)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def satisfies_bound(self) -> bool:
        return self.grid_energy <= self.bound * (1 + 1e-12)

    def to_dict(self) -> dict:
        return {"L": self.L, "beta": self.beta, "eta": self.eta, "R": self.R, "R_out": self.R_out,
                "n_circles": int(len(self.circles)), "n_cells": self.n_cells,
                "grid_energy": self.grid_energy, "bound": self.bound, "volume_energy": self.volume_energy,
                "theta_shift": [float(t) for t in self.theta_shift]}


def _uniform(a, tol=1e-9):
    d = np.diff(a)
    return np.max(np.abs(d - d.mean())) <= tol * max(d.mean(), 1e-300)


def build_polar_grid(u: VectorField2D, beta: float = 0.75, eta: float | None = None) -> PolarGrid:
    """Polar grid of spacing eta^beta whose lines carry at most the mean-value share of the energy."""
    d = u.domain
    eta = u.eta if eta is None else float(eta)
    if not (0.5 < beta < 1.0):
        raise ValueError("beta must lie in (1/2, 1)")
    if not isinstance(d.curve, CircleCurve):
        raise ValueError("the projection is implemented on disk meshes only")
    if not (_uniform(d.rho) and _uniform(np.append(d.theta, TWO_PI))):
        raise ValueError("the projection needs a uniform polar mesh")
    Rd = d.curve.radius
    L = eta ** beta
    nr, nt = d.n_r, d.n_t
    dr = Rd / nr
    dth = TWO_PI / nt
    if L < 3.0 * max(dr, Rd * dth):
        raise ResolutionError(f"grid spacing eta^beta = {L:.4g} is below three mesh cells "
                              f"(dr = {dr:.3g}, R dtheta = {Rd * dth:.3g})")
    m = int(round(L / dr))
    Leff = m * dr
    e = _node_density(u)
    radii = d.rho * Rd
    # energy on each full circle (ring i = 1..nr)
    E_ring = np.zeros(nr + 1)
    E_ring[1:] = e[1:].reshape(nr, nt).sum(axis=1) * radii[1:] * dth
    ev = energy(u)
    E_vol = float(ev.dirichlet + ev.penalty)
    bound = 2.0 * E_vol / Leff
    target = Rd / (1.0 + L)
    egrid = e[1:].reshape(nr, nt)

    def layout(i0):
        circ = np.arange(i0, nr + 1, m)
        circ = circ[circ < nr]                           # stay strictly inside the disk
        if len(circ) < 2:
            return None
        k_out = int(np.argmin(np.abs(radii[circ] - target)))
        circ = circ[:k_out + 1]
        if len(circ) < 2:
            return None
        central = 1 if radii[circ[0]] >= 0.5 * Leff else 2
        ring_lines = circ[central - 1:]
        e_circ = float(E_ring[ring_lines].sum())
        sectors, shifts, e_rays = [], [], 0.0
        for a, b in zip(ring_lines[:-1], ring_lines[1:]):
            rm = 0.5 * (radii[a] + radii[b])
            mk = max(3, int(round(TWO_PI * rm / Leff)))
            base = np.rint(np.arange(mk) * nt / mk).astype(int)
            period = max(1, int(round(nt / mk)))
            # ray energy: trapezoid in r over rings a..b (ends are on circles, weight 1/2)
            w = np.full(b - a + 1, dr)
            w[0] = w[-1] = 0.5 * dr
            col = (egrid[a - 1:b, :] * w[:, None]).sum(axis=0)
            inner = col - 0.5 * dr * (egrid[a - 1] + egrid[b - 1])   # circles are counted separately
            cost = np.array([inner[(base + s) % nt].sum() for s in range(period)])
            s = int(np.argmin(cost))
            sectors.append(np.sort((base + s) % nt))
            shifts.append(s * dth)
            e_rays += float(cost[s])
        return ring_lines, sectors, shifts, e_circ + e_rays

    best = None
    for i0 in range(1, m + 1):
        lay = layout(i0)
        if lay is None:
            continue
        ring_lines, sectors, shifts, eg = lay
        feasible = eg <= bound
        key = (not feasible, abs(radii[ring_lines[-1]] - target), eg)
        if best is None or key < best[0]:
            best = (key, i0, lay)
    if best is None:
        raise ResolutionError("domain too small for the requested grid spacing")
    _, i0, (ring_lines, sectors, shifts, eg) = best

    cells = [("center", int(ring_lines[0]))]
    for k, (a, b) in enumerate(zip(ring_lines[:-1], ring_lines[1:])):
        js = sectors[k]
        for l in range(len(js)):
            cells.append(("sector", int(a), int(b), int(js[l]), int(js[(l + 1) % len(js)])))
    return PolarGrid(L=L, beta=beta, eta=eta, R=float(radii[i0]), circles=np.asarray(ring_lines),
                     sectors=sectors, theta_shift=shifts, central_ring=int(ring_lines[0]),
                     R_out=float(radii[ring_lines[-1]]), grid_energy=eg, bound=bound, volume_energy=E_vol,
                     cells=cells)


def _cell_loop(d: Domain, cell) -> np.ndarray:
    nt = d.n_t
    if cell[0] == "center":
        i = cell[1]
        return d.node_index(i, np.arange(nt))
    _, a, b, j0, j1 = cell
    span = (j1 - j0) % nt or nt
    js = (j0 + np.arange(span + 1)) % nt
    bottom = d.node_index(a, js)
    right = d.node_index(np.arange(a + 1, b), j1)
    top = d.node_index(b, js[::-1])
    left = d.node_index(np.arange(b - 1, a, -1), j0)
    return np.concatenate([bottom, right, top, left])


def _winding(z) -> int:
    zc = np.append(z, z[0])
    return int(np.rint(np.sum(np.angle(zc[1:] * np.conj(zc[:-1]))) / TWO_PI))


@dataclass
class ProjectionReport:
    l2_sq: float
    boundary_l2_sq: float
    energy_in: dict
    energy_out: dict
    sup_modulus_defect: float
    min_modulus: float
    nonzero_degrees: int
    degrees: list
    grid: dict
    solver: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _NewtonResult:
    x: np.ndarray
    f: float
    iterations: int
    grad_norm: float
    status: str


def _gl_newton(K, rhs, mass, eta, w0, max_iters=100, tol=1e-10):
    """Damped Newton for  w.Kw + 2 w.rhs + sum m (1-|w|^2)^2 / eta^2  (componentwise K).

    The Hessian is regularized by a multiple of the lumped mass whenever the
    Newton step fails to be a descent direction; steps use Armijo backtracking.
    """
    from scipy.sparse.linalg import spsolve

    n = len(mass)
    eta2 = eta ** 2
    K2 = sp.block_diag([K, K], format="csr")

    def fg(w):
        s = 1.0 - (w ** 2).sum(axis=1)
        Kw = np.stack([K @ w[:, 0], K @ w[:, 1]], axis=1)
        f = float((w * Kw).sum() + 2.0 * (w * rhs).sum() + mass @ s ** 2 / eta2)
        g = 2.0 * Kw + 2.0 * rhs - (4.0 / eta2) * (mass * s)[:, None] * w
        return f, g

    w = np.array(w0, dtype=float)
    f, g = fg(w)
    status = "max_iters"
    it = 0
    metric = np.maximum(mass, 1e-300)
    gnorm = float(np.sqrt(np.sum((g ** 2).sum(axis=1) / metric)))
    for it in range(1, max_iters + 1):
        s = 1.0 - (w ** 2).sum(axis=1)
        c = (4.0 / eta2) * mass
        h11 = -c * s + 2 * c * w[:, 0] ** 2
        h22 = -c * s + 2 * c * w[:, 1] ** 2
        h12 = 2 * c * w[:, 0] * w[:, 1]
        P = sp.bmat([[sp.diags(h11), sp.diags(h12)], [sp.diags(h12), sp.diags(h22)]], format="csr")
        H = 2.0 * K2 + P
        gv = np.concatenate([g[:, 0], g[:, 1]])
        shift = 0.0
        for _ in range(30):
            Hs = H if shift == 0.0 else H + sp.diags(np.tile(shift * metric, 2))
            dv = -spsolve(Hs.tocsc(), gv)
            slope = gv @ dv
            if np.all(np.isfinite(dv)) and slope < 0:
                break
            shift = max(10.0 * shift, 1e-3 * float(np.max(np.abs(H.diagonal())) / np.max(metric)))
        else:
            dv = -gv
            slope = gv @ dv
        dw = np.stack([dv[:n], dv[n:]], axis=1)
        if -slope <= 1e-15 * max(1.0, abs(f)):
            status = "converged"
            break
        t = 1.0
        while t > 1e-12:
            fn, gn = fg(w + t * dw)
            if fn <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            status = "precision"
            break
        w = w + t * dw
        f, g = fn, gn
        gnorm = float(np.sqrt(np.sum((g ** 2).sum(axis=1) / metric)))
        if gnorm <= tol:
            status = "converged"
            break
    return _NewtonResult(w, f, it, gnorm, status)


def project_to_s1(u: VectorField2D, beta: float = 0.75, max_iters: int = 100, grad_tol: float = 1e-9):
    """Unit-length approximation U of u and a report of the approximation errors."""
    d = u.domain
    grid = build_polar_grid(u, beta)
    nt = d.n_t
    ring = _ring_of_node(d)
    i_out = int(grid.circles[-1])

    fixed = np.zeros(len(d.nodes), dtype=bool)
    for c in grid.circles:
        fixed[d.node_index(c, np.arange(nt))] = True
    for k, (a, b) in enumerate(zip(grid.circles[:-1], grid.circles[1:])):
        for j in grid.sectors[k]:
            fixed[d.node_index(np.arange(a + 1, b), j)] = True
    inside = ring <= i_out
    free = inside & ~fixed

    bmod = np.abs(u.complex[fixed & inside])
    if np.min(bmod) < 0.5:
        raise VortexInCellError(f"|u| = {np.min(bmod):.3f} < 1/2 on a grid line: a vortex sits on the grid")

    tin = np.all(inside[d.triangles], axis=1)
    tri = d.triangles[tin]
    g = d.grad_basis[tin]
    loc = np.einsum("tad,tbd->tab", g, g) * d.weights[tin][:, None, None]
    n = len(d.nodes)
    K = sp.csr_matrix((loc.ravel(), (np.repeat(tri, 3, axis=1).ravel(), np.tile(tri, (1, 3)).ravel())), shape=(n, n))
    mass = np.bincount(tri.ravel(), weights=np.repeat(d.weights[tin] / 3.0, 3), minlength=n)
    fi = np.flatnonzero(free)
    Kff = K[fi][:, fi].tocsr()
    Kfb = K[fi][:, np.flatnonzero(~free)].tocsr()
    ub = u.values[~free]
    rhs_fixed = np.stack([Kfb @ ub[:, 0], Kfb @ ub[:, 1]], axis=1)
    mf = mass[fi]

    res = _gl_newton(Kff, rhs_fixed, mf, u.eta, u.values[fi], max_iters=max_iters, tol=grad_tol)
    w = u.values.copy()
    w[fi] = res.x
    wmod = np.hypot(w[:, 0], w[:, 1])
    min_mod = float(np.min(wmod[inside]))
    if min_mod < 0.5:
        raise VortexInCellError(f"cell minimizer has |w| = {min_mod:.3f} < 1/2: a vortex is trapped in a cell")
    wz = w[:, 0] + 1j * w[:, 1]
    degrees = [_winding(wz[_cell_loop(d, c)]) for c in grid.cells]

    Uhat = w / wmod[:, None]
    # constant radial extension beyond the outer circle so interpolation is well defined there
    outer = ~inside
    jo = (np.arange(n)[outer] - 1) % nt
    Uhat[outer] = Uhat[d.node_index(i_out, jo)]
    Rd = d.curve.radius
    scale = grid.R_out / Rd
    pts = d.center + (d.nodes - d.center) * scale
    V = d.interpolate(Uhat, pts)
    U = V / np.hypot(V[:, 0], V[:, 1])[:, None]
    Uf = u.with_values(U)

    e_in, e_out = energy(u), energy(Uf)
    rep = ProjectionReport(
        l2_sq=l2_norm(d, U - u.values) ** 2,
        boundary_l2_sq=boundary_l2_norm(d, U - u.values) ** 2,
        energy_in=e_in.to_dict(), energy_out=e_out.to_dict(),
        sup_modulus_defect=float(np.max(np.abs(wmod[inside] ** 2 - 1.0))),
        min_modulus=min_mod,
        nonzero_degrees=int(sum(1 for k in degrees if k != 0)),
        degrees=degrees,
        grid=grid.to_dict(),
        solver={"iterations": res.iterations, "grad_norm": res.grad_norm, "status": res.status},
    )
    return Uf, rep
