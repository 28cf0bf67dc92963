"""Descent minimization of the discrete energy and eps-continuation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .energy import EnergyBreakdown, VectorField2D, energy, energy_and_gradient, stiffness
from .geometry import Domain

log = logging.getLogger(__name__)


class LineSearchError(RuntimeError):
    """Backtracking failed; ``last`` holds the last accepted iterate."""

    def __init__(self, msg, last=None, stage=None):
        super().__init__(msg)
        self.last = last
        self.stage = stage


@dataclass
class MinimizeConfig:
    max_iters: int = 20000
    grad_tol: float = 1e-5
    backtrack: float = 0.5
    armijo: float = 1e-4
    memory: int = 12
    max_backtracks: int = 50
    seed: int = 0
    precondition: bool = True

    def __post_init__(self):
        if not (0.0 < self.backtrack < 1.0):
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.grad_tol <= 0 or self.armijo <= 0 or self.max_iters < 0 or self.memory < 1:
            raise ValueError("tolerances and memory must be positive")


@dataclass
class Schedule:
    eps_list: Sequence[float]
    eta_list: Optional[Sequence[float]] = None
    eta_exponent: float = 3.0

    def __post_init__(self):
        eps = np.asarray(self.eps_list, dtype=float)
        if len(eps) == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("eps_list must be positive and strictly decreasing")
        if self.eta_list is None and self.eta_exponent < 2:
            raise ValueError("eta exponent must be >= 2")
        if self.eta_list is not None and len(self.eta_list) != len(eps):
            raise ValueError("eta_list length must match eps_list")
        if np.any(np.asarray(self.etas) >= eps):
            raise ValueError("need eta < eps at every stage")

    @property
    def etas(self):
        if self.eta_list is not None:
            return [float(e) for e in self.eta_list]
        return [float(e) ** self.eta_exponent for e in self.eps_list]

    def stages(self):
        return list(zip([float(e) for e in self.eps_list], self.etas))


@dataclass
class OptimizeResult:
    x: np.ndarray
    f: float
    iterations: int
    grad_norm: float
    status: str
    history: list = field(default_factory=list)


def lbfgs(fun: Callable, x0: np.ndarray, *, metric=None, precond=None, max_iters=1000, grad_tol=1e-6,
          memory=10, armijo=1e-4, backtrack=0.5, max_backtracks=50, callback=None,
          stall_window=200) -> OptimizeResult:
    """Limited-memory BFGS with Armijo backtracking.

    ``fun(x) -> (f, g)``.  ``metric`` (positive weights) defines the gradient
    norm sqrt(sum g^2 / metric).  ``precond(x, v)`` applies an approximate
    inverse Hessian and serves as the initial matrix of the two-loop recursion.
    The run stops with status ``precision`` when the energy has not moved
    beyond round-off over ``stall_window`` iterations; that is reported, not
    counted as convergence.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    hist = [f]
    S, Y, rho = [], [], []

    def gnorm(gv):
        return float(np.sqrt(np.sum(gv * gv / metric))) if metric is not None else float(np.linalg.norm(gv))

    def h0(v):
        return precond(x, v) if precond is not None else v

    gn = gnorm(g)
    it = 0
    status = "converged" if gn <= grad_tol else "max_iters"
    while gn > grad_tol and it < max_iters:
        q = g.copy()
        alph = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * (s @ q)
            alph.append(a)
            q -= a * y
        r_ = h0(q)
        if S:
            hy = h0(Y[-1])
            r_ *= (S[-1] @ Y[-1]) / (Y[-1] @ hy)
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alph)):
            b = r * (y @ r_)
            r_ += (a - b) * s
        d = -r_
        slope = g @ d
        if not slope < 0:
            S, Y, rho = [], [], []
            d = -h0(g)
            slope = g @ d
        step = 1.0
        if not S:
            # first step or restart: keep the trial move moderate
            step = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for attempt in range(2):
            t = step
            for _ in range(max_backtracks):
                xn = x + t * d
                fn, gn_vec = fun(xn)
                if np.isfinite(fn) and fn <= f + armijo * t * slope:
                    accepted = True
                    break
                t *= backtrack
            if accepted:
                break
            if not S:
                break
            # curvature information broke down: retry along the preconditioned gradient
            S, Y, rho = [], [], []
            d = -h0(g)
            slope = g @ d
            step = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        if not accepted:
            # no representable decrease left
            if abs(slope) <= 1e-13 * max(1.0, abs(f)) or fn <= f + 1e-13 * max(1.0, abs(f)):
                status = "precision"
                break
            raise LineSearchError(f"line search failed at iteration {it} (f={f:.6g}, |g|={gn:.3g})", last=x.copy())
        s = xn - x
        y = gn_vec - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            S.append(s)
            Y.append(y)
            rho.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), rho.pop(0)
        x, f, g = xn, fn, gn_vec
        gn = gnorm(g)
        hist.append(f)
        it += 1
        if callback is not None:
            callback(it, x, f, gn)
        if gn <= grad_tol:
            status = "converged"
        elif stall_window and it >= stall_window and hist[-stall_window - 1] - f <= 1e-13 * max(1.0, abs(f)):
            status = "precision"
            break
    return OptimizeResult(x, f, it, gn, status, hist)


# ---------------------------------------------------------------------------

def block_preconditioner(kdiag, mass, eta, bweight=None, normals=None):
    """Inverse of the per-node 2x2 Hessian approximation

    B_i = a_i I + p_i u u^T + q_i n n^T with a = 2 K_ii + 4 m (|u|^2-1)^+ / eta^2,
    p = 8 m / eta^2 and q the anchoring weight.  Returns ``apply(u, v)`` on
    (n, 2) arrays.
    """
    kdiag = np.asarray(kdiag, dtype=float)
    mass = np.asarray(mass, dtype=float)
    q = np.zeros(len(mass)) if bweight is None else np.asarray(bweight, dtype=float)
    nrm = np.zeros((len(mass), 2)) if normals is None else np.asarray(normals, dtype=float)

    def apply(u, v):
        r2 = (u ** 2).sum(axis=1)
        a = 2.0 * kdiag + (4.0 / eta ** 2) * mass * np.maximum(r2 - 1.0, 0.0) + 1e-12
        p = (8.0 / eta ** 2) * mass
        b11 = a + p * u[:, 0] ** 2 + q * nrm[:, 0] ** 2
        b22 = a + p * u[:, 1] ** 2 + q * nrm[:, 1] ** 2
        b12 = p * u[:, 0] * u[:, 1] + q * nrm[:, 0] * nrm[:, 1]
        det = b11 * b22 - b12 ** 2
        return np.stack([(b22 * v[:, 0] - b12 * v[:, 1]) / det, (b11 * v[:, 1] - b12 * v[:, 0]) / det], axis=1)

    return apply


def _block_precond(shape, domain: Domain, eps, eta):
    n = len(domain.nodes)
    bw = np.zeros(n)
    nrm = np.zeros((n, 2))
    bw[domain.boundary] = 2.0 * domain.boundary_weights / (2 * np.pi * eps)
    nrm[domain.boundary] = domain.normal
    ap = block_preconditioner(stiffness(domain).diagonal(), domain.node_mass, eta, bw, nrm)
    return lambda x, v: ap(x.reshape(shape), v.reshape(shape)).ravel()


@dataclass
class MinimizeResult:
    field: VectorField2D
    energy: EnergyBreakdown
    iterations: int
    grad_norm: float
    status: str
    history: list

    def __iter__(self):
        return iter((self.field, self.energy, self.iterations))

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _metric(domain: Domain):
    return np.repeat(domain.node_mass, 2)


def minimize(u0: VectorField2D, cfg: MinimizeConfig | None = None, callback=None) -> MinimizeResult:
    """Minimize E_{eps,eta} over all nodal values starting from u0."""
    cfg = cfg or MinimizeConfig()
    dom = u0.domain
    shape = u0.values.shape

    def fun(x):
        e, g = energy_and_gradient(u0.with_values(x.reshape(shape)))
        return e.total, g.ravel()

    pre = _block_precond(shape, dom, u0.eps, u0.eta) if cfg.precondition else None
    try:
        res = lbfgs(fun, u0.values.ravel(), metric=_metric(dom), precond=pre, max_iters=cfg.max_iters,
                    grad_tol=cfg.grad_tol, memory=cfg.memory, armijo=cfg.armijo, backtrack=cfg.backtrack,
                    max_backtracks=cfg.max_backtracks, callback=callback)
    except LineSearchError as exc:
        exc.last = u0.with_values(exc.last.reshape(shape))
        raise
    u = u0.with_values(res.x.reshape(shape))
    e = energy(u)
    log.info("minimize eps=%g eta=%g: E=%.8g iters=%d |g|=%.2e (%s)", u.eps, u.eta, e.total,
             res.iterations, res.grad_norm, res.status)
    return MinimizeResult(u, e, res.iterations, res.grad_norm, res.status, res.history)


@dataclass
class StageRecord:
    eps: float
    eta: float
    field: VectorField2D
    energy: EnergyBreakdown
    iters: int
    grad_norm: float
    status: str

    def to_dict(self) -> dict:
        return {"eps": self.eps, "eta": self.eta, "energy": self.energy.to_dict(), "iters": self.iters,
                "grad_norm": self.grad_norm, "status": self.status}


def continuation(u0: VectorField2D, schedule: Schedule, cfg: MinimizeConfig | None = None,
                 warm_start: bool = True, on_stage=None) -> list[StageRecord]:
    """Minimize along the eps schedule, warm-starting each stage."""
    out = []
    u = u0
    for k, (eps, eta) in enumerate(schedule.stages()):
        start = u.with_values(u.values if warm_start else u0.values, eps=eps, eta=eta)
        try:
            res = minimize(start, cfg)
        except LineSearchError as exc:
            exc.stage = k
            raise
        rec = StageRecord(eps, eta, res.field, res.energy, res.iterations, res.grad_norm, res.status)
        out.append(rec)
        if on_stage is not None:
            on_stage(rec)
        u = res.field
    return out


def init_field(domain: Domain, kind: str = "constant", seed: int = 0, eps: float = 0.1, eta: float | None = None,
               angles: Sequence[float] = (0.0, np.pi)) -> VectorField2D:
    """Initial fields: ``constant``, ``tangent``, ``random``, ``two-vortex`` or ``reflected``.

    ``reflected`` is x-bar/|x| (boundary winding -1), whose boundary data carries four unit vortices.
    """
    eta = eps ** 3 if eta is None else eta
    x = domain.nodes - domain.center
    if kind == "constant":
        vals = np.tile([1.0, 0.0], (len(x), 1))
    elif kind == "tangent":
        scale = np.max(np.hypot(x[:, 0], x[:, 1]))
        vals = np.stack([-x[:, 1], x[:, 0]], axis=1) / scale
    elif kind == "random":
        rng = np.random.default_rng(seed)
        scale = np.max(np.abs(x))
        phase = np.zeros(len(x))
        for a in range(4):
            for b in range(4 - a):
                phase += rng.normal() * (x[:, 0] / scale) ** a * (x[:, 1] / scale) ** b
        vals = np.stack([np.cos(phase), np.sin(phase)], axis=1)
    elif kind in ("two-vortex", "two-vortex-ansatz"):
        from .jacobian import VortexSet
        from .renorm import recovery_phase
        vs = VortexSet(list(angles), [1] * len(angles))
        psi = recovery_phase(domain, vs, eps)
        vals = np.stack([np.cos(psi), np.sin(psi)], axis=1)
    elif kind == "reflected":
        phase = -np.arctan2(x[:, 1], x[:, 0])
        vals = np.stack([np.cos(phase), np.sin(phase)], axis=1)
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return VectorField2D(vals, domain, eps, eta)
