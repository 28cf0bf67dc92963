"""Discrete mixed Ginzburg-Landau energy on a polar mesh.

E(u) = int |grad u|^2 + 1/eta^2 int (1-|u|^2)^2 + 1/(2 pi eps) int_bd (u.nu)^2

Gradients are P1 on the straight triangles, weighted by the exact curved
cell areas.  The potential uses lumped (vertex) quadrature, the anchoring
term the trapezoid rule in the boundary parameter with curved arc length.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp

from .geometry import Domain


@dataclass
class EnergyBreakdown:
    dirichlet: float
    penalty: float
    anchoring: float

    @property
    def total(self) -> float:
        return self.dirichlet + self.penalty + self.anchoring

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d

    def __add__(self, other):
        return EnergyBreakdown(self.dirichlet + other.dirichlet, self.penalty + other.penalty,
                               self.anchoring + other.anchoring)


@dataclass(eq=False)
class VectorField2D:
    values: np.ndarray
    domain: Domain
    eps: float
    eta: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.domain.nodes), 2):
            raise ValueError(f"expected values of shape ({len(self.domain.nodes)}, 2), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if not (self.eps > 0 and self.eta > 0):
            raise ValueError("eps and eta must be positive")
        self.eps = float(self.eps)
        self.eta = float(self.eta)

    def with_values(self, values, eps=None, eta=None) -> "VectorField2D":
        return VectorField2D(values, self.domain, self.eps if eps is None else eps,
                             self.eta if eta is None else eta)

    @property
    def modulus(self) -> np.ndarray:
        return np.hypot(self.values[:, 0], self.values[:, 1])

    @property
    def complex(self) -> np.ndarray:
        return self.values[:, 0] + 1j * self.values[:, 1]

    @classmethod
    def from_complex(cls, z, domain, eps, eta):
        return cls(np.stack([z.real, z.imag], axis=1), domain, eps, eta)


# ---------------------------------------------------------------------------

def stiffness(domain: Domain) -> sp.csr_matrix:
    """K with u^T K u = sum_T w_T |grad u_T|^2 (cached on the domain)."""
    K = getattr(domain, "_stiffness", None)
    if K is None:
        g = domain.grad_basis
        loc = np.einsum("tad,tbd->tab", g, g) * domain.weights[:, None, None]
        tri = domain.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        n = len(domain.nodes)
        K = sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(n, n))
        K.sum_duplicates()
        domain._stiffness = K
    return K


def cell_gradients(domain: Domain, values: np.ndarray) -> np.ndarray:
    """Per-triangle gradient. For nodal (N,) input returns (M,2); for (N,2) returns (M,2,2) as [comp, dir]."""
    v = np.asarray(values)[domain.triangles]
    if v.ndim == 2:
        return np.einsum("ta,tad->td", v, domain.grad_basis)
    return np.einsum("tac,tad->tcd", v, domain.grad_basis)


def _anchor_density(u: VectorField2D) -> np.ndarray:
    d = u.domain
    return np.einsum("ij,ij->i", u.values[d.boundary], d.normal) ** 2


def energy(u: VectorField2D) -> EnergyBreakdown:
    d = u.domain
    K = stiffness(d)
    v = u.values
    dir_ = float(v[:, 0] @ (K @ v[:, 0]) + v[:, 1] @ (K @ v[:, 1]))
    pot = (1.0 - (v ** 2).sum(axis=1)) ** 2
    pen = float(d.node_mass @ pot) / u.eta ** 2
    anc = float(d.boundary_weights @ _anchor_density(u)) / (2 * np.pi * u.eps)
    return EnergyBreakdown(max(dir_, 0.0), pen, anc)


def energy_and_gradient(u: VectorField2D):
    """Energy breakdown and the (N,2) gradient with respect to nodal values."""
    d = u.domain
    K = stiffness(d)
    v = u.values
    Kv = np.stack([K @ v[:, 0], K @ v[:, 1]], axis=1)
    dir_ = float((v * Kv).sum())
    s = 1.0 - (v ** 2).sum(axis=1)
    pen = float(d.node_mass @ s ** 2) / u.eta ** 2
    un = np.einsum("ij,ij->i", v[d.boundary], d.normal)
    c = 1.0 / (2 * np.pi * u.eps)
    anc = c * float(d.boundary_weights @ un ** 2)
    grad = 2.0 * Kv - (4.0 / u.eta ** 2) * (d.node_mass * s)[:, None] * v
    np.add.at(grad, d.boundary, 2.0 * c * (d.boundary_weights * un)[:, None] * d.normal)
    return EnergyBreakdown(max(dir_, 0.0), pen, anc), grad


def energy_gradient(u: VectorField2D) -> np.ndarray:
    return energy_and_gradient(u)[1]


def local_energy(u: VectorField2D, mask) -> EnergyBreakdown:
    """Energy on the union of cells selected by ``mask`` (boolean per triangle).

    The anchoring term runs over the boundary edges of the selected cells.
    """
    d = u.domain
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(d.triangles),):
        raise ValueError("mask must have one entry per triangle")
    if not mask.any():
        return EnergyBreakdown(0.0, 0.0, 0.0)
    g = cell_gradients(d, u.values)[mask]
    w = d.weights[mask]
    dir_ = float(np.sum(w * (g ** 2).sum(axis=(1, 2))))
    pot = (1.0 - (u.values ** 2).sum(axis=1)) ** 2
    pen = float(np.sum(w / 3.0 * pot[d.triangles[mask]].sum(axis=1))) / u.eta ** 2
    dens = _anchor_density(u)
    emask = mask[d.edge_triangle]
    jn = np.roll(np.arange(d.n_t), -1)
    anc = np.sum(emask * (d.edge_weights[:, 0] * dens + d.edge_weights[:, 1] * dens[jn]))
    return EnergyBreakdown(dir_, pen, float(anc) / (2 * np.pi * u.eps))


def region_mask(domain: Domain, predicate) -> np.ndarray:
    """Cells whose centroid satisfies ``predicate(x, y)``."""
    c = domain.nodes[domain.triangles].mean(axis=1)
    return np.asarray(predicate(c[:, 0], c[:, 1]), dtype=bool)


def ks_energy(phi, domain: Domain, eps: float, g=None) -> float:
    """Lifted energy int |grad phi|^2 + 1/(2 pi eps) int_bd sin^2(phi - g)."""
    phi = np.asarray(phi, dtype=float)
    if g is None:
        from .lifting import tangent_lifting
        g = tangent_lifting(domain).g
    K = stiffness(domain)
    dir_ = float(phi @ (K @ phi))
    anc = float(domain.boundary_weights @ np.sin(phi[domain.boundary] - g) ** 2) / (2 * np.pi * eps)
    return dir_ + anc


def l2_norm(domain: Domain, values) -> float:
    """Lumped L2 norm of a nodal scalar or vector field."""
    v = np.asarray(values, dtype=float)
    sq = v ** 2 if v.ndim == 1 else (v ** 2).sum(axis=1)
    return float(np.sqrt(domain.node_mass @ sq))


def boundary_l2_norm(domain: Domain, values) -> float:
    v = np.asarray(values, dtype=float)[domain.boundary]
    sq = v ** 2 if v.ndim == 1 else (v ** 2).sum(axis=1)
    return float(np.sqrt(domain.boundary_weights @ sq))


def dirichlet_norm(domain: Domain, values) -> float:
    v = np.asarray(values, dtype=float)
    K = stiffness(domain)
    if v.ndim == 1:
        return float(np.sqrt(max(v @ (K @ v), 0.0)))
    return float(np.sqrt(max(sum(v[:, c] @ (K @ v[:, c]) for c in range(v.shape[1])), 0.0)))


# ---------------------------------------------------------------------------
# snapshots

def save_field(u: VectorField2D, path) -> None:
    header = {"domain": u.domain.describe(), "domain_hash": u.domain.hash(), "eps": u.eps, "eta": u.eta,
              "n_nodes": len(u.values), "rho": [float(r) for r in u.domain.rho],
              "theta": [float(t) for t in u.domain.theta]}
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write("node_id,u1,u2\n")
    for i, (a, b) in enumerate(u.values):
        buf.write(f"{i},{float(a)!r},{float(b)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_field_header(path) -> dict:
    with open(path) as fh:
        line = fh.readline()
    if not line.startswith("# "):
        raise ValueError(f"{path}: missing JSON header")
    return json.loads(line[2:])


def load_field(path, domain: Domain) -> VectorField2D:
    head = read_field_header(path)
    if head["domain_hash"] != domain.hash():
        raise ValueError(f"{path}: snapshot was written for a different mesh")
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    vals = np.zeros((head["n_nodes"], 2))
    vals[data[:, 0].astype(int)] = data[:, 1:3]
    return VectorField2D(vals, domain, head["eps"], head["eta"])


def read_field(path) -> VectorField2D:
    """Load a snapshot together with the mesh it was written on."""
    from .geometry import domain_from_spec

    head = read_field_header(path)
    if "rho" not in head:
        raise ValueError(f"{path}: snapshot carries no grid; use load_field with an explicit domain")
    desc = dict(head["domain"])
    dom = domain_from_spec(desc, n_r=len(head["rho"]) - 1, n_theta=len(head["theta"]),
                           rho=np.array(head["rho"]), theta=np.array(head["theta"]))
    return load_field(path, dom)
