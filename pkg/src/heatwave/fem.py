"""Continuous Lagrange finite elements with homogeneous Dirichlet data.

Spaces of degree 1 and 2 on conforming triangulations.  Fields carry
coefficients on interior degrees of freedom only; the zero boundary trace is
built into the algebra.  Bilinear forms are assembled with symmetric
triangle quadrature exact to degree 2r + 2, weighted variants evaluate the
weight pointwise at quadrature nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field as _dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError, locate_point
from .quadrature import triangle_rule

__all__ = [
    "FemError",
    "FeSpace",
    "NodalField",
    "ComplexField",
    "SparseSym",
    "NormKind",
    "build_space",
    "assemble",
    "project",
    "inv_laplacian",
    "evaluate",
    "norm",
]


class FemError(ValueError):
    """Invalid finite element input: unsupported degree, shapes, or kinds."""


def _shape_values(r: int, bary: np.ndarray) -> np.ndarray:
    """Shape function values at barycentric points, (npts, ndof_local)."""
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    if r == 1:
        return np.column_stack([l0, l1, l2])
    if r == 2:
        return np.column_stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ]
        )
    raise FemError(f"polynomial degree r={r} not supported (r in {{1, 2}})")


def _shape_grads_ref(r: int, bary: np.ndarray) -> np.ndarray:
    """Reference-coordinate gradients, (npts, ndof_local, 2).

    Reference coordinates (xi, eta) with lambda = (1 - xi - eta, xi, eta).
    """
    npts = len(bary)
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    if r == 1:
        g = np.empty((npts, 3, 2))
        g[:, 0] = (-1.0, -1.0)
        g[:, 1] = (1.0, 0.0)
        g[:, 2] = (0.0, 1.0)
        return g
    if r == 2:
        # d/dlambda of each shape, then chain rule via dlambda/d(xi,eta).
        dl = np.zeros((npts, 6, 3))
        dl[:, 0, 0] = 4 * l0 - 1
        dl[:, 1, 1] = 4 * l1 - 1
        dl[:, 2, 2] = 4 * l2 - 1
        dl[:, 3, 0] = 4 * l1
        dl[:, 3, 1] = 4 * l0
        dl[:, 4, 1] = 4 * l2
        dl[:, 4, 2] = 4 * l1
        dl[:, 5, 2] = 4 * l0
        dl[:, 5, 0] = 4 * l2
        g = np.empty((npts, 6, 2))
        g[:, :, 0] = dl[:, :, 1] - dl[:, :, 0]
        g[:, :, 1] = dl[:, :, 2] - dl[:, :, 0]
        return g
    raise FemError(f"polynomial degree r={r} not supported (r in {{1, 2}})")


class _Sampler:
    """Per-cell sample set: barycentric lattice plus quadrature points.

    The lattice uses 4(r + 1) subdivisions per edge; quadrature points of
    the degree 2r + 2 rule are appended so sampled and integrated norms see
    the same locations.
    """

    def __init__(self, space: "FeSpace"):
        r = space.r
        m = 4 * (r + 1)
        lat = [
            (i / m, j / m, (m - i - j) / m)
            for i in range(m + 1)
            for j in range(m + 1 - i)
        ]
        qb, qw = triangle_rule(2 * r + 2)
        self.n_lattice = len(lat)
        self.quad_weights = qw
        bary = np.vstack([np.array(lat), qb])
        self.bary = bary
        self.vals = _shape_values(r, bary)
        self.grads_ref = _shape_grads_ref(r, bary)
        mesh = space.mesh
        corners = mesh.vertices[mesh.cells]
        self.coords = np.einsum("pk,ckd->cpd", bary, corners)
        self.quad_coords = self.coords[:, self.n_lattice :, :]

    def values(self, space: "FeSpace", full: np.ndarray) -> np.ndarray:
        """Field values at all sample points, (nc, npts)."""
        return np.einsum("cn,pn->cp", full[space.cell_dofs], self.vals)

    def gradients(self, space: "FeSpace", full: np.ndarray) -> np.ndarray:
        """Field gradients at all sample points, (nc, npts, 2)."""
        _, _, binv = space.mesh._geometry()
        t = np.einsum("cn,pnj->cpj", full[space.cell_dofs], self.grads_ref)
        return np.einsum("cji,cpj->cpi", binv, t)


class FeSpace:
    """Lagrange space of degree r on a mesh, Dirichlet dofs eliminated.

    Degrees of freedom are vertices (r = 1) plus lexicographically sorted
    edge midpoints (r = 2); the enumeration is deterministic for a given
    mesh.
    """

    def __init__(self, mesh: Mesh, r: int):
        if r not in (1, 2):
            raise FemError(f"polynomial degree r={r} not supported (r in {{1, 2}})")
        self.mesh = mesh
        self.r = r

        edge_count: dict[tuple[int, int], int] = {}
        for a, b, c in mesh.cells:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                edge_count[key] = edge_count.get(key, 0) + 1
        edges = sorted(edge_count)
        edge_index = {e: i for i, e in enumerate(edges)}
        self.edges = np.array(edges, dtype=np.int64)

        if r == 1:
            self.ndof = mesh.nv
            self.dof_points = mesh.vertices.copy()
            dof_boundary = mesh.boundary.copy()
            self.cell_dofs = mesh.cells.copy()
        else:
            self.ndof = mesh.nv + len(edges)
            mids = 0.5 * (mesh.vertices[self.edges[:, 0]] + mesh.vertices[self.edges[:, 1]])
            self.dof_points = np.vstack([mesh.vertices, mids])
            dof_boundary = np.zeros(self.ndof, dtype=bool)
            dof_boundary[: mesh.nv] = mesh.boundary
            for e, cnt in edge_count.items():
                if cnt == 1:
                    dof_boundary[mesh.nv + edge_index[e]] = True
            cd = np.empty((mesh.nc, 6), dtype=np.int64)
            cd[:, :3] = mesh.cells
            for ci, (a, b, c) in enumerate(mesh.cells):
                cd[ci, 3] = mesh.nv + edge_index[(min(a, b), max(a, b))]
                cd[ci, 4] = mesh.nv + edge_index[(min(b, c), max(b, c))]
                cd[ci, 5] = mesh.nv + edge_index[(min(c, a), max(c, a))]
            self.cell_dofs = cd

        self.interior = ~dof_boundary
        self.interior_dofs = np.nonzero(self.interior)[0]
        self.n_interior = int(self.interior.sum())
        # Position of each dof in the interior numbering, -1 on the boundary.
        self.interior_pos = np.full(self.ndof, -1, dtype=np.int64)
        self.interior_pos[self.interior_dofs] = np.arange(self.n_interior)
        self._cache: dict = {}

    def full_vector(self, u) -> np.ndarray:
        """Extend interior coefficients by the zero boundary trace."""
        coeffs = u.coeffs if isinstance(u, (NodalField, ComplexField)) else np.asarray(u)
        if coeffs.shape == (self.ndof,):
            return coeffs
        if coeffs.shape != (self.n_interior,):
            raise FemError(
                f"coefficient vector has length {coeffs.shape}, expected"
                f" {self.n_interior} interior or {self.ndof} total dofs"
            )
        full = np.zeros(self.ndof, dtype=coeffs.dtype)
        full[self.interior_dofs] = coeffs
        return full

    def sampler(self) -> _Sampler:
        if "sampler" not in self._cache:
            self._cache["sampler"] = _Sampler(self)
        return self._cache["sampler"]

    def mass(self) -> "SparseSym":
        if "mass" not in self._cache:
            self._cache["mass"] = assemble(self, "mass")
        return self._cache["mass"]

    def stiffness(self) -> "SparseSym":
        if "stiffness" not in self._cache:
            self._cache["stiffness"] = assemble(self, "stiffness")
        return self._cache["stiffness"]


def build_space(mesh: Mesh, r: int) -> FeSpace:
    """Construct the degree-r Lagrange space on a validated mesh."""
    return FeSpace(mesh, r)


@dataclass
class NodalField:
    """Real field: interior coefficients of a Lagrange function."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n_interior,):
            raise FemError(
                f"expected {self.space.n_interior} interior coefficients,"
                f" got shape {self.coeffs.shape}"
            )


@dataclass
class ComplexField:
    """Complex-valued field on the same interior dof layout."""

    space: FeSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.space.n_interior,):
            raise FemError(
                f"expected {self.space.n_interior} interior coefficients,"
                f" got shape {self.coeffs.shape}"
            )


class SparseSym:
    """Symmetric sparse operator with a cached direct factorization.

    solve() runs sparse LU with iterative refinement to a 1e-12 relative
    residual and falls back to conjugate gradients if the factorization
    cannot reach that.  Complex right-hand sides are solved componentwise
    (the matrix is real).
    """

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = sp.csr_matrix(matrix)
        self._lu = None

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def _factor(self):
        if self._lu is None:
            self._lu = spla.splu(sp.csc_matrix(self.matrix))
        return self._lu

    def solve(self, b: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self.solve(b.real, tol) + 1j * self.solve(b.imag, tol)
        scale = np.linalg.norm(b)
        if scale == 0.0:
            return np.zeros_like(b)
        lu = self._factor()
        x = lu.solve(b)
        for _ in range(4):
            r = b - self.matrix @ x
            if np.linalg.norm(r) <= tol * scale:
                return x
            x = x + lu.solve(r)
        r = b - self.matrix @ x
        if np.linalg.norm(r) <= tol * scale:
            return x
        x, info = spla.cg(self.matrix, b, x0=x, rtol=tol, maxiter=10 * len(b))
        if info != 0:
            raise FemError(f"linear solve stalled (cg info={info})")
        return x

    def quad(self, u: np.ndarray, v: np.ndarray | None = None):
        """Quadratic or bilinear form u* A v (conjugating the left factor)."""
        if v is None:
            v = u
        return np.vdot(u, self.matrix @ v)


def _assemble_full(space: FeSpace, kind: str, weight=None, power: float = 0.0):
    mesh = space.mesh
    bary, qw = triangle_rule(2 * space.r + 2)
    vals = _shape_values(space.r, bary)
    grads_ref = _shape_grads_ref(space.r, bary)
    corners = mesh.vertices[mesh.cells]
    factor = qw[None, :] * mesh.areas[:, None]
    if weight is not None and power != 0.0:
        pts = np.einsum("pk,ckd->cpd", bary, corners)
        factor = factor * weight(pts) ** power

    if kind in ("mass", "weighted_mass"):
        elem = np.einsum("cq,qi,qj->cij", factor, vals, vals)
    elif kind in ("stiffness", "weighted_stiffness"):
        _, _, binv = mesh._geometry()
        g = np.einsum("cji,pnj->cpni", binv, grads_ref)
        elem = np.einsum("cq,cqid,cqjd->cij", factor, g, g)
    else:
        raise FemError(f"unknown form kind {kind!r}")

    nd = space.cell_dofs.shape[1]
    rows = np.repeat(space.cell_dofs, nd, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, nd)).ravel()
    mat = sp.coo_matrix(
        (elem.ravel(), (rows, cols)), shape=(space.ndof, space.ndof)
    ).tocsr()
    return mat


def assemble(
    space: FeSpace,
    kind: str,
    weight=None,
    power: float = 0.0,
    interior_only: bool = True,
) -> SparseSym:
    """Assemble a symmetric bilinear form.

    kind is one of 'mass', 'stiffness', 'weighted_mass', 'weighted_stiffness';
    weighted forms multiply the integrand by weight(x)**power at quadrature
    points.  By default the matrix is restricted to interior dofs.
    """
    if kind in ("weighted_mass", "weighted_stiffness") and weight is None:
        raise FemError(f"form kind {kind!r} requires a weight")
    mat = _assemble_full(space, kind, weight, power)
    if interior_only:
        idx = space.interior_dofs
        mat = mat[idx][:, idx]
    return SparseSym(mat)


def project(space: FeSpace, v, kind: str, gradient=None) -> NodalField:
    """Project a function onto the space: 'l2', 'ritz', or 'nodal'.

    v is evaluated at quadrature points as v(pts) with pts of shape
    (..., 2); the Ritz projection requires `gradient`, returning shape
    (..., 2).
    """
    if isinstance(v, NodalField):
        if v.space is not space:
            raise FemError("field belongs to a different space")
        return NodalField(space, v.coeffs.copy())
    if kind == "nodal":
        pts = space.dof_points[space.interior_dofs]
        return NodalField(space, np.asarray(v(pts), dtype=float))

    mesh = space.mesh
    bary, qw = triangle_rule(2 * space.r + 2)
    corners = mesh.vertices[mesh.cells]
    pts = np.einsum("pk,ckd->cpd", bary, corners)
    factor = qw[None, :] * mesh.areas[:, None]
    if kind == "l2":
        vals = _shape_values(space.r, bary)
        local = np.einsum("cq,qn->cn", factor * v(pts), vals)
        gram = space.mass()
    elif kind == "ritz":
        if gradient is None:
            raise FemError("ritz projection requires the gradient of v")
        _, _, binv = mesh._geometry()
        g = np.einsum("cji,pnj->cpni", binv, _shape_grads_ref(space.r, bary))
        local = np.einsum("cq,cqd,cqnd->cn", factor, gradient(pts), g)
        gram = space.stiffness()
    else:
        raise FemError(f"unknown projection kind {kind!r}")

    rhs = np.zeros(space.ndof)
    np.add.at(rhs, space.cell_dofs.ravel(), local.ravel())
    return NodalField(space, gram.solve(rhs[space.interior_dofs]))


def load_vector(space: FeSpace, v) -> np.ndarray:
    """Interior load vector (v, phi_i) by quadrature; v maps pts to values."""
    mesh = space.mesh
    bary, qw = triangle_rule(2 * space.r + 2)
    corners = mesh.vertices[mesh.cells]
    pts = np.einsum("pk,ckd->cpd", bary, corners)
    vals = _shape_values(space.r, bary)
    local = np.einsum("cq,qn->cn", qw[None, :] * mesh.areas[:, None] * v(pts), vals)
    rhs = np.zeros(space.ndof)
    np.add.at(rhs, space.cell_dofs.ravel(), local.ravel())
    return rhs[space.interior_dofs]


def inv_laplacian(space: FeSpace, u):
    """Discrete solution w of (grad w, grad chi) = (u, chi) for chi in V_h."""
    if isinstance(u, ComplexField):
        coeffs = space.stiffness().solve(space.mass().matrix @ u.coeffs)
        return ComplexField(space, coeffs)
    coeffs = u.coeffs if isinstance(u, NodalField) else np.asarray(u)
    out = space.stiffness().solve(space.mass().matrix @ coeffs)
    if np.iscomplexobj(out):
        return ComplexField(space, out)
    return NodalField(space, out)


def evaluate(space: FeSpace, u, p, mode: str = "value"):
    """Point evaluation of a field; mode 'value' or 'gradient'.

    Points on shared edges resolve through the lowest-cell-index rule of
    locate_point, so evaluations are deterministic.
    """
    full = space.full_vector(u)
    cell, lam = locate_point(space.mesh, p)
    dofs = space.cell_dofs[cell]
    bary = np.asarray(lam)[None, :]
    if mode == "value":
        return full[dofs] @ _shape_values(space.r, bary)[0]
    if mode == "gradient":
        _, _, binv = space.mesh._geometry()
        g = _shape_grads_ref(space.r, bary)[0]
        return (full[dofs] @ g) @ binv[cell]
    raise FemError(f"unknown evaluation mode {mode!r}")


@dataclass(frozen=True)
class NormKind:
    """Norm selector passed to norm(); see the constructors."""

    tag: str
    weight: object = None
    power: float = 0.0

    @staticmethod
    def l2() -> "NormKind":
        return NormKind("l2")

    @staticmethod
    def l1_sampled() -> "NormKind":
        return NormKind("l1_sampled")

    @staticmethod
    def linf_sampled() -> "NormKind":
        return NormKind("linf_sampled")

    @staticmethod
    def w1inf_sampled() -> "NormKind":
        return NormKind("w1inf_sampled")

    @staticmethod
    def weighted_l2(weight, power: float) -> "NormKind":
        return NormKind("weighted_l2", weight, float(power))

    @staticmethod
    def weighted_hm1(weight) -> "NormKind":
        return NormKind("weighted_hm1", weight, float(weight.dim))


def norm(space: FeSpace, u, kind: NormKind) -> float:
    """Norm of a field.

    l2 uses the mass form; sampled kinds evaluate on the per-cell lattice
    plus quadrature points; weighted kinds integrate weight**power times
    the square at quadrature points; weighted_hm1 is the weighted L2 norm
    of grad(inv_laplacian(u)).
    """
    if kind.tag == "l2":
        coeffs = u.coeffs if isinstance(u, (NodalField, ComplexField)) else np.asarray(u)
        if coeffs.shape == (space.ndof,):
            coeffs = coeffs[space.interior_dofs]
        return float(np.sqrt(space.mass().quad(coeffs).real))

    smp = space.sampler()
    if kind.tag == "weighted_hm1":
        w = inv_laplacian(space, u)
        grads = smp.gradients(space, space.full_vector(w))
        gq = grads[:, smp.n_lattice :, :]
        sig = kind.weight(smp.quad_coords) ** kind.power
        dens = np.einsum("cqd,cqd->cq", gq, gq.conj()).real
        val = np.einsum("c,q,cq->", space.mesh.areas, smp.quad_weights, sig * dens)
        return float(np.sqrt(val))

    full = space.full_vector(u)
    if kind.tag == "l1_sampled":
        vals = smp.values(space, full)[:, smp.n_lattice :]
        return float(
            np.einsum("c,q,cq->", space.mesh.areas, smp.quad_weights, np.abs(vals))
        )
    if kind.tag == "linf_sampled":
        return float(np.abs(smp.values(space, full)).max())
    if kind.tag == "w1inf_sampled":
        grads = smp.gradients(space, full)
        return float(np.sqrt(np.einsum("cpd,cpd->cp", grads, grads.conj()).real.max()))
    if kind.tag == "weighted_l2":
        vals = smp.values(space, full)[:, smp.n_lattice :]
        sig = kind.weight(smp.quad_coords) ** kind.power
        dens = (vals * vals.conj()).real
        val = np.einsum("c,q,cq->", space.mesh.areas, smp.quad_weights, sig * dens)
        return float(np.sqrt(val))
    raise FemError(f"unknown norm kind {kind.tag!r}")
