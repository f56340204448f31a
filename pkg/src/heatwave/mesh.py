"""Conforming triangulations of convex polygonal domains.

Provides structured meshes of the unit square, uniform midpoint refinement,
robust point location, and a plain-text exchange format.  Every constructor
validates orientation and conformity, so code downstream can assume
positively oriented cells and matching edges.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "generate_unit_square",
    "refine_uniform",
    "locate_point",
    "save_mesh",
    "load_mesh",
]


class MeshError(ValueError):
    """Invalid mesh data: orientation, conformity, flags, or file format."""


class Mesh:
    """Triangulation with counterclockwise cells and boundary flags.

    Parameters
    ----------
    vertices : (nv, 2) array of float
        Vertex coordinates.
    cells : (nc, 3) array of int
        Vertex indices of each triangle, counterclockwise.
    boundary : (nv,) array of bool, optional
        Boundary-vertex flags.  Derived from edge incidence when omitted;
        when given they must agree with the derived flags.

    Attributes
    ----------
    h : float
        Maximum cell diameter.
    h_min : float
        Minimum cell diameter.
    quality : float
        Quasi-uniformity ratio h / min_cell(sqrt(area)).
    """

    def __init__(self, vertices, cells, boundary=None):
        vertices = np.ascontiguousarray(np.asarray(vertices, dtype=float))
        cells = np.ascontiguousarray(np.asarray(cells, dtype=np.int64))
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an (nv, 2) array")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must be an (nc, 3) array")
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        nv = len(vertices)
        if cells.size and (cells.min() < 0 or cells.max() >= nv):
            raise MeshError("cell vertex index out of range")
        if len(cells) == 0:
            raise MeshError("mesh has no cells")

        self.vertices = vertices
        self.cells = cells

        p0 = vertices[cells[:, 0]]
        p1 = vertices[cells[:, 1]]
        p2 = vertices[cells[:, 2]]
        cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (
            p1[:, 1] - p0[:, 1]
        ) * (p2[:, 0] - p0[:, 0])
        if np.any(cross <= 0.0):
            bad = int(np.argmax(cross <= 0.0))
            raise MeshError(f"cell {bad} is degenerate or inverted")
        self.areas = 0.5 * cross

        derived = self._check_conformity()
        if boundary is None:
            boundary = derived
        else:
            boundary = np.asarray(boundary, dtype=bool)
            if boundary.shape != (nv,):
                raise MeshError("boundary flags must have one entry per vertex")
            if not np.array_equal(boundary, derived):
                raise MeshError("boundary flags inconsistent with edge incidence")
        self.boundary = boundary

        edges = vertices[cells[:, [1, 2, 0]]] - vertices[cells[:, [0, 1, 2]]]
        lengths = np.linalg.norm(edges, axis=2)
        diam = lengths.max(axis=1)
        self.h = float(diam.max())
        self.h_min = float(diam.min())
        self.quality = float(self.h / np.sqrt(self.areas.min()))
        self._geom = None

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nc(self) -> int:
        return len(self.cells)

    def _check_conformity(self) -> np.ndarray:
        """Validate edge incidence; return derived boundary-vertex flags."""
        seen: dict[tuple[int, int], int] = {}
        for ci, (a, b, c) in enumerate(self.cells):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                direction = 1 if u < v else -1
                prev = seen.get(key)
                if prev is None:
                    seen[key] = direction
                elif prev in (1, -1):
                    if prev == direction:
                        raise MeshError(
                            f"edge {key} traversed twice in the same direction"
                            f" (cell {ci}); mesh is nonconforming"
                        )
                    seen[key] = 0
                else:
                    raise MeshError(
                        f"edge {key} shared by more than two cells (cell {ci})"
                    )
        flags = np.zeros(self.nv, dtype=bool)
        for (u, v), state in seen.items():
            if state != 0:
                flags[u] = True
                flags[v] = True
        return flags

    def _geometry(self):
        # Cached affine maps: corner p0, edge matrix B, and inv(B) per cell.
        if self._geom is None:
            p0 = self.vertices[self.cells[:, 0]]
            b = np.empty((self.nc, 2, 2))
            b[:, :, 0] = self.vertices[self.cells[:, 1]] - p0
            b[:, :, 1] = self.vertices[self.cells[:, 2]] - p0
            det = b[:, 0, 0] * b[:, 1, 1] - b[:, 0, 1] * b[:, 1, 0]
            binv = np.empty_like(b)
            binv[:, 0, 0] = b[:, 1, 1] / det
            binv[:, 0, 1] = -b[:, 0, 1] / det
            binv[:, 1, 0] = -b[:, 1, 0] / det
            binv[:, 1, 1] = b[:, 0, 0] / det
            self._geom = (p0, b, binv)
        return self._geom

    def barycentric(self, p) -> np.ndarray:
        """Barycentric coordinates of point p with respect to every cell."""
        p0, _, binv = self._geometry()
        r = np.asarray(p, dtype=float) - p0
        lam = np.einsum("cij,cj->ci", binv, r)
        return np.column_stack([1.0 - lam.sum(axis=1), lam])


def locate_point(mesh: Mesh, p, tol: float = 1e-12) -> tuple[int, np.ndarray]:
    """Find the cell containing p and its barycentric coordinates.

    Points on shared edges or vertices resolve to the lowest containing
    cell index.  Raises MeshError for points outside the triangulation.
    """
    bary = mesh.barycentric(p)
    inside = np.all(bary >= -tol, axis=1)
    idx = np.nonzero(inside)[0]
    if len(idx) == 0:
        raise MeshError(f"point {tuple(np.asarray(p, float))} is outside the mesh")
    cell = int(idx[0])
    lam = np.clip(bary[cell], 0.0, None)
    return cell, lam / lam.sum()


def generate_unit_square(n: int) -> Mesh:
    """Structured right-triangle mesh of [0,1]^2 with n x n squares.

    Each square [i/n,(i+1)/n] x [j/n,(j+1)/n] splits along the diagonal from
    (i/n, j/n) to ((i+1)/n, (j+1)/n), giving 2 n^2 cells and h = sqrt(2)/n.
    """
    if n < 1:
        raise MeshError("n must be a positive integer")
    lin = np.arange(n + 1) / n
    xx, yy = np.meshgrid(lin, lin, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            v00 = vid(i, j)
            v10 = vid(i + 1, j)
            v01 = vid(i, j + 1)
            v11 = vid(i + 1, j + 1)
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return Mesh(vertices, np.array(cells, dtype=np.int64))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Midpoint refinement: each cell splits into four congruent children."""
    vertices = [mesh.vertices]
    midpoint: dict[tuple[int, int], int] = {}
    next_id = mesh.nv
    new_pts = []

    def mid(u: int, v: int) -> int:
        nonlocal next_id
        key = (min(u, v), max(u, v))
        idx = midpoint.get(key)
        if idx is None:
            idx = next_id
            midpoint[key] = idx
            new_pts.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
            next_id += 1
        return idx

    cells = []
    for a, b, c in mesh.cells:
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        cells.extend([(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)])
    vertices.append(np.array(new_pts))
    return Mesh(np.vstack(vertices), np.array(cells, dtype=np.int64))


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text format: header, vertex lines, cell lines."""
    lines = [f"mesh2d {mesh.nv} {mesh.nc}"]
    for (x, y), b in zip(mesh.vertices, mesh.boundary):
        lines.append(f"v {x:.17g} {y:.17g} {int(b)}")
    for a, b, c in mesh.cells:
        lines.append(f"c {a} {b} {c}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Parse and validate a mesh file written by save_mesh."""
    with open(path) as f:
        raw = f.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip()]
    if not lines:
        raise MeshError(f"{path}: empty mesh file")

    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 3 or parts[0] != "mesh2d":
        raise MeshError(f"{path}:{lineno}: expected header 'mesh2d <nv> <nc>'")
    try:
        nv, nc = int(parts[1]), int(parts[2])
    except ValueError:
        raise MeshError(f"{path}:{lineno}: malformed counts in header") from None
    if len(lines) != 1 + nv + nc:
        raise MeshError(
            f"{path}: expected {nv} vertex and {nc} cell lines, got {len(lines) - 1}"
        )

    vertices = np.empty((nv, 2))
    flags = np.empty(nv, dtype=bool)
    for row, (lineno, ln) in enumerate(lines[1 : 1 + nv]):
        parts = ln.split()
        if len(parts) != 4 or parts[0] != "v":
            raise MeshError(f"{path}:{lineno}: expected 'v <x> <y> <b>'")
        try:
            vertices[row] = (float(parts[1]), float(parts[2]))
            flag = int(parts[3])
        except ValueError:
            raise MeshError(f"{path}:{lineno}: malformed vertex line") from None
        if flag not in (0, 1):
            raise MeshError(f"{path}:{lineno}: boundary flag must be 0 or 1")
        flags[row] = bool(flag)

    cells = np.empty((nc, 3), dtype=np.int64)
    for row, (lineno, ln) in enumerate(lines[1 + nv :]):
        parts = ln.split()
        if len(parts) != 4 or parts[0] != "c":
            raise MeshError(f"{path}:{lineno}: expected 'c <i> <j> <k>'")
        try:
            cells[row] = (int(parts[1]), int(parts[2]), int(parts[3]))
        except ValueError:
            raise MeshError(f"{path}:{lineno}: malformed cell line") from None

    try:
        return Mesh(vertices, cells, boundary=flags)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
