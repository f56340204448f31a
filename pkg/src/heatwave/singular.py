"""Regularized point sources and the singular weight function.

The smoothed delta is the polynomial reproducing kernel of the local space
on the host cell of the evaluation point: a degree-r polynomial supported on
one cell whose pairing with any local polynomial of degree at most r gives
the point value.  Its temporal counterpart reproduces point evaluation of
slabwise polynomials.  The weight sigma regularizes the distance to the
evaluation point at the scale K h.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fem import FeSpace, NodalField, _shape_grads_ref, _shape_values
from .mesh import locate_point
from .quadrature import gauss01, triangle_rule

__all__ = [
    "SingularError",
    "WeightSpec",
    "SmoothedDelta",
    "TimeDelta",
    "DEFAULT_X0",
    "sigma_eval",
    "build_smoothed_delta",
    "delta_derivative_load",
    "delta_derivative_field",
    "discrete_green",
    "build_time_delta",
]

# Generic interior point, chosen off every mesh symmetry axis.
DEFAULT_X0 = (0.5 + 1.0 / (2.0 * math.pi), 0.5 + 1.0 / (2.0 * math.e))


class SingularError(ValueError):
    """Raised for ill-posed kernels: outside points, singular moments."""


@dataclass(frozen=True)
class WeightSpec:
    """Regularized distance weight sigma(x) = sqrt(|x - x0|^2 + (K h)^2)."""

    x0: tuple
    K: float
    h: float
    dim: int = 2

    @property
    def floor(self) -> float:
        return self.K * self.h

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        dx = pts[..., 0] - self.x0[0]
        dy = pts[..., 1] - self.x0[1]
        return np.sqrt(dx * dx + dy * dy + (self.K * self.h) ** 2)

    def gradient(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        sig = self(pts)
        return np.stack(
            [(pts[..., 0] - self.x0[0]) / sig, (pts[..., 1] - self.x0[1]) / sig],
            axis=-1,
        )


def sigma_eval(spec: WeightSpec, pts) -> np.ndarray:
    """Pointwise values of the weight."""
    return spec(pts)


class SmoothedDelta:
    """Degree-r reproducing kernel on the host cell of x0.

    Pairing with any chi in P_r(tau0) returns chi(x0); the kernel is zero
    outside tau0.
    """

    def __init__(self, space: FeSpace, cell: int, x0: np.ndarray, local: np.ndarray):
        self.space = space
        self.cell = cell
        self.x0 = np.asarray(x0, dtype=float)
        self.local = local  # coefficients in the local shape basis

    def eval_bary(self, bary: np.ndarray) -> np.ndarray:
        return _shape_values(self.space.r, np.atleast_2d(bary)) @ self.local

    def grad_at_bary(self, bary: np.ndarray) -> np.ndarray:
        _, _, binv = self.space.mesh._geometry()
        g = _shape_grads_ref(self.space.r, np.atleast_2d(bary))
        return np.einsum("n,pnj,ji->pi", self.local, g, binv[self.cell])

    def _cell_quadrature(self, degree: int):
        bary, qw = triangle_rule(degree)
        corners = self.space.mesh.vertices[self.space.mesh.cells[self.cell]]
        pts = bary @ corners
        area = self.space.mesh.areas[self.cell]
        return bary, qw * area, pts

    def lp_norm(self, p: float) -> float:
        """L^p norm over the host cell; p = inf samples a dense lattice."""
        if p == math.inf:
            m = 8 * self.space.r
            lat = np.array(
                [
                    (i / m, j / m, (m - i - j) / m)
                    for i in range(m + 1)
                    for j in range(m + 1 - i)
                ]
            )
            return float(np.abs(self.eval_bary(lat)).max())
        bary, w, _ = self._cell_quadrature(2 * self.space.r + 2)
        return float(np.sum(w * np.abs(self.eval_bary(bary)) ** p) ** (1.0 / p))

    def grad_l2_norm(self) -> float:
        bary, w, _ = self._cell_quadrature(2 * self.space.r + 2)
        g = self.grad_at_bary(bary)
        return float(math.sqrt(np.sum(w * np.einsum("pi,pi->p", g, g))))

    def weighted_norms(self, weight: WeightSpec) -> dict:
        """The three kernel bounds: weighted value and gradient norms."""
        bary, w, pts = self._cell_quadrature(2 * self.space.r + 4)
        sig = weight(pts)
        vals = self.eval_bary(bary)
        g = self.grad_at_bary(bary)
        gg = np.einsum("pi,pi->p", g, g)
        n = weight.dim
        return {
            "sigma_n2_delta": math.sqrt(np.sum(w * sig**n * vals**2)),
            "sigma_n2p1_grad": math.sqrt(np.sum(w * sig ** (n + 2) * gg)),
            "sigma_n2_grad": math.sqrt(np.sum(w * sig**n * gg)),
        }


def build_smoothed_delta(space: FeSpace, x0=None) -> SmoothedDelta:
    """Solve the local moment system for the reproducing kernel at x0."""
    if x0 is None:
        x0 = DEFAULT_X0
    x0 = np.asarray(x0, dtype=float)
    cell, lam = locate_point(space.mesh, x0)

    bary, qw = triangle_rule(2 * space.r)
    vals = _shape_values(space.r, bary)
    area = space.mesh.areas[cell]
    gram = np.einsum("q,qi,qj->ij", qw * area, vals, vals)
    rhs = _shape_values(space.r, lam[None, :])[0]
    try:
        local = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularError(f"moment system is singular on cell {cell}: {exc}")
    resid = np.abs(gram @ local - rhs).max()
    if resid > 1e-12 * max(1.0, np.abs(rhs).max()):
        raise SingularError(f"moment residual {resid:.3e} exceeds tolerance")
    return SmoothedDelta(space, cell, x0, local)


def delta_derivative_load(space: FeSpace, delta: SmoothedDelta, direction: int) -> np.ndarray:
    """Full-dof load vector of the derivative functional.

    ell(chi) = -(delta, d chi / d x_direction) restricted to the host cell,
    the distributional derivative of a kernel supported on one cell.  For
    chi whose restriction to the cell lies in P_r this gives
    -(d chi/d x_direction)(x0).
    """
    if direction not in (0, 1):
        raise SingularError(f"direction must be 0 or 1, got {direction}")
    bary, qw = triangle_rule(2 * space.r + 2)
    area = space.mesh.areas[delta.cell]
    vals = delta.eval_bary(bary)
    _, _, binv = space.mesh._geometry()
    g = np.einsum("pnj,ji->pni", _shape_grads_ref(space.r, bary), binv[delta.cell])
    local = -np.einsum("q,q,qn->n", qw * area, vals, g[:, :, direction])
    rhs = np.zeros(space.ndof)
    np.add.at(rhs, space.cell_dofs[delta.cell], local)
    return rhs


def delta_derivative_field(space: FeSpace, delta: SmoothedDelta, direction: int) -> NodalField:
    """L2 projection of the derivative functional onto the space."""
    rhs = delta_derivative_load(space, delta, direction)
    return NodalField(space, space.mass().solve(rhs[space.interior_dofs]))


def discrete_green(space: FeSpace, delta: SmoothedDelta, direction: int) -> NodalField:
    """Discrete Green field g with -Laplacian_h g = P_h(D delta).

    Equivalently (grad g, grad chi) = ell(chi) for all chi in V_h.
    """
    rhs = delta_derivative_load(space, delta, direction)[space.interior_dofs]
    g = space.stiffness().solve(rhs)
    resid = np.abs(space.stiffness().matrix @ g - rhs).max()
    if resid > 1e-9 * max(1.0, np.abs(rhs).max()):
        raise SingularError(f"green solve residual {resid:.3e} exceeds tolerance")
    return NodalField(space, g)


class TimeDelta:
    """Slabwise polynomial reproducing point evaluation in time.

    Supported on the slab containing t_tilde; pairing with any temporal
    polynomial of degree at most q on that slab returns its value at
    t_tilde.  Stored in the shifted Legendre basis of the slab.
    """

    def __init__(self, slab: int, a: float, b: float, t_tilde: float, coeffs: np.ndarray):
        self.slab = slab
        self.a = a
        self.b = b
        self.t_tilde = t_tilde
        self.coeffs = coeffs

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = 2.0 * (t - self.a) / (self.b - self.a) - 1.0
        vals = np.polynomial.legendre.legval(s, self.coeffs)
        inside = (t > self.a) & (t <= self.b)
        return np.where(inside, vals, 0.0)

    def value_on_slab(self, t) -> np.ndarray:
        s = 2.0 * (np.asarray(t, dtype=float) - self.a) / (self.b - self.a) - 1.0
        return np.polynomial.legendre.legval(s, self.coeffs)

    def l1_norm(self) -> float:
        x, w = gauss01(32)
        t = self.a + (self.b - self.a) * x
        return float((self.b - self.a) * np.sum(w * np.abs(self.value_on_slab(t))))


def build_time_delta(partition, q: int, t_tilde: float) -> TimeDelta:
    """Construct the temporal kernel on the slab containing t_tilde."""
    points = np.asarray(partition.points, dtype=float)
    if not (points[0] < t_tilde <= points[-1]):
        raise SingularError(
            f"t_tilde={t_tilde} outside the open-closed time interval"
            f" ({points[0]}, {points[-1]}]"
        )
    slab = int(np.searchsorted(points, t_tilde, side="left")) - 1
    a, b = points[slab], points[slab + 1]
    k = b - a
    s_tilde = 2.0 * (t_tilde - a) / k - 1.0
    coeffs = np.zeros(q + 1)
    for i in range(q + 1):
        e = np.zeros(i + 1)
        e[i] = 1.0
        # Orthogonality: int_a^b P_i P_j = k delta_ij / (2 i + 1).
        coeffs[i] = (2 * i + 1) / k * np.polynomial.legendre.legval(s_tilde, e)
    return TimeDelta(slab, a, b, t_tilde, coeffs)
