"""
P1 finite elements on a structured triangulation of a rectangle.

Nodes are numbered row-major, ``index = j * (nx + 1) + i`` with ``x`` running
fastest. Every cell is cut along its lower-left to upper-right diagonal.
Nodal fields are plain 1-D arrays of length ``mesh.num_nodes``; element
vector fields are ``(num_triangles, 2)`` arrays.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import sparse as sp


class Mesh:
    """
    Structured triangulation of ``[xmin, xmax] x [ymin, ymax]``.

    Parameters
    ----------
    rect : sequence of 4 floats
        ``(xmin, xmax, ymin, ymax)``.
    nx, ny : int
        Number of cells per axis.
    """

    def __init__(self, rect, nx, ny):
        rect = tuple(float(r) for r in rect)
        if len(rect) != 4:
            raise ValueError("rect must be (xmin, xmax, ymin, ymax)")
        xmin, xmax, ymin, ymax = rect
        if not all(np.isfinite(rect)) or xmax <= xmin or ymax <= ymin:
            raise ValueError(f"degenerate rectangle {rect}")
        if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
            raise ValueError(f"need positive integer subdivisions, got {nx}x{ny}")
        self.rect = rect
        self.nx = int(nx)
        self.ny = int(ny)

        xs = np.linspace(xmin, xmax, self.nx + 1)
        ys = np.linspace(ymin, ymax, self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])

        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        i, j = i.ravel(), j.ravel()
        n00 = j * (self.nx + 1) + i
        n10 = n00 + 1
        n01 = n00 + self.nx + 1
        n11 = n01 + 1
        lower = np.column_stack([n00, n10, n11])
        upper = np.column_stack([n00, n11, n01])
        # interleave so both halves of a cell are adjacent
        self.triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)

        self.element_area, self.grad_basis = _p1_geometry(self.nodes, self.triangles)

        on_boundary = (
            np.isclose(self.nodes[:, 0], xmin) | np.isclose(self.nodes[:, 0], xmax)
            | np.isclose(self.nodes[:, 1], ymin) | np.isclose(self.nodes[:, 1], ymax)
        )
        self.boundary = np.flatnonzero(on_boundary)
        self.interior = np.flatnonzero(~on_boundary)

    def __repr__(self):
        return f"Mesh(rect={self.rect}, nx={self.nx}, ny={self.ny})"

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def area(self):
        xmin, xmax, ymin, ymax = self.rect
        return (xmax - xmin) * (ymax - ymin)

    @property
    def h(self):
        """Characteristic mesh size: the diagonal of one cell."""
        xmin, xmax, ymin, ymax = self.rect
        return float(np.hypot((xmax - xmin) / self.nx, (ymax - ymin) / self.ny))

    def same_as(self, other):
        return other is self or (
            isinstance(other, Mesh) and other.rect == self.rect
            and other.nx == self.nx and other.ny == self.ny
        )

    def check_nodal(self, u, name="field"):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.num_nodes,):
            raise ValueError(
                f"{name} has shape {u.shape}, mesh expects ({self.num_nodes},)")
        return u

    def interpolate(self, fun):
        """Nodal interpolant of ``fun(x, y)``."""
        vals = np.broadcast_to(
            np.asarray(fun(self.nodes[:, 0], self.nodes[:, 1]), dtype=float),
            (self.num_nodes,))
        return np.array(vals)

    # -- assembled operators (cached; the mesh is immutable) --

    @cached_property
    def mass(self):
        """Consistent P1 mass matrix (CSR)."""
        local = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
        vals = self.element_area[:, None, None] * local[None, :, :]
        return self._assemble(vals)

    @cached_property
    def lumped_mass(self):
        """Row sums of the mass matrix, i.e. vertex quadrature weights."""
        return np.bincount(
            self.triangles.ravel(),
            weights=np.repeat(self.element_area / 3.0, 3),
            minlength=self.num_nodes,
        )

    @cached_property
    def stiffness(self):
        """P1 Laplacian stiffness matrix without boundary conditions."""
        G = self.grad_basis
        vals = self.element_area[:, None, None] * np.einsum("tik,tjk->tij", G, G)
        return self._assemble(vals)

    def weighted_stiffness(self, weights):
        """
        Assemble ``sum_T |T| G_T^T A_T G_T`` for per-element 2x2 tensors ``A_T``.
        """
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.num_triangles, 2, 2):
            raise ValueError("weights must have shape (num_triangles, 2, 2)")
        G = self.grad_basis
        vals = self.element_area[:, None, None] * np.einsum(
            "tik,tkl,tjl->tij", G, weights, G)
        return self._assemble(vals)

    def _assemble(self, vals):
        tri = self.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        A = sp.coo_matrix((vals.ravel(), (rows, cols)),
                          shape=(self.num_nodes, self.num_nodes))
        return A.tocsr()


def _p1_geometry(nodes, triangles):
    p = nodes[triangles]                      # (T, 3, 2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * np.abs(det)
    # gradients of the barycentric coordinates
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    g0 = -(g1 + g2)
    return area, np.stack([g0, g1, g2], axis=1)


def build_mesh(rect, nx, ny=None):
    """Build a structured mesh; ``ny`` defaults to ``nx``."""
    return Mesh(rect, nx, nx if ny is None else ny)


def element_gradient(mesh, u):
    """Constant gradient of the P1 function ``u`` on each triangle."""
    u = mesh.check_nodal(u, "u")
    return np.einsum("ti,tik->tk", u[mesh.triangles], mesh.grad_basis)


def gradient_transpose(mesh, vec):
    """
    Nodal vector ``v_i = sum_T |T| vec_T . grad(phi_i)|_T``.

    This is the weak form ``(vec, grad phi_i)`` for a piecewise constant
    vector field, i.e. the adjoint of :func:`element_gradient` in the
    element-area weighted inner product.
    """
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (mesh.num_triangles, 2):
        raise ValueError("element field must have shape (num_triangles, 2)")
    contrib = mesh.element_area[:, None] * np.einsum(
        "tik,tk->ti", mesh.grad_basis, vec)
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(),
                       minlength=mesh.num_nodes)


def grad_l1(mesh, u):
    """``||grad u||_{L1}``, exact for P1."""
    g = element_gradient(mesh, u)
    return float(np.dot(mesh.element_area, np.hypot(g[:, 0], g[:, 1])))


def l2_norm(mesh, u):
    u = mesh.check_nodal(u)
    return float(np.sqrt(max(u @ (mesh.mass @ u), 0.0)))


def lumped_l2_norm(mesh, u):
    """L2 norm by vertex quadrature (used for nodal nonlinear quantities)."""
    u = mesh.check_nodal(u)
    return float(np.sqrt(np.dot(mesh.lumped_mass, u * u)))


def lumped_inner(mesh, u, v):
    return float(np.dot(mesh.lumped_mass, mesh.check_nodal(u) * mesh.check_nodal(v)))


def norms(mesh, u):
    """L1 (vertex quadrature), L2 (consistent mass) and max norms."""
    u = mesh.check_nodal(u)
    return {
        "l1": float(np.dot(mesh.lumped_mass, np.abs(u))),
        "l2": l2_norm(mesh, u),
        "linf": float(np.max(np.abs(u))) if u.size else 0.0,
    }


def field_grid(mesh, u):
    """Reshape a nodal field into an ``(ny+1, nx+1)`` array."""
    return mesh.check_nodal(u).reshape(mesh.ny + 1, mesh.nx + 1)
