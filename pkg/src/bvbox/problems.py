"""
Smooth parts ``f(u)`` of the reduced objective.

Four families are provided:

* :class:`LinearTracking` -- ``f(u) = 1/2 ||y - y_d||^2`` with ``-Lap y = u``,
* :class:`SemilinearTracking` -- same, with ``-Lap y + y^3 = u``,
* :class:`Denoising` -- ``f(u) = 1/2 ||u - g||^2`` (identity state),
* :class:`Linearized` -- ``f(u) = (grad f(u_bar), u) + 1/2 ||u - u_bar||^2``.

States and adjoints vanish on the boundary; the control lives on all nodes.
The gradient of ``f`` with respect to the nodal coefficients of ``u`` is
``M p`` where ``p`` is the adjoint (the L2 Riesz representative).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from .formula import Formula
from .grid_fem import Mesh


class SolverFailure(RuntimeError):
    """A linear or nonlinear solve did not produce a usable result."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def _nodal_values(mesh, value, name):
    if isinstance(value, str):
        value = Formula(value)
    if isinstance(value, Formula) or callable(value):
        return mesh.interpolate(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.num_nodes, float(arr))
    return mesh.check_nodal(arr, name).copy()


@dataclass
class Bounds:
    """
    Box ``lower <= u <= upper``. Each side is a constant, a nodal array,
    a :class:`Formula` (or formula string), or ``+-inf`` for no bound.
    """

    lower: object = -np.inf
    upper: object = np.inf

    @property
    def is_constant(self):
        return np.ndim(self.lower) == 0 and np.ndim(self.upper) == 0 \
            and not isinstance(self.lower, (str, Formula)) \
            and not isinstance(self.upper, (str, Formula))

    def at_nodes(self, mesh):
        a = _nodal_values(mesh, self.lower, "lower bound")
        b = _nodal_values(mesh, self.upper, "upper bound")
        if np.any(np.isnan(a)) or np.any(np.isnan(b)):
            raise ValueError("bounds evaluate to NaN")
        if not np.all(a < b):
            raise ValueError("lower bound must be strictly below upper bound")
        return a, b

    def min_gap(self, mesh):
        a, b = self.at_nodes(mesh)
        return float(np.min(b - a))


@dataclass
class StateTriple:
    y: np.ndarray
    p: np.ndarray
    u: np.ndarray


@dataclass
class StateBlocks:
    """
    Linearization blocks of the state and adjoint equations (interior rows).

    Tracking problems fill ``state_op = K_II + 3 diag(m y^2)``,
    ``adjoint_cross = M_II - 6 diag(m y p)`` and ``control_to_state = M_I:``.
    Identity-state families only carry ``curvature``, the mass matrix.
    """

    state_op: Optional[sp.csr_matrix] = None
    adjoint_cross: Optional[sp.csr_matrix] = None
    control_to_state: Optional[sp.csr_matrix] = None
    curvature: Optional[sp.csr_matrix] = None


class ControlProblem:
    """Common data: mesh, TV weight ``beta``, target ``y_d`` and bounds."""

    family = None
    identity_state = False

    def __init__(self, mesh: Mesh, beta, y_d=0.0, bounds: Bounds | None = None):
        if not beta >= 0 or not np.isfinite(beta):
            raise ValueError(f"beta must be a finite nonnegative number, got {beta}")
        self.mesh = mesh
        self.beta = float(beta)
        self.y_d = _nodal_values(mesh, y_d, "y_d")
        if not np.all(np.isfinite(self.y_d)):
            raise ValueError("target must be finite")
        self.bounds = bounds if bounds is not None else Bounds()
        self.u_a, self.u_b = self.bounds.at_nodes(mesh)

    def __repr__(self):
        return f"{type(self).__name__}({self.mesh!r}, beta={self.beta})"

    def triple(self, u, y0=None):
        """State and adjoint for the control ``u``."""
        u = self.mesh.check_nodal(u, "u")
        y = self.solve_state(u, y0=y0)
        return StateTriple(y=y, p=self.solve_adjoint(y, u=u), u=u)

    def reduced_gradient(self, triple):
        """L2 representative of ``grad f(u)``."""
        return triple.p

    def f_value(self, u, y=None):
        raise NotImplementedError

    def f_difference(self, u0, y0, u1, y1):
        """``f(u1) - f(u0)`` evaluated without cancellation."""
        return self.f_value(u1, y1) - self.f_value(u0, y0)


class _Tracking(ControlProblem):

    def __init__(self, mesh, beta, y_d=0.0, bounds=None):
        super().__init__(mesh, beta, y_d, bounds)
        I = mesh.interior
        self._I = I
        self._K_II = mesh.stiffness[I][:, I].tocsc()
        self._M_II = mesh.mass[I][:, I].tocsr()
        self._M_Iall = mesh.mass[I].tocsr()
        self._m_I = mesh.lumped_mass[I]

    def _embed(self, v_I):
        v = np.zeros(self.mesh.num_nodes)
        v[self._I] = v_I
        return v

    def f_value(self, u, y=None):
        if y is None:
            y = self.solve_state(u)
        e = y - self.y_d
        return 0.5 * float(e @ (self.mesh.mass @ e))

    def f_difference(self, u0, y0, u1, y1):
        d = y1 - y0
        return 0.5 * float(d @ (self.mesh.mass @ (y1 + y0 - 2.0 * self.y_d)))

    def solve_adjoint(self, y, u=None):
        y = self.mesh.check_nodal(y, "y")
        return self._embed(self._K_lu.solve(self._M_Iall @ (y - self.y_d)))

    def _solve(self, A, rhs):
        x = spla.spsolve(A, rhs)
        if not np.all(np.isfinite(x)):
            raise SolverFailure("linear solve produced non-finite values")
        return x

    @property
    def _K_lu(self):
        lu = getattr(self, "_K_lu_cache", None)
        if lu is None:
            lu = self._K_lu_cache = spla.splu(self._K_II)
        return lu

    def hessian_terms(self, triple):
        y_I = triple.y[self._I]
        p_I = triple.p[self._I]
        if self.family == "semilinear":
            state_op = (self._K_II + sp.diags(3.0 * self._m_I * y_I ** 2)).tocsr()
            cross = (self._M_II - sp.diags(6.0 * self._m_I * y_I * p_I)).tocsr()
        else:
            state_op = self._K_II.tocsr()
            cross = self._M_II
        return StateBlocks(state_op=state_op, adjoint_cross=cross,
                           control_to_state=self._M_Iall)

    def state_residual(self, y, u):
        """Interior residual of the discrete state equation."""
        raise NotImplementedError

    def adjoint_residual(self, y, p):
        raise NotImplementedError


class LinearTracking(_Tracking):
    """Tracking of ``y_d`` by the solution of ``-Lap y = u``, ``y = 0`` on the boundary."""

    family = "linear"

    def solve_state(self, u, y0=None):
        u = self.mesh.check_nodal(u, "u")
        return self._embed(self._K_lu.solve(self._M_Iall @ u))

    def state_residual(self, y, u):
        return self._K_II @ y[self._I] - self._M_Iall @ u

    def adjoint_residual(self, y, p):
        return self._K_II @ p[self._I] - self._M_Iall @ (y - self.y_d)


class SemilinearTracking(_Tracking):
    """
    Tracking with the state equation ``-Lap y + y^3 = u``.

    The cubic term is integrated by vertex quadrature. The state is found by
    Newton's method with step halving whenever the residual does not
    decrease.
    """

    family = "semilinear"
    tol = 1e-11
    max_iter = 50

    def __init__(self, mesh, beta, y_d=0.0, bounds=None):
        super().__init__(mesh, beta, y_d, bounds)
        self.last_state_iterations = 0

    def state_residual(self, y, u):
        y_I = y[self._I]
        return self._K_II @ y_I + self._m_I * y_I ** 3 - self._M_Iall @ u

    def adjoint_residual(self, y, p):
        y_I = y[self._I]
        return (self._K_II @ p[self._I] + 3.0 * self._m_I * y_I ** 2 * p[self._I]
                - self._M_Iall @ (y - self.y_d))

    def _dual_norm(self, r):
        return float(np.sqrt(np.sum(r * r / self._m_I)))

    def solve_state(self, u, y0=None):
        u = self.mesh.check_nodal(u, "u")
        rhs = self._M_Iall @ u
        y = np.zeros(self._I.size) if y0 is None else np.array(y0[self._I], dtype=float)

        def residual(v):
            return self._K_II @ v + self._m_I * v ** 3 - rhs

        r = residual(y)
        rn = self._dual_norm(r)
        it = 0
        while rn > self.tol:
            if it >= self.max_iter:
                raise SolverFailure(
                    f"semilinear state solve: no convergence in {self.max_iter} "
                    f"iterations (residual {rn:.3e})", residual=rn)
            it += 1
            J = (self._K_II + sp.diags(3.0 * self._m_I * y ** 2)).tocsc()
            dy = spla.spsolve(J, -r)
            step = 1.0
            for _ in range(30):
                y_new = y + step * dy
                r_new = residual(y_new)
                rn_new = self._dual_norm(r_new)
                if rn_new < rn:
                    break
                step *= 0.5
            else:
                raise SolverFailure(
                    f"semilinear state solve stalled (residual {rn:.3e})", residual=rn)
            y, r, rn = y_new, r_new, rn_new
        if it:
            # one more full step: quadratic convergence puts the residual at
            # roundoff level, which keeps objective differences clean
            J = (self._K_II + sp.diags(3.0 * self._m_I * y ** 2)).tocsc()
            y_pol = y + spla.spsolve(J, -r)
            if self._dual_norm(residual(y_pol)) < rn:
                y = y_pol
        self.last_state_iterations = it
        return self._embed(y)

    def solve_adjoint(self, y, u=None):
        y = self.mesh.check_nodal(y, "y")
        A = (self._K_II + sp.diags(3.0 * self._m_I * y[self._I] ** 2)).tocsc()
        return self._embed(self._solve(A, self._M_Iall @ (y - self.y_d)))


class Denoising(ControlProblem):
    """``f(u) = 1/2 ||u - g||^2``; the target ``g`` is passed as ``y_d``."""

    family = "denoising"
    identity_state = True

    def solve_state(self, u, y0=None):
        return self.mesh.check_nodal(u, "u").copy()

    def solve_adjoint(self, y, u=None):
        return self.mesh.check_nodal(y, "y") - self.y_d

    def f_value(self, u, y=None):
        e = self.mesh.check_nodal(u, "u") - self.y_d
        return 0.5 * float(e @ (self.mesh.mass @ e))

    def f_difference(self, u0, y0, u1, y1):
        d = u1 - u0
        return 0.5 * float(d @ (self.mesh.mass @ (u1 + u0 - 2.0 * self.y_d)))

    def hessian_terms(self, triple):
        return StateBlocks(curvature=self.mesh.mass)


class Linearized(ControlProblem):
    """
    Convex model of ``base`` at ``u_bar``:
    ``f(u) = (grad f(u_bar), u) + 1/2 ||u - u_bar||^2``.
    """

    family = "linearized"
    identity_state = True

    def __init__(self, base: ControlProblem, u_bar, grad_bar=None):
        super().__init__(base.mesh, base.beta, base.y_d, base.bounds)
        self.base = base
        self.u_bar = base.mesh.check_nodal(u_bar, "u_bar").copy()
        if grad_bar is None:
            grad_bar = base.reduced_gradient(base.triple(self.u_bar))
        self.grad_bar = base.mesh.check_nodal(grad_bar, "grad_bar").copy()

    def solve_state(self, u, y0=None):
        return self.mesh.check_nodal(u, "u").copy()

    def solve_adjoint(self, y, u=None):
        return self.mesh.check_nodal(y, "y") - self.u_bar + self.grad_bar

    def f_value(self, u, y=None):
        M = self.mesh.mass
        u = self.mesh.check_nodal(u, "u")
        e = u - self.u_bar
        return float(self.grad_bar @ (M @ u)) + 0.5 * float(e @ (M @ e))

    def f_difference(self, u0, y0, u1, y1):
        M = self.mesh.mass
        d = u1 - u0
        return float(d @ (M @ (self.grad_bar + 0.5 * (u1 + u0) - self.u_bar)))

    def hessian_terms(self, triple):
        return StateBlocks(curvature=self.mesh.mass)


FAMILIES = {
    "linear": LinearTracking,
    "semilinear": SemilinearTracking,
    "denoising": Denoising,
}


def make_problem(family, mesh, beta, y_d=0.0, bounds=None):
    try:
        cls = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown problem family {family!r}") from None
    return cls(mesh, beta, y_d, bounds)


def linearized_objective(problem, u_bar):
    """Convex linearization of ``problem`` around ``u_bar``."""
    return Linearized(problem, u_bar)


def indicator_target(mesh, half_width=0.5, closed=False):
    """
    Nodal interpolant of the indicator of the square ``(-w, w)^2``.

    Nodes lying on the edge of the square get 0 by default (the open set);
    pass ``closed=True`` to give them 1.
    """
    x, y = np.abs(mesh.nodes[:, 0]), np.abs(mesh.nodes[:, 1])
    tol = 1e-12
    if closed:
        inside = (x <= half_width + tol) & (y <= half_width + tol)
    else:
        inside = (x < half_width - tol) & (y < half_width - tol)
    return inside.astype(float)
