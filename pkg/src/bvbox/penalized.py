"""
Penalized, smoothed objective

    j(u) = f(u) + beta * int psi_eps(grad u) + 1/rho int M_rho(rho(u_a-u)) + M_rho(rho(u-u_b))

together with its first-order system ``F(y, p, u) = 0`` and the Jacobian
``G`` used for Newton steps. Gradient terms are integrated exactly per
element; penalty terms use vertex quadrature, so the bound multipliers are
nodal quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from . import kernels
from .grid_fem import element_gradient, gradient_transpose, grad_l1, lumped_l2_norm
from .problems import ControlProblem, SolverFailure


@dataclass(frozen=True)
class PenalizedParams:
    epsilon: float
    rho: float
    problem: ControlProblem

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def mesh(self):
        return self.problem.mesh


@dataclass
class KktResidual:
    """Residual rows of the first-order system, as full nodal vectors."""

    r_y: np.ndarray
    r_p: np.ndarray
    r_u: np.ndarray

    def dual_norm(self, mesh):
        """Discrete H^{-1}-like size using the lumped mass: ``sqrt(sum r^2/m)``."""
        m = mesh.lumped_mass
        return float(np.sqrt(sum(np.sum(r * r / m) for r in (self.r_y, self.r_p, self.r_u))))


def tv_term(mesh, eps, u):
    """``int psi_eps(grad u) dx``."""
    return float(np.dot(mesh.element_area, kernels.psi(eps, element_gradient(mesh, u))))


def tv_gradient(mesh, eps, u):
    """Nodal derivative of :func:`tv_term`."""
    return gradient_transpose(mesh, kernels.psi_grad(eps, element_gradient(mesh, u)))


def tv_hessian(mesh, eps, u):
    return mesh.weighted_stiffness(kernels.psi_hess(eps, element_gradient(mesh, u)))


def penalty_term(mesh, rho, u, u_a, u_b):
    return float(np.dot(mesh.lumped_mass, kernels.penalty_density(rho, u, u_a, u_b)))


def multipliers(params, u):
    """Nodal ``(lambda_a, lambda_b)``."""
    pb = params.problem
    return (kernels.lambda_a(params.rho, u, pb.u_a),
            kernels.lambda_b(params.rho, u, pb.u_b))


def j_parts(params, u, y=None):
    pb = params.problem
    mesh = pb.mesh
    u = mesh.check_nodal(u, "u")
    if y is None:
        y = pb.solve_state(u)
    f = pb.f_value(u, y)
    tv = tv_term(mesh, params.epsilon, u)
    pen = penalty_term(mesh, params.rho, u, pb.u_a, pb.u_b)
    return {"f": f, "tv": tv, "penalty": pen, "j": f + pb.beta * tv + pen}


def eval_j(params, u, y=None):
    """Penalized objective at ``u`` (solves the state unless ``y`` is given)."""
    return j_parts(params, u, y)["j"]


def exact_objective(problem, u, y=None):
    """``f(u) + beta ||grad u||_{L1}``: the unsmoothed, unpenalized objective."""
    if y is None:
        y = problem.solve_state(u)
    return problem.f_value(u, y) + problem.beta * grad_l1(problem.mesh, u)


def _psi_difference(eps, t0, t1):
    s0 = np.sum(t0 * t0, axis=-1)
    s1 = np.sum(t1 * t1, axis=-1)
    ds = np.sum((t1 - t0) * (t1 + t0), axis=-1)
    return ds / (np.sqrt(eps + s0) + np.sqrt(eps + s1)) + eps * ds


def _M_rho_difference(rho, x0, dx):
    """``M_rho(x0 + dx) - M_rho(x0)`` with the same-branch cases factored."""
    x1 = x0 + dx
    c = 0.5 / rho
    direct = kernels.M_rho(rho, x1) - kernels.M_rho(rho, x0)
    with np.errstate(invalid="ignore", over="ignore"):
        quad = 0.5 * dx * (x1 + x0)
        a0, a1 = x0 + c, x1 + c
        cubic = rho / 6.0 * dx * (a1 * a1 + a1 * a0 + a0 * a0)
    both_quad = (x0 > c) & (x1 > c)
    both_cubic = (np.abs(x0) <= c) & (np.abs(x1) <= c)
    both_zero = (x0 < -c) & (x1 < -c)
    out = np.where(both_quad, quad, np.where(both_cubic, cubic, direct))
    return np.where(both_zero, 0.0, out)


def j_difference(params, u0, y0, u1, y1):
    """
    ``j(u1) - j(u0)`` assembled from per-term differences.

    Near a minimizer the change in ``j`` is many orders of magnitude smaller
    than ``j`` itself; forming the difference term by term keeps the
    line-search test meaningful down to tiny steps.
    """
    pb = params.problem
    mesh = pb.mesh
    rho = params.rho
    df = pb.f_difference(u0, y0, u1, y1)
    g0 = element_gradient(mesh, u0)
    g1 = element_gradient(mesh, u1)
    dtv = float(np.dot(mesh.element_area, _psi_difference(params.epsilon, g0, g1)))
    du = u1 - u0
    dpen_a = _M_rho_difference(rho, rho * (pb.u_a - u0), -rho * du)
    dpen_b = _M_rho_difference(rho, rho * (u0 - pb.u_b), rho * du)
    dpen = float(np.dot(mesh.lumped_mass, dpen_a + dpen_b)) / rho
    return df + pb.beta * dtv + dpen


def gradient(params, triple):
    """
    Nodal derivative of ``j`` (Euclidean, i.e. tested with every hat function),
    assuming ``triple`` holds the exact state and adjoint of ``triple.u``.
    """
    pb = params.problem
    mesh = pb.mesh
    la, lb = multipliers(params, triple.u)
    return (mesh.mass @ triple.p
            + pb.beta * tv_gradient(mesh, params.epsilon, triple.u)
            + mesh.lumped_mass * (lb - la))


def riesz(mesh, g):
    """L2 representative of a nodal derivative, via the lumped mass."""
    return g / mesh.lumped_mass


def assemble_F(params, triple):
    """
    Weak residual of the first-order system at an arbitrary triple.

    ``r_y`` and ``r_p`` are the state and adjoint equation residuals (zero on
    boundary nodes); ``r_u`` is the control equation tested with all P1
    functions. For identity-state families the adjoint is recomputed from
    ``u`` and only ``r_u`` is nonzero.
    """
    pb = params.problem
    n = pb.mesh.num_nodes
    u = pb.mesh.check_nodal(triple.u, "u")
    if pb.identity_state:
        return KktResidual(np.zeros(n), np.zeros(n), gradient(params, pb.triple(u)))
    I = pb.mesh.interior
    r_y = np.zeros(n)
    r_p = np.zeros(n)
    r_y[I] = pb.state_residual(triple.y, u)
    r_p[I] = pb.adjoint_residual(triple.y, triple.p)
    return KktResidual(r_y, r_p, gradient(params, triple))


def control_block(params, u):
    """``beta * (psi''-weighted stiffness) + rho diag(m (Lambda_b - Lambda_a))``."""
    pb = params.problem
    mesh = pb.mesh
    rho = params.rho
    weight = rho * mesh.lumped_mass * (
        kernels.Lambda_b(rho, u, pb.u_b) - kernels.Lambda_a(rho, u, pb.u_a))
    return (pb.beta * tv_hessian(mesh, params.epsilon, u) + sp.diags(weight)).tocsr()


class KktOperator:
    """
    Jacobian of :func:`assemble_F`.

    For tracking problems the unknowns are stacked as
    ``(dy on interior nodes, dp on interior nodes, du on all nodes)``; for
    identity-state problems only ``du`` remains.
    """

    def __init__(self, matrix, mesh, identity_state):
        self.matrix = matrix.tocsr()
        self.mesh = mesh
        self.identity_state = identity_state
        self._lu = None

    @property
    def shape(self):
        return self.matrix.shape

    def pack(self, dy, dp, du):
        if self.identity_state:
            return np.asarray(du, dtype=float)
        I = self.mesh.interior
        return np.concatenate([dy[I], dp[I], du])

    def unpack(self, x):
        n = self.mesh.num_nodes
        if self.identity_state:
            return np.zeros(n), np.zeros(n), x.copy()
        I = self.mesh.interior
        ni = I.size
        dy = np.zeros(n)
        dp = np.zeros(n)
        dy[I] = x[:ni]
        dp[I] = x[ni:2 * ni]
        return dy, dp, x[2 * ni:].copy()

    def apply(self, dy, dp, du):
        return self.unpack(self.matrix @ self.pack(dy, dp, du))

    def solve(self, res: KktResidual):
        """Solve ``G d = -F``; returns ``(dy, dp, du)``."""
        rhs = -self.pack(res.r_y, res.r_p, res.r_u)
        try:
            if self._lu is None:
                self._lu = spla.splu(self.matrix.tocsc())
            x = self._lu.solve(rhs)
        except RuntimeError as exc:
            raise SolverFailure(f"Newton system solve failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolverFailure("Newton system solve produced non-finite values")
        return self.unpack(x)


def assemble_G(params, triple):
    pb = params.problem
    H = control_block(params, triple.u)
    blocks = pb.hessian_terms(triple)
    if pb.identity_state:
        return KktOperator(blocks.curvature + H, pb.mesh, True)
    A = blocks.state_op
    B = blocks.control_to_state
    G = sp.bmat([
        [A, None, -B],
        [-blocks.adjoint_cross, A, None],
        [None, B.T, H],
    ], format="csr")
    return KktOperator(G, pb.mesh, False)


def residual_R_eps(mesh, eps, u):
    """
    ``||grad u||_{L1} - (mu, grad u)`` with ``mu = grad u / sqrt(eps + |grad u|^2)``.
    Nonnegative because ``|mu| <= 1``.
    """
    g = element_gradient(mesh, u)
    norm = np.hypot(g[:, 0], g[:, 1])
    # |g| - |g|^2/sqrt(eps+|g|^2) written without cancellation
    r = np.sqrt(eps + norm * norm)
    per = norm * eps / (r * (r + norm))
    return float(np.dot(mesh.element_area, per))


def residual_R_rho(mesh, rho, u, u_a, u_b):
    """
    Constraint violation plus complementarity defect:
    ``||(u_a-u)_+|| + ||(u-u_b)_+|| + (lambda_a, u_a-u) + (lambda_b, u-u_b)``.
    """
    u = mesh.check_nodal(u, "u")
    u_a = np.broadcast_to(u_a, u.shape)
    u_b = np.broadcast_to(u_b, u.shape)
    la = kernels.lambda_a(rho, u, u_a)
    lb = kernels.lambda_b(rho, u, u_b)
    m = mesh.lumped_mass
    viol = lumped_l2_norm(mesh, np.maximum(u_a - u, 0.0)) \
        + lumped_l2_norm(mesh, np.maximum(u - u_b, 0.0))
    # restrict pairings to the support so infinite bounds never meet 0 * inf
    sa = la > 0
    sb = lb > 0
    pair = float(np.dot(m[sa], la[sa] * (u_a[sa] - u[sa]))) \
        + float(np.dot(m[sb], lb[sb] * (u[sb] - u_b[sb])))
    return viol + pair


def r_eps_naive(mesh, eps, u):
    """Literal ``||grad u||_{L1} - (mu, grad u)``; kept for cross-checking."""
    g = element_gradient(mesh, u)
    mu = g / np.sqrt(eps + np.sum(g * g, axis=1))[:, None]
    return grad_l1(mesh, u) - float(np.dot(mesh.element_area, np.sum(mu * g, axis=1)))
