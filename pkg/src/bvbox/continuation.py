"""
Outer continuation loop: ``eps_k -> 0`` and ``rho_k -> inf`` geometrically,
each subproblem solved by :func:`bvbox.newton.newton_solve` warm-started from
the previous iterate.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import penalized as pen
from .grid_fem import grad_l1, l2_norm, lumped_l2_norm
from .newton import NewtonConfig, newton_solve
from .problems import Linearized, SolverFailure, StateTriple

log = logging.getLogger(__name__)


@dataclass
class ContinuationConfig:
    eps0: float = 0.5
    eps_factor: float = 0.5
    rho0: float = 2.0
    rho_factor: float = 2.0
    tol_R_rho: float = 1e-4
    tol_R_eps: float = 1e-3
    max_outer: int = 40

    def __post_init__(self):
        if not 0 < self.eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        if not 0 < self.eps_factor < 1:
            raise ValueError("eps_factor must lie in (0, 1)")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if not self.rho_factor > 1:
            raise ValueError("rho_factor must exceed 1")
        if not (self.tol_R_rho > 0 and self.tol_R_eps > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")

    def eps(self, k):
        return self.eps0 * self.eps_factor ** k

    def rho(self, k):
        return self.rho0 * self.rho_factor ** k


@dataclass
class ContinuationRecord:
    """Diagnostics of outer iteration ``k`` (counted from 0)."""

    k: int
    eps_k: float
    rho_k: float
    R_eps: float
    R_rho: float
    J_penalized: float
    J_exact: float
    newton_iters: int
    linesearch_trials: int
    fallback_steps: int
    lambda_a_norm: float
    lambda_b_norm: float
    # quantities for the multiplier / violation / BV estimates
    grad_f_norm: float = np.nan
    violation: float = np.nan
    max_lambda_product: float = np.nan
    grad_u_l1: float = np.nan
    u_norm: float = np.nan
    seconds: float = np.nan
    E_u: Optional[float] = None
    E_J: Optional[float] = None
    E_J_exact: Optional[float] = None
    u: Optional[np.ndarray] = field(default=None, repr=False)

    TABLE_FIELDS = (
        "k", "eps_k", "rho_k", "R_eps", "R_rho", "J_penalized", "J_exact",
        "newton_iters", "linesearch_trials", "fallback_steps",
        "lambda_a_norm", "lambda_b_norm", "grad_f_norm", "violation",
        "max_lambda_product", "grad_u_l1", "u_norm", "E_u", "E_J", "E_J_exact",
    )

    def row(self):
        return {name: getattr(self, name) for name in self.TABLE_FIELDS}


@dataclass
class ContinuationResult:
    triple: StateTriple
    records: List[ContinuationRecord]
    converged: bool
    problem: object = None

    @property
    def total_newton(self):
        return sum(r.newton_iters for r in self.records)

    @property
    def final(self):
        return self.records[-1]


class ContinuationAborted(SolverFailure):
    """A subproblem failed; ``records`` holds the completed iterations."""

    def __init__(self, msg, records, cause=None):
        super().__init__(msg)
        self.records = records
        self.cause = cause


def make_record(k, params, triple, report, keep_iterate=True, seconds=np.nan):
    pb = params.problem
    mesh = pb.mesh
    u = triple.u
    la, lb = pen.multipliers(params, u)
    grad_f = pen.riesz(mesh, mesh.mass @ pb.reduced_gradient(triple))
    return ContinuationRecord(
        k=k, eps_k=params.epsilon, rho_k=params.rho,
        R_eps=pen.residual_R_eps(mesh, params.epsilon, u),
        R_rho=pen.residual_R_rho(mesh, params.rho, u, pb.u_a, pb.u_b),
        J_penalized=pen.eval_j(params, u, triple.y),
        J_exact=pen.exact_objective(pb, u, triple.y),
        newton_iters=report.iterations,
        linesearch_trials=report.linesearch_total,
        fallback_steps=report.fallback_steps,
        lambda_a_norm=lumped_l2_norm(mesh, la),
        lambda_b_norm=lumped_l2_norm(mesh, lb),
        grad_f_norm=lumped_l2_norm(mesh, grad_f),
        violation=lumped_l2_norm(mesh, np.maximum(u - pb.u_b, 0.0))
        + lumped_l2_norm(mesh, np.maximum(pb.u_a - u, 0.0)),
        max_lambda_product=float(np.max(la * lb)),
        grad_u_l1=grad_l1(mesh, u),
        u_norm=lumped_l2_norm(mesh, u),
        seconds=seconds,
        u=u.copy() if keep_iterate else None,
    )


def run_continuation(problem, cfg=None, newton_cfg=None, u0=None,
                     keep_iterates=True, callback: Callable | None = None):
    """
    Solve the box-constrained BV problem by smoothing and penalization.

    Iteration ``k`` uses ``eps_k = eps0 * eps_factor**k`` and
    ``rho_k = rho0 * rho_factor**k``; the loop stops at the first ``k`` with
    ``R_rho <= tol_R_rho`` and ``R_eps <= tol_R_eps``.
    """
    cfg = cfg or ContinuationConfig()
    newton_cfg = newton_cfg or NewtonConfig()
    mesh = problem.mesh
    u = np.zeros(mesh.num_nodes) if u0 is None else mesh.check_nodal(u0, "u0").copy()
    y = None
    triple = None
    records = []
    for k in range(cfg.max_outer):
        params = pen.PenalizedParams(cfg.eps(k), cfg.rho(k), problem)
        t0 = time.perf_counter()
        try:
            triple, report = newton_solve(params, u, newton_cfg, y0=y)
        except SolverFailure as exc:
            raise ContinuationAborted(
                f"outer iteration {k} failed: {exc}", records, cause=exc) from exc
        rec = make_record(k, params, triple, report, keep_iterates,
                          seconds=time.perf_counter() - t0)
        records.append(rec)
        log.info("k=%2d eps=%.3e rho=%.3e newton=%3d R_eps=%.3e R_rho=%.3e J=%.6e (%s)",
                 k, rec.eps_k, rec.rho_k, rec.newton_iters, rec.R_eps, rec.R_rho,
                 rec.J_penalized, report.status)
        if callback is not None:
            callback(rec, triple)
        u, y = triple.u, triple.y
        if rec.R_rho <= cfg.tol_R_rho and rec.R_eps <= cfg.tol_R_eps:
            return ContinuationResult(triple, records, True, problem)
    return ContinuationResult(triple, records, False, problem)


def run_linearized(problem, u_bar, cfg=None, newton_cfg=None, u0=None):
    """
    Run the continuation on the convex model of ``problem`` around ``u_bar``.
    Returns ``(u_star, result)``.
    """
    lin = Linearized(problem, u_bar)
    res = run_continuation(lin, cfg, newton_cfg, u0=u0)
    return res.triple.u, res


def compute_errors(records, u_ref, J_ref, mesh, J_ref_exact=None):
    """
    Fill ``E_u = ||u_k - u_ref||`` and ``E_J = |J_k - J_ref|`` for every
    record but the last, which serves as the reference.

    ``J_k`` is the penalized objective of iteration ``k``; ``E_J_exact`` is
    the same difference for ``f + beta ||grad u||_L1`` and is filled when
    ``J_ref_exact`` is given.
    """
    u_ref = mesh.check_nodal(u_ref, "u_ref")
    for rec in records[:-1]:
        if rec.u is None:
            raise ValueError("records were produced without keep_iterates")
        rec.E_u = l2_norm(mesh, rec.u - u_ref)
        rec.E_J = abs(rec.J_penalized - J_ref)
        if J_ref_exact is not None:
            rec.E_J_exact = abs(rec.J_exact - J_ref_exact)
    if records:
        last = records[-1]
        last.E_u = last.E_J = last.E_J_exact = None
    return records


def errors_against_final(result):
    """:func:`compute_errors` with the final iterate of ``result`` as reference."""
    fin = result.final
    return compute_errors(result.records, result.triple.u, fin.J_penalized,
                          result.problem.mesh, fin.J_exact)
