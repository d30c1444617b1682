"""
Globalized Newton method for the penalized subproblems.

Each step solves the coupled state/adjoint/control system ``G d = -F`` and
uses the control component as search direction. If that direction is not a
sufficient descent direction (``j'(u) w > -eta ||w||^p``) the negative L2
gradient is used instead. Steps are accepted by Armijo backtracking on the
reduced functional, which re-solves the state equation for every trial.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import penalized as pen
from .grid_fem import l2_norm
from .problems import SolverFailure, StateTriple

log = logging.getLogger(__name__)


class StagnationError(SolverFailure):
    """The line search could not find an acceptable step."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class MonotonicityError(AssertionError):
    """An accepted step failed to decrease the objective."""


@dataclass
class NewtonConfig:
    eta: float = 1e-8
    p_exp: float = 2.1
    phi: float = 0.5
    tau: float = 1e-4
    step_tol: float = 1e-10
    max_iter: int = 200
    max_linesearch: int = 40

    def __post_init__(self):
        if not 0 < self.phi < 1:
            raise ValueError("phi must lie in (0, 1)")
        if not 0 < self.tau < 0.5:
            raise ValueError("tau must lie in (0, 1/2)")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.p_exp > 2:
            raise ValueError("p_exp must exceed 2")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.max_iter < 1 or self.max_linesearch < 0:
            raise ValueError("iteration limits must be positive")


@dataclass
class NewtonReport:
    iterations: int = 0
    linesearch_total: int = 0
    final_step_norm: float = np.inf
    converged: bool = False
    j_history: List[float] = field(default_factory=list)
    fallback_steps: int = 0
    status: str = "running"


@dataclass
class Direction:
    w: np.ndarray
    slope: float          # j'(u) w
    newton: bool          # False if the steepest-descent fallback was taken
    gradient: np.ndarray  # nodal derivative of j


def compute_direction(params, triple, cfg, system=None, grad=None):
    """
    Search direction at ``triple`` (state and adjoint must be exact).

    ``system`` may be passed to override the assembled Newton operator.
    """
    mesh = params.mesh
    if grad is None:
        grad = pen.gradient(params, triple)
    if not np.any(grad):
        return Direction(np.zeros_like(grad), 0.0, True, grad)
    res = pen.assemble_F(params, triple)
    res.r_u = grad
    if system is None:
        system = pen.assemble_G(params, triple)
    _, _, w = system.solve(res)
    slope = float(grad @ w)
    if slope <= -cfg.eta * l2_norm(mesh, w) ** cfg.p_exp:
        return Direction(w, slope, True, grad)
    w = -pen.riesz(mesh, grad)
    return Direction(w, float(grad @ w), False, grad)


def armijo_backtracking(diff, slope, cfg):
    """
    Largest ``sigma = phi**l`` with ``diff(sigma) <= tau sigma slope``.

    ``diff(sigma)`` must return ``j(u + sigma w) - j(u)``. Returns
    ``(sigma, trials, value)``; raises :class:`StagnationError` after
    ``cfg.max_linesearch`` reductions.
    """
    if not slope < 0:
        raise ValueError(f"not a descent direction (slope {slope:.3e})")
    sigma = 1.0
    for trial in range(cfg.max_linesearch + 1):
        d = diff(sigma)
        if d <= cfg.tau * sigma * slope:
            return sigma, trial + 1, d
        sigma *= cfg.phi
    raise StagnationError(
        f"line search failed after {cfg.max_linesearch} reductions "
        f"(slope {slope:.3e}, last change {d:.3e})")


def line_search(params, u, w, cfg, slope=None, y=None):
    """Armijo step for the penalized objective; returns ``(sigma, u_new, y_new)``."""
    pb = params.problem
    if y is None:
        y = pb.solve_state(u)
    if slope is None:
        slope = float(pen.gradient(params, pb.triple(u, y0=y)) @ w)
    trial = {}

    def diff(sigma):
        u1 = u + sigma * w
        y1 = pb.solve_state(u1, y0=y)
        trial["u"], trial["y"] = u1, y1
        return pen.j_difference(params, u, y, u1, y1)

    sigma, _, _ = armijo_backtracking(diff, slope, cfg)
    return sigma, trial["u"], trial["y"]


def _roundoff_level(j):
    # size of j(u+w) - j(u) that evaluation noise can produce
    return 1e-14 * max(abs(j), 1e-300)


def newton_solve(params, u0, cfg=None, y0=None):
    """
    Minimize the penalized objective from ``u0``.

    Stops when ``||du|| + ||dy|| + ||dp|| < cfg.step_tol`` (L2 norms) or
    when the Newton decrement has reached the roundoff level of ``j``.
    Returns ``(triple, report)``.
    """
    cfg = cfg or NewtonConfig()
    pb = params.problem
    mesh = pb.mesh
    u = mesh.check_nodal(u0, "u0").copy()
    if not np.all(np.isfinite(u)):
        raise ValueError("initial control must be finite")
    triple = pb.triple(u, y0=y0)
    j = pen.eval_j(params, u, triple.y)
    report = NewtonReport(j_history=[j])

    for _ in range(cfg.max_iter):
        d = compute_direction(params, triple, cfg)
        if d.slope == 0.0:
            report.converged, report.status = True, "stationary"
            report.final_step_norm = 0.0
            return triple, report
        if not d.newton:
            report.fallback_steps += 1

        cache = {}

        def diff(sigma):
            u1 = triple.u + sigma * d.w
            y1 = pb.solve_state(u1, y0=triple.y)
            cache["u"], cache["y"] = u1, y1
            return pen.j_difference(params, triple.u, triple.y, u1, y1)

        try:
            sigma, trials, dj = armijo_backtracking(diff, d.slope, cfg)
        except StagnationError as exc:
            if d.newton and -d.slope <= _roundoff_level(j):
                report.converged, report.status = True, "roundoff"
                return triple, report
            exc.report = report
            report.status = "stagnation"
            raise
        report.linesearch_total += trials
        if not dj < 0:
            raise MonotonicityError(f"accepted step changed j by {dj:.3e}")

        new = StateTriple(y=cache["y"], p=pb.solve_adjoint(cache["y"], u=cache["u"]),
                          u=cache["u"])
        step = (l2_norm(mesh, new.u - triple.u) + l2_norm(mesh, new.y - triple.y)
                + l2_norm(mesh, new.p - triple.p))
        triple = new
        # accumulate differences: direct re-evaluation would reintroduce noise
        j = j + dj
        report.iterations += 1
        report.j_history.append(j)
        report.final_step_norm = step
        log.debug("newton %3d  j=%.12e  sigma=%.3g  step=%.3e  %s",
                  report.iterations, j, sigma, step, "N" if d.newton else "SD")
        if step < cfg.step_tol:
            report.converged, report.status = True, "step_tol"
            break
    else:
        report.status = "max_iter"
    return triple, report
