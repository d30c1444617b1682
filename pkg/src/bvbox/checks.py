"""
Invariant suite run by ``bvbox check``.

Three groups: pointwise kernel identities, derivative checks of the
discrete objective on a coarse copy of the configured problem, and the
multiplier / violation / BV estimates evaluated on every converged
subproblem of a continuation run. Estimates that rely on constant bounds
are reported as observational when the bounds vary in space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from . import kernels
from . import penalized as pen
from .grid_fem import build_mesh
from .problems import StateTriple


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    observational: bool = False

    def line(self):
        tag = "INFO" if self.observational else ("PASS" if self.passed else "FAIL")
        extra = " (observational only)" if self.observational else ""
        return f"[{tag}] {self.name}{extra}: {self.detail}"


def kernel_checks() -> List[CheckResult]:
    out = []
    ts = np.stack(np.meshgrid(np.linspace(-3, 3, 13), np.linspace(-2, 2, 9)), -1).reshape(-1, 2)
    nt = np.linalg.norm(ts, axis=1)
    worst = dict(lower=0.0, grad=0.0, hess=np.inf, plateau=0.0)
    for eps in (0.5, 1e-2, 1e-5):
        val = kernels.psi(eps, ts)
        worst["lower"] = max(worst["lower"], float(np.max(nt + eps * nt ** 2 - val)))
        gt = np.sum(kernels.psi_grad(eps, ts) * ts, axis=1)
        worst["grad"] = max(worst["grad"], float(np.max(nt - math.sqrt(eps) - gt)))
        lam = np.linalg.eigvalsh(kernels.psi_hess(eps, ts))
        worst["hess"] = min(worst["hess"], float(np.min(lam[:, 0] / (2 * eps))))
        worst["plateau"] = max(worst["plateau"], abs(float(kernels.psi(eps, [0.0, 0.0])) - math.sqrt(eps)))
    out.append(CheckResult("psi >= |t| + eps|t|^2", worst["lower"] <= 1e-12,
                           f"max defect {worst['lower']:.2e}"))
    out.append(CheckResult("psi'(t).t >= |t| - sqrt(eps)", worst["grad"] <= 1e-12,
                           f"max defect {worst['grad']:.2e}"))
    out.append(CheckResult("psi'' >= 2 eps I", worst["hess"] >= 1 - 1e-10,
                           f"min ratio {worst['hess']:.6f}"))
    out.append(CheckResult("psi(0) = sqrt(eps)", worst["plateau"] <= 1e-15,
                           f"max error {worst['plateau']:.2e}"))

    xs = np.linspace(-4, 4, 1601)
    bad_bounds = bad_deriv = bad_lower = 0.0
    for rho in (0.5, 2.0, 64.0):
        m = kernels.max_rho(rho, xs)
        pos = np.maximum(xs, 0)
        bad_bounds = max(bad_bounds, float(np.max(pos - m)), float(np.max(m - pos - 0.5 / rho)))
        h = 1e-6
        fd = (kernels.M_rho(rho, xs + h) - kernels.M_rho(rho, xs - h)) / (2 * h)
        bad_deriv = max(bad_deriv, float(np.max(np.abs(fd - m))))
        bad_lower = max(bad_lower, float(np.max(0.5 * pos ** 2 - kernels.M_rho(rho, xs))))
    out.append(CheckResult("(x)+ <= max_rho(x) <= (x)+ + 1/(2 rho)", bad_bounds <= 1e-12,
                           f"max defect {bad_bounds:.2e}"))
    out.append(CheckResult("M_rho' = max_rho", bad_deriv <= 1e-6, f"max error {bad_deriv:.2e}"))
    out.append(CheckResult("M_rho(x) >= (x)+^2 / 2", bad_lower <= 1e-12,
                           f"max defect {bad_lower:.2e}"))
    return out


def calculus_checks(problem_factory, n=8, eps=0.05, rho=20.0, seed=0) -> List[CheckResult]:
    """
    Gradient and Taylor checks on a coarse mesh. ``problem_factory(mesh)``
    must build the problem to test.
    """
    rng = np.random.default_rng(seed)
    pb = problem_factory(n)
    mesh = pb.mesh
    params = pen.PenalizedParams(eps, rho, pb)
    x, y = mesh.nodes.T
    mid = np.clip(0.5 * (pb.u_a + pb.u_b), -5, 5)
    u = mid + 2 * np.sin(2 * x) * np.cos(1.5 * y) + 0.5 * rng.standard_normal(mesh.num_nodes)
    r_u = pen.assemble_F(params, pb.triple(u)).r_u
    worst = 0.0
    h = 1e-5
    for _ in range(5):
        v = rng.standard_normal(mesh.num_nodes)
        fd = (pen.eval_j(params, u + h * v) - pen.eval_j(params, u - h * v)) / (2 * h)
        worst = max(worst, abs(r_u @ v - fd) / max(abs(fd), 1e-300))
    out = [CheckResult(f"{pb.family}: gradient vs central differences", worst <= 1e-5,
                       f"max rel. error {worst:.2e} on {n}x{n}")]

    if pb.identity_state:
        triple = pb.triple(u)
    else:
        yy, pp = rng.standard_normal((2, mesh.num_nodes))
        yy[mesh.boundary] = 0
        pp[mesh.boundary] = 0
        triple = StateTriple(y=yy, p=pp, u=u)
    G = pen.assemble_G(params, triple)
    F0 = pen.assemble_F(params, triple)
    d = [rng.standard_normal(mesh.num_nodes) for _ in range(3)]
    d[0][mesh.boundary] = 0
    d[1][mesh.boundary] = 0
    Gd = G.pack(*G.apply(*d))
    base = G.pack(F0.r_y, F0.r_p, F0.r_u)
    errs = []
    for step in (1e-3, 1e-4):
        moved = StateTriple(y=triple.y + step * d[0], p=triple.p + step * d[1],
                            u=triple.u + step * d[2])
        F1 = pen.assemble_F(params, moved)
        errs.append(np.linalg.norm(G.pack(F1.r_y, F1.r_p, F1.r_u) - base - step * Gd))
    ratio = errs[1] / errs[0] if errs[0] > 0 else 0.0
    out.append(CheckResult(f"{pb.family}: Taylor remainder O(h^2)", 0.005 <= ratio <= 0.02,
                           f"remainder ratio {ratio:.4f} for h 1e-3 -> 1e-4 (expect 0.01)"))
    return out


def _gap(problem):
    return float(np.min(problem.u_b - problem.u_a))


def estimate_checks(records, problem, tol_lambda=1e-6, tol_viol=1e-8, tol_bv=1e-6):
    """
    Estimates for converged subproblems with ``rho^2 >= 1/(u_b - u_a)``.

    With ``G = ||grad f(u)|| / beta``: disjoint multiplier supports,
    ``||lambda_a|| + ||lambda_b|| <= 2 G``, violation ``<= 2 G / rho`` and
    ``||grad u||_L1 <= 3 G ||u|| + sqrt(eps)|Omega|``.
    """
    mesh = problem.mesh
    constant = bool(np.ptp(problem.u_a) == 0 and np.ptp(problem.u_b) == 0)
    gap = _gap(problem)
    beta = problem.beta
    eligible = [r for r in records if r.rho_k ** 2 >= 1.0 / gap]
    out = []
    min_r_eps = min((r.R_eps for r in records), default=0.0)
    out.append(CheckResult("R_eps >= 0", min_r_eps >= -1e-14, f"min {min_r_eps:.3e}"))
    prod = max((r.max_lambda_product for r in eligible), default=0.0)
    out.append(CheckResult("disjoint multiplier supports", prod == 0.0,
                           f"max nodal lambda_a*lambda_b {prod:.3e} over {len(eligible)} iterations"))

    def margin(fn):
        vals = [fn(r) for r in eligible]
        return max(vals) if vals else -np.inf

    lam = margin(lambda r: r.lambda_a_norm + r.lambda_b_norm - 2 * r.grad_f_norm / beta)
    viol = margin(lambda r: r.violation - 2 * r.grad_f_norm / (beta * r.rho_k))
    bv = margin(lambda r: r.grad_u_l1 - 3 * r.grad_f_norm / beta * r.u_norm
                - math.sqrt(r.eps_k) * mesh.area)
    obs = not constant
    out.append(CheckResult("multiplier bound ||la||+||lb|| <= 2||grad f/beta||",
                           lam <= tol_lambda, f"max excess {lam:.3e}", observational=obs))
    out.append(CheckResult("violation <= 2/rho ||grad f/beta||", viol <= tol_viol,
                           f"max excess {viol:.3e}", observational=obs))
    out.append(CheckResult("BV bound ||grad u||_L1 <= 3||grad f/beta|| ||u|| + sqrt(eps)|Omega|",
                           bv <= tol_bv, f"max excess {bv:.3e}", observational=obs))
    if obs:
        sq = [r.lambda_a_norm ** 2 + r.lambda_b_norm ** 2 for r in records]
        out.append(CheckResult("||lambda_a||^2 + ||lambda_b||^2 along iterations", True,
                               " ".join(f"{v:.3g}" for v in sq), observational=True))
    return out


def run_checks(cfg, progress=None) -> List[CheckResult]:
    """Full suite for an :class:`~bvbox.config.ExperimentConfig`."""
    from .continuation import run_continuation

    results = kernel_checks()
    rect = cfg.mesh.rect
    results += calculus_checks(lambda n: cfg.build_problem(build_mesh(rect, n, n)))
    problem = cfg.build_problem()
    try:
        res = run_continuation(problem, cfg.continuation, cfg.newton, callback=progress)
    except AssertionError as exc:
        results.append(CheckResult("monotone Armijo steps", False, str(exc)))
        return results
    results.append(CheckResult("monotone Armijo steps", True,
                               f"{res.total_newton} accepted steps"))
    results.append(CheckResult("continuation terminated", res.converged,
                               f"{len(res.records)} outer iterations"))
    results += estimate_checks(res.records, problem)
    return results


def all_passed(results):
    return all(r.passed or r.observational for r in results)
