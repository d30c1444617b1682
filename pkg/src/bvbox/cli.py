"""
Command line interface.

    bvbox run CONFIG            one continuation run, tables and fields
    bvbox sweep CONFIG --mesh-list 16,32,64
    bvbox check CONFIG          invariant suite
    bvbox write-config PRESET   emit a canned configuration

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 invariant failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import export
from . import penalized as pen
from .checks import all_passed, run_checks
from .config import PRESETS, ConfigError, from_dict, load, preset
from .continuation import (ContinuationAborted, ContinuationResult, errors_against_final,
                           run_continuation)
from .problems import SolverFailure

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("bvbox")


def _progress(rec, triple):
    log.info("k=%2d  eps=%.3e  rho=%.3e  newton=%3d  R_eps=%.3e  R_rho=%.3e  J=%.8f",
             rec.k, rec.eps_k, rec.rho_k, rec.newton_iters, rec.R_eps, rec.R_rho,
             rec.J_penalized)


def _write_fields(outdir, problem, triple, rec):
    mesh = problem.mesh
    fdir = outdir / "fields"
    fdir.mkdir(parents=True, exist_ok=True)
    params = pen.PenalizedParams(rec.eps_k, rec.rho_k, problem)
    la, lb = pen.multipliers(params, triple.u)
    for name, values in (("u", triple.u), ("y", triple.y), ("p", triple.p),
                         ("lambda_a", la), ("lambda_b", lb)):
        export.write_field(fdir / f"{name}.txt", mesh, values,
                           header=f"{name} at k={rec.k} eps={rec.eps_k:g} rho={rec.rho_k:g}")


def execute(cfg, outdir=None, progress=_progress):
    """Run one configuration and write its outputs. Returns ``(summary, exit_code)``."""
    outdir = Path(outdir or cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.toml").write_text(cfg.dumps(), encoding="utf-8")
    mesh = cfg.build_mesh()
    problem = cfg.build_problem(mesh)
    t0 = time.perf_counter()
    try:
        res = run_continuation(problem, cfg.continuation, cfg.newton, callback=progress)
    except ContinuationAborted as exc:
        log.error("solver failure: %s", exc)
        export.write_records(outdir / "records.csv", exc.records)

        partial = ContinuationResult(None, exc.records, False, problem)
        summary = export.summarize(partial, mesh, status="aborted")
        summary["partial"] = True
        summary["error"] = str(exc)
        export.write_summary(outdir / "summary.json", summary)
        return summary, EXIT_SOLVER
    errors_against_final(res)
    export.write_records(outdir / "records.csv", res.records)
    if cfg.output.fields:
        _write_fields(outdir, problem, res.triple, res.final)
    if cfg.output.iterates:
        idir = outdir / "iterates"
        idir.mkdir(exist_ok=True)
        for rec in res.records:
            export.write_field(idir / f"u_{rec.k:03d}.txt", mesh, rec.u,
                               header=f"u at k={rec.k}")
    summary = export.summarize(res, mesh)
    export.write_summary(outdir / "summary.json", summary)
    log.info("finished in %.1f s: %d outer, %d Newton iterations, J=%.6f -> %s",
             time.perf_counter() - t0, summary["iterations"], summary["newton_total"],
             summary["J_penalized"], outdir)
    return summary, EXIT_OK


def _print_sweep(rows, stream=None):
    stream = stream or sys.stdout
    head = f"{'h':>8} {'#it':>4} {'#newt':>6} {'eps_final':>11} {'rho_final':>11} {'J':>10}"
    print(head, file=stream)
    for r in rows:
        if r.get("status") != "ok":
            print(f"{r['h']:8.3f}  aborted after {r['iterations']} iterations", file=stream)
            continue
        print(f"{r['h']:8.3f} {r['iterations']:4d} {r['newton_total']:6d} "
              f"{r['eps_final']:11.3e} {r['rho_final']:11.3e} {r['J_penalized']:10.4f}",
              file=stream)


def _sweep_job(cfg_dict, nx, ny, outdir):
    logging.getLogger("bvbox").setLevel(logging.WARNING)
    cfg = from_dict(cfg_dict).with_mesh(nx, ny)
    summary, code = execute(cfg, outdir, progress=None)
    return summary, code


def parse_mesh_list(text):
    sizes = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        nx, _, ny = item.partition("x")
        try:
            sizes.append((int(nx), int(ny or nx)))
        except ValueError:
            raise ConfigError(f"bad mesh size {item!r} (use N or NxM)") from None
    if not sizes or any(n < 1 or m < 1 for n, m in sizes):
        raise ConfigError("mesh list must contain positive sizes")
    return sizes


def cmd_run(args):
    cfg = load(args.config)
    if args.nx:
        cfg = cfg.with_mesh(args.nx)
    summary, code = execute(cfg, args.out)
    print(f"outer iterations {summary['iterations']}, Newton {summary['newton_total']}, "
          f"J {summary.get('J_penalized', float('nan')):.6g}, status {summary['status']}")
    return code


def cmd_sweep(args):
    cfg = load(args.config)
    sizes = parse_mesh_list(args.mesh_list)
    root = Path(args.out or cfg.output.directory)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.to_dict(), nx, ny, root / f"mesh_{nx}x{ny}") for nx, ny in sizes]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_sweep_job, *zip(*jobs)))
    else:
        done = [_sweep_job(*job) for job in jobs]
    rows = [s for s, _ in done]
    export.write_table(root / "sweep.csv", rows, export.SWEEP_FIELDS)
    _print_sweep(rows)
    return max(code for _, code in done)


def cmd_check(args):
    cfg = load(args.config)
    if args.nx:
        cfg = cfg.with_mesh(args.nx)
    results = run_checks(cfg, progress=_progress)
    for r in results:
        print(r.line())
    ok = all_passed(results)
    print("all invariants hold" if ok else "invariant failures detected")
    return EXIT_OK if ok else EXIT_INVARIANT


def cmd_write_config(args):
    cfg = preset(args.preset)
    text = cfg.dumps()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text, encoding="utf-8")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="bvbox", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--nx", type=int, help="override the mesh size (square grid)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment on several meshes")
    p.add_argument("config")
    p.add_argument("--mesh-list", required=True, help="comma separated sizes, N or NxM")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("config")
    p.add_argument("--nx", type=int)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("write-config", help="print a canned configuration")
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_write_config)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)
    if args.verbose < 2:
        logging.getLogger("bvbox.newton").setLevel(max(level, logging.INFO))
        logging.getLogger("bvbox.continuation").setLevel(max(level, logging.WARNING))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # bounds or targets that only fail once evaluated on the mesh
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
