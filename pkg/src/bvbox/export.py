"""Writers for record tables, node-grid fields and run summaries."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .continuation import ContinuationRecord
from .grid_fem import field_grid

FLOAT_FMT = "%.17g"

SWEEP_FIELDS = ("nx", "ny", "h", "iterations", "newton_total", "eps_final", "rho_final",
                "J_penalized", "J_exact", "converged")


def fmt(value):
    """Fixed textual form for table cells; ``None`` and NaN become empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ""
    return FLOAT_FMT % value


def write_table(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def write_records(path, records):
    write_table(path, [r.row() for r in records], ContinuationRecord.TABLE_FIELDS)


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_field(path, mesh, values, header=None):
    """Nodal field as an ``(ny+1) x (nx+1)`` grid, row ``j`` at height ``y_j``."""
    grid = field_grid(mesh, values)
    x0, x1, y0, y1 = mesh.rect
    head = header or ""
    head += (f"\nnode grid {mesh.ny + 1} rows x {mesh.nx + 1} cols, "
             f"x in [{x0:g}, {x1:g}], y in [{y0:g}, {y1:g}], row-major from y0")
    np.savetxt(path, grid, fmt=FLOAT_FMT, header=head.strip())


def read_field(path):
    return np.loadtxt(path, ndmin=2)


def _to_json(obj):
    # json.dumps would print floats with repr; the summary uses FLOAT_FMT
    if isinstance(obj, dict):
        items = ", ".join(f"{json.dumps(str(k))}: {_to_json(v)}" for k, v in obj.items())
        return "{" + items + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_to_json(v) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, np.bool_, str)):
        return json.dumps(obj if not isinstance(obj, np.bool_) else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    value = float(obj)
    return FLOAT_FMT % value if math.isfinite(value) else "null"


def write_summary(path, summary):
    Path(path).write_text(_to_json(summary) + "\n", encoding="utf-8")


def read_summary(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def summarize(result, mesh, status="ok"):
    """Table-2 style summary of a continuation run."""
    recs = result.records
    last = recs[-1] if recs else None
    out = {
        "status": status,
        "family": result.problem.family if result.problem is not None else None,
        "nx": mesh.nx,
        "ny": mesh.ny,
        "h": mesh.h,
        "iterations": len(recs),
        "newton_total": sum(r.newton_iters for r in recs),
        "converged": bool(result.converged) if status == "ok" else False,
    }
    if last is not None:
        out.update({
            "eps_final": last.eps_k,
            "rho_final": last.rho_k,
            "J_penalized": last.J_penalized,
            "J_exact": last.J_exact,
            "R_eps": last.R_eps,
            "R_rho": last.R_rho,
            "lambda_a_norm": last.lambda_a_norm,
            "lambda_b_norm": last.lambda_b_norm,
            "fallback_steps": sum(r.fallback_steps for r in recs),
        })
    return out
