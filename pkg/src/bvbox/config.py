"""
Experiment configuration stored as TOML.

Sections: ``[problem]``, ``[mesh]``, ``[continuation]``, ``[newton]`` and
``[output]``. Every key is optional; the defaults reproduce the linear
tracking experiment on the 128 x 128 grid. Errors are reported as
:class:`ConfigError` carrying the offending line number when it can be found.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import tomli_w

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .continuation import ContinuationConfig
from .formula import Formula, FormulaError
from .grid_fem import build_mesh
from .newton import NewtonConfig
from .problems import FAMILIES, Bounds, indicator_target, make_problem

TARGETS = ("indicator", "indicator_closed")


class ConfigError(ValueError):
    def __init__(self, msg, line=None, source=None):
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {msg}" if where else msg)
        self.line = line
        self.source = source


BoundSpec = Union[float, str]


@dataclass
class ProblemConfig:
    family: str = "linear"
    beta: float = 1e-4
    target: BoundSpec = "indicator"
    lower: BoundSpec = -10.0
    upper: BoundSpec = 10.0
    target_file: str = ""
    noise: float = 0.0
    seed: int = 0


@dataclass
class MeshConfig:
    nx: int = 128
    ny: int = 128
    rect: tuple = (-1.0, 1.0, -1.0, 1.0)


@dataclass
class OutputConfig:
    directory: str = "results"
    fields: bool = True
    iterates: bool = False


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    continuation: ContinuationConfig = field(default_factory=ContinuationConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    SECTIONS = ("problem", "mesh", "continuation", "newton", "output")

    def to_dict(self):
        out = {}
        for name in self.SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            if name == "mesh":
                d["rect"] = list(d["rect"])
            out[name] = d
        return out

    def dumps(self):
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def with_mesh(self, nx, ny=None):
        return dataclasses.replace(
            self, mesh=dataclasses.replace(self.mesh, nx=nx, ny=nx if ny is None else ny))

    # -- building the numerical objects

    def build_mesh(self):
        return build_mesh(self.mesh.rect, self.mesh.nx, self.mesh.ny)

    def build_problem(self, mesh=None):
        mesh = mesh or self.build_mesh()
        p = self.problem
        y_d = self._target(mesh)
        bounds = Bounds(_bound_value(p.lower), _bound_value(p.upper))
        return make_problem(p.family, mesh, p.beta, y_d, bounds)

    def _target(self, mesh):
        p = self.problem
        if p.target_file:
            grid = np.loadtxt(p.target_file, ndmin=2)
            if grid.shape != (mesh.ny + 1, mesh.nx + 1):
                raise ConfigError(
                    f"target_file holds a {grid.shape} grid, mesh needs "
                    f"{(mesh.ny + 1, mesh.nx + 1)}")
            y_d = grid.ravel()
        elif p.target == "indicator":
            y_d = indicator_target(mesh)
        elif p.target == "indicator_closed":
            y_d = indicator_target(mesh, closed=True)
        elif isinstance(p.target, str):
            y_d = mesh.interpolate(Formula(p.target))
        else:
            y_d = np.full(mesh.num_nodes, float(p.target))
        if p.noise:
            rng = np.random.default_rng(p.seed)
            y_d = y_d + p.noise * rng.standard_normal(y_d.shape)
        return y_d


def _bound_value(v):
    return Formula(v) if isinstance(v, str) else float(v)


def _key_line(text, section, key):
    """Line number (1-based) of ``key`` inside ``[section]``, if present."""
    if text is None:
        return None
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[\s*([A-Za-z_]+)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*=", s):
            return no
    return None


_KINDS = {"float": (int, float), "int": (int,), "bool": (bool,), "str": (str,)}


def _check_type(value, want):
    if want == "bound":
        return isinstance(value, (int, float, str)) and not isinstance(value, bool)
    if want == "rect":
        return (isinstance(value, list) and len(value) == 4
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value))
    if want in ("float", "int") and isinstance(value, bool):
        return False
    return isinstance(value, _KINDS[want])


_SCHEMA = {
    "problem": {"family": "str", "beta": "float", "target": "bound", "lower": "bound",
                "upper": "bound", "target_file": "str", "noise": "float", "seed": "int"},
    "mesh": {"nx": "int", "ny": "int", "rect": "rect"},
    "continuation": {f.name: ("int" if f.name == "max_outer" else "float")
                     for f in dataclasses.fields(ContinuationConfig)},
    "newton": {f.name: ("int" if f.name.startswith("max_") else "float")
               for f in dataclasses.fields(NewtonConfig)},
    "output": {"directory": "str", "fields": "bool", "iterates": "bool"},
}
_CLASSES = {"problem": ProblemConfig, "mesh": MeshConfig, "continuation": ContinuationConfig,
            "newton": NewtonConfig, "output": OutputConfig}


def _validate_problem(p: ProblemConfig, err):
    if p.family not in FAMILIES:
        err(f"unknown family {p.family!r}; expected one of {sorted(FAMILIES)}", "family")
    if not (math.isfinite(p.beta) and p.beta > 0):
        err("beta must be a finite positive number", "beta")
    for key in ("lower", "upper"):
        v = getattr(p, key)
        if isinstance(v, str):
            try:
                Formula(v)
            except FormulaError as exc:
                err(str(exc), key)
        elif not math.isfinite(v):
            err(f"{key} bound must be a finite number or a formula", key)
    if isinstance(p.target, str):
        if p.target not in TARGETS:
            try:
                Formula(p.target)
            except FormulaError as exc:
                err(f"target must be one of {TARGETS} or a formula: {exc}", "target")
    elif not math.isfinite(p.target):
        err("target must be finite", "target")
    if not (math.isfinite(p.noise) and p.noise >= 0):
        err("noise must be a nonnegative number", "noise")
    lo, up = p.lower, p.upper
    if not isinstance(lo, str) and not isinstance(up, str) and not lo < up:
        err("lower bound must be below upper bound", "upper")


def from_dict(data, text=None, source=None):
    """Build an :class:`ExperimentConfig` from parsed TOML."""

    def fail(msg, section, key=None):
        raise ConfigError(f"[{section}] {msg}", _key_line(text, section, key), source)

    parts = {}
    for section, values in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _key_line(text, section, None),
                              source)
        if not isinstance(values, dict):
            fail("must be a table", section)
        schema = _SCHEMA[section]
        kwargs = {}
        for key, value in values.items():
            if key not in schema:
                fail(f"unknown key {key!r}", section, key)
            if not _check_type(value, schema[key]):
                fail(f"{key} has invalid value {value!r} (expected {schema[key]})", section, key)
            if schema[key] == "float":
                value = float(value)
            if schema[key] == "rect":
                value = tuple(float(v) for v in value)
            kwargs[key] = value
        try:
            parts[section] = _CLASSES[section](**kwargs)
        except ValueError as exc:
            fail(str(exc), section, None)

    cfg = ExperimentConfig(**parts)
    _validate_problem(cfg.problem, lambda msg, key: fail(msg, "problem", key))
    m = cfg.mesh
    if m.nx < 1 or m.ny < 1:
        fail("nx and ny must be positive", "mesh", "nx" if m.nx < 1 else "ny")
    x0, x1, y0, y1 = m.rect
    if not (x0 < x1 and y0 < y1) or not all(map(math.isfinite, m.rect)):
        fail("rect must be (x0, x1, y0, y1) with x0 < x1 and y0 < y1", "mesh", "rect")
    return cfg


def loads(text, source=None):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None,
                          source) from None
    return from_dict(data, text, source)


def load(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return loads(text, source=str(path))


# -- canned experiments

def _preset(family="linear", n=128, **problem):
    cfg = ExperimentConfig(problem=ProblemConfig(family=family, **problem),
                           mesh=MeshConfig(nx=n, ny=n))
    return cfg


PRESETS = {
    "example1": lambda: _preset("linear", 128),
    "example2_h088": lambda: _preset("semilinear", 32),
    "example2_h044": lambda: _preset("semilinear", 64),
    "bounds_sin": lambda: _preset("linear", 128, lower=-100.0,
                                  upper="8*sin(pi*x1)*sin(pi*x2)"),
    "bounds_poly": lambda: _preset("linear", 128, lower=-100.0,
                                   upper="-4*(x1-0.5)**2 - 4*x2**2 + 10"),
    "denoising": lambda: _preset("denoising", 64, beta=1e-2, noise=0.1, seed=0),
}


def preset(name):
    try:
        cfg = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    cfg.output.directory = f"results/{name}"
    return cfg
