"""Command line driver: JSON run configurations, solves, convergence
studies and machine-readable result files.

Usage::

    composite-dg <solve|study|mms|selftest> --config run.json
                 [--method cwopsip|csipg] [--sigma S] [--K K] [--out DIR] [--threads N]

Exit codes: 0 success, 1 configuration error or failed self-test,
2 Newton non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analysis import (MMS_CASES, compute_error, convergence_study, mms_problem,
                       observed_order, solve_reference_1d)
from .exceptions import (CompositeDGError, ConfigError, NoConvergence, ParseError,
                         SchemaError, SemanticError)
from .forms import CSIPG, CWOPSIP, MethodSpec, broken_norm_sq
from .geometry import NEUMANN, BoundaryPiece, Dirichlet
from .problem import Layer, LayeredLayout, ProblemSpec
from .solver import DiscreteSystem, SolveSettings, newton_solve
from .space import ScalarField, build_nested_conforming_check

__all__ = ["RunConfig", "LayerConfig", "validate_config", "load_config", "run", "main",
           "CONFIG_SCHEMA", "THREADS_ENV"]

log = logging.getLogger(__name__)

THREADS_ENV = "COMPOSITE_DG_THREADS"
SUBCOMMANDS = ("solve", "study", "mms", "selftest")
EXIT_OK, EXIT_FAILURE, EXIT_NO_CONVERGENCE = 0, 1, 2
SIDES = ("bottom", "top", "left", "right")

_number = {"type": "number"}
_condition = {"type": "string", "minLength": 1}
_piece = {
    "type": "object",
    "properties": {"lo": _number, "hi": _number, "condition": _condition},
    "required": ["lo", "hi", "condition"],
    "additionalProperties": False,
}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "composite-dg run configuration, version 1",
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "domain": {
            "type": "object",
            "properties": {"x0": _number, "x1": _number, "y0": _number, "y1": _number},
            "required": ["x0", "x1", "y0", "y1"],
            "additionalProperties": False,
        },
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "y0": _number, "y1": _number,
                    "eps": _number, "k1": _number, "v": _number, "w": _number,
                    "transverse": {"type": "integer", "minimum": 1},
                    "longitudinal": {"type": "integer", "minimum": 1},
                },
                "required": ["y0", "y1"],
                "additionalProperties": False,
            },
        },
        "boundary": {
            "type": "object",
            "propertyNames": {"enum": list(SIDES)},
            "additionalProperties": {
                "oneOf": [_condition, {"type": "array", "minItems": 1, "items": _piece}]
            },
        },
        "dirichlet_values": {"type": "object", "additionalProperties": _number},
        "method": {
            "type": "object",
            "properties": {
                "variant": {"enum": [CSIPG, CWOPSIP]},
                "sigma": {"oneOf": [{"const": "default"},
                                    {"type": "number", "exclusiveMinimum": 0}]},
            },
            "additionalProperties": False,
        },
        "mesh": {
            "type": "object",
            "properties": {"K": {"type": "integer", "minimum": 1}, "nested": {"type": "boolean"}},
            "additionalProperties": False,
        },
        "solver": {
            "type": "object",
            "properties": {
                "newton_tol": {"type": "number", "exclusiveMinimum": 0},
                "newton_atol": {"type": "number", "minimum": 0},
                "max_newton": {"type": "integer", "minimum": 1},
                "linear_solver": {"enum": ["auto", "direct", "cg"]},
                "cg_tol": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "study": {
            "type": "object",
            "properties": {
                "K_list": {"type": "array", "minItems": 1,
                           "items": {"type": "integer", "minimum": 1}},
                "reference": {
                    "oneOf": [
                        {"type": "object",
                         "properties": {"kind": {"const": "oracle1d"},
                                        "M": {"type": "integer", "minimum": 1024}},
                         "required": ["kind"], "additionalProperties": False},
                        {"type": "object",
                         "properties": {"kind": {"const": "mms"},
                                        "case": {"enum": list(MMS_CASES)}},
                         "required": ["kind", "case"], "additionalProperties": False},
                        {"type": "object",
                         "properties": {"kind": {"const": "none"}},
                         "required": ["kind"], "additionalProperties": False},
                    ]
                },
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "dir": {"type": "string", "minLength": 1},
                "fields": {"type": "boolean"},
                "timings": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "required": ["domain", "layers"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class LayerConfig:
    y0: float
    y1: float
    eps: float = 1.0
    k1: float = 0.0
    v: float = 0.0
    w: float = 0.0
    transverse: int = 1
    longitudinal: int = 1


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration; :meth:`to_dict` re-validates."""

    domain: tuple[float, float, float, float]
    layers: tuple[LayerConfig, ...]
    boundary: dict = field(default_factory=lambda: {"bottom": "bottom", "top": "top"})
    dirichlet_values: dict = field(default_factory=dict)
    variant: str = CSIPG
    sigma: float | None = None
    K: int = 8
    nested: bool = False
    newton_tol: float = 1e-10
    newton_atol: float = 1e-13
    max_newton: int = 50
    linear_solver: str = "auto"
    cg_tol: float = 1e-12
    K_list: tuple[int, ...] = (4, 8, 16, 32)
    reference: dict = field(default_factory=lambda: {"kind": "none"})
    out_dir: str = "results"
    dump_fields: bool = True
    timings: bool = True

    def to_dict(self) -> dict:
        x0, x1, y0, y1 = self.domain
        return {
            "version": 1,
            "domain": {"x0": x0, "x1": x1, "y0": y0, "y1": y1},
            "layers": [dataclasses.asdict(l) for l in self.layers],
            "boundary": _plain(self.boundary),
            "dirichlet_values": dict(self.dirichlet_values),
            "method": {"variant": self.variant,
                       "sigma": "default" if self.sigma is None else self.sigma},
            "mesh": {"K": self.K, "nested": self.nested},
            "solver": {"newton_tol": self.newton_tol, "newton_atol": self.newton_atol,
                       "max_newton": self.max_newton, "linear_solver": self.linear_solver,
                       "cg_tol": self.cg_tol},
            "study": {"K_list": list(self.K_list), "reference": dict(self.reference)},
            "outputs": {"dir": self.out_dir, "fields": self.dump_fields,
                        "timings": self.timings},
        }

    def with_overrides(self, **changes) -> "RunConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes) if changes else self

    # model objects ------------------------------------------------------

    def layout(self) -> LayeredLayout:
        sides = {}
        for side, cond in self.boundary.items():
            if isinstance(cond, str):
                sides[side] = _condition_of(cond)
            else:
                sides[side] = [BoundaryPiece(p["lo"], p["hi"], _condition_of(p["condition"]))
                               for p in cond]
        layers = tuple(Layer(l.y0, l.y1, l.transverse, l.longitudinal) for l in self.layers)
        return LayeredLayout(self.domain[0], self.domain[1], layers, sides)

    def problem(self) -> ProblemSpec:
        lay = self.layout()
        return ProblemSpec(
            eps=lay.layer_field([l.eps for l in self.layers]),
            k1=lay.layer_field([l.k1 for l in self.layers]),
            v_offset=lay.layer_field([l.v for l in self.layers]),
            w_offset=lay.layer_field([l.w for l in self.layers]),
            boundary={k: ScalarField.constant(v) for k, v in self.dirichlet_values.items()},
        )

    def method(self) -> MethodSpec:
        return MethodSpec(self.variant, self.sigma)

    def settings(self) -> SolveSettings:
        return SolveSettings(newton_tol=self.newton_tol, newton_atol=self.newton_atol,
                             max_newton=self.max_newton, cg_tol=self.cg_tol,
                             linear_solver=None if self.linear_solver == "auto"
                             else self.linear_solver)


def _plain(boundary: dict) -> dict:
    return {s: c if isinstance(c, str) else [dict(p) for p in c] for s, c in boundary.items()}


def _condition_of(name: str):
    return NEUMANN if name == NEUMANN else Dirichlet(name)


def _json_path(parts) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


def validate_config(text: str) -> RunConfig:
    """Parse and check a JSON configuration; raises a :class:`ConfigError`
    subclass whose ``path`` locates the problem."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}", "$") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise SchemaError(e.message, _json_path(e.absolute_path))
    cfg = _resolve(doc)
    _check_semantics(cfg)
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"config is not UTF-8: {exc}", "$") from exc
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", "$") from exc
    return validate_config(text)


def _resolve(doc: dict) -> RunConfig:
    d = doc["domain"]
    method = doc.get("method", {})
    sigma = method.get("sigma", "default")
    mesh, solver = doc.get("mesh", {}), doc.get("solver", {})
    study, outputs = doc.get("study", {}), doc.get("outputs", {})
    ref = dict(study.get("reference", {"kind": "none"}))
    if ref["kind"] == "oracle1d":
        ref.setdefault("M", 1024)
    base = RunConfig((0.0, 1.0, 0.0, 1.0), ())
    # omitted boundary and values: grounded contacts at both ends
    defaults = {} if "boundary" in doc else {lab: 0.0 for lab in base.boundary.values()}
    return RunConfig(
        domain=(float(d["x0"]), float(d["x1"]), float(d["y0"]), float(d["y1"])),
        layers=tuple(LayerConfig(**{k: (int(v) if k in ("transverse", "longitudinal") else float(v))
                                    for k, v in l.items()}) for l in doc["layers"]),
        boundary=_plain(doc.get("boundary", base.boundary)),
        dirichlet_values={k: float(v) for k, v in doc.get("dirichlet_values", defaults).items()},
        variant=method.get("variant", base.variant),
        sigma=None if sigma == "default" else float(sigma),
        K=mesh.get("K", base.K),
        nested=mesh.get("nested", base.nested),
        newton_tol=float(solver.get("newton_tol", base.newton_tol)),
        newton_atol=float(solver.get("newton_atol", base.newton_atol)),
        max_newton=solver.get("max_newton", base.max_newton),
        linear_solver=solver.get("linear_solver", base.linear_solver),
        cg_tol=float(solver.get("cg_tol", base.cg_tol)),
        K_list=tuple(study.get("K_list", base.K_list)),
        reference=ref,
        out_dir=outputs.get("dir", base.out_dir),
        dump_fields=outputs.get("fields", base.dump_fields),
        timings=outputs.get("timings", base.timings),
    )


def _check_semantics(cfg: RunConfig) -> None:
    x0, x1, y0, y1 = cfg.domain
    if not (x1 > x0 and y1 > y0):
        raise SemanticError("domain must have positive width and height", "$.domain")
    order = sorted(range(len(cfg.layers)), key=lambda k: cfg.layers[k].y0)
    if order != list(range(len(cfg.layers))):
        raise SemanticError("layers must be listed from bottom to top", "$.layers")
    prev = y0
    for k, l in enumerate(cfg.layers):
        path = f"$.layers[{k}]"
        if not l.y1 > l.y0:
            raise SemanticError("layer must have y1 > y0", path)
        if l.y0 < prev - 1e-12:
            raise SemanticError(f"layer overlaps the previous one (y0={l.y0} < {prev})", path)
        if l.y0 > prev + 1e-12:
            raise SemanticError(f"gap between layers ({prev} to {l.y0})", path)
        if not l.eps > 0:
            raise SemanticError("eps must be positive", path + ".eps")
        prev = l.y1
    if abs(prev - y1) > 1e-12:
        raise SemanticError(f"layers end at {prev}, domain ends at {y1}", "$.layers")

    labels = set()
    for side, cond in cfg.boundary.items():
        conds = [cond] if isinstance(cond, str) else [p["condition"] for p in cond]
        labels.update(c for c in conds if c != NEUMANN)
    for lab in sorted(labels):
        if lab not in cfg.dirichlet_values:
            raise SemanticError(f"Dirichlet label {lab!r} has no value", "$.dirichlet_values")
    if not labels and cfg.reference.get("kind") != "mms":
        raise SemanticError("no Dirichlet boundary; the problem is not well posed", "$.boundary")

    K_list = list(cfg.K_list)
    if any(b != 2 * a for a, b in zip(K_list[:-1], K_list[1:])):
        raise SemanticError("each K must double the previous one", "$.study.K_list")
    try:
        layout = cfg.layout()
        layout.grid()
        if cfg.nested:
            for K in sorted(set([cfg.K] + K_list)):
                if not build_nested_conforming_check(layout.space(K)):
                    raise SemanticError(f"mesh plan is not nested at K={K}", "$.mesh.nested")
    except CompositeDGError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise SemanticError(str(exc), "$.boundary") from exc


# running ----------------------------------------------------------------

class _Outputs:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def field_dump(self, space, coeffs, K: int) -> Path:
        path = self.dir / f"field_K{K}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subdomain", "x", "y", "u"])
            for i, m in enumerate(space.meshes):
                vals = coeffs[space.dof_slice(i)]
                for (x, y), u in zip(m.vertices, vals):
                    w.writerow([i, repr(float(x)), repr(float(y)), repr(float(u))])
        return path

    def table(self, rows) -> Path:
        path = self.dir / "convergence.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(rows[0].CSV_COLUMNS if rows else _csv_columns())
            for r in rows:
                vals = r.csv_values()
                if not self.cfg.timings:
                    vals[-1] = 0.0
                w.writerow([_fmt(v) for v in vals])
        return path

    def report(self, payload: dict) -> Path:
        path = self.dir / "report.json"
        doc = {"config": self.cfg.to_dict(), "versions": _versions(), **payload}
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
        return path


def _csv_columns():
    from .analysis import ConvergenceRow
    return ConvergenceRow.CSV_COLUMNS


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _versions() -> dict:
    import scipy
    return {"composite_dg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _reference(cfg: RunConfig, problem, layout):
    kind = cfg.reference.get("kind", "none")
    if kind == "oracle1d":
        return solve_reference_1d(problem, layout, cfg.reference.get("M", 1024))
    return None


def _cmd_solve(cfg: RunConfig, out: _Outputs) -> int:
    problem, layout = cfg.problem(), cfg.layout()
    space = layout.space(cfg.K)
    coeffs, rep = newton_solve(space, cfg.method(), problem, settings=cfg.settings())
    payload = {"K": cfg.K, "dofs": space.total_dofs, "solve": rep.as_dict()}
    if cfg.reference.get("kind") == "oracle1d":
        ref = _reference(cfg, problem, layout)
        l2, h1, br = compute_error(space, coeffs, ref, cfg.method(), problem.eps)
        payload["errors"] = {"err_L2": l2, "err_H1": h1, "err_broken": br}
    if cfg.dump_fields:
        out.field_dump(space, coeffs, cfg.K)
    out.report(payload)
    print(f"K={cfg.K} dofs={space.total_dofs} newton={rep.iterations} "
          f"residual={rep.final_residual:.3e}")
    return EXIT_OK


def _study(cfg: RunConfig, out: _Outputs, problem, layout, reference) -> tuple[list, int]:
    def show(row):
        print(f"K={row.K} dofs={row.dofs} err_L2={_fmt(row.err_L2)} ratio_L2={_fmt(row.ratio_L2)} "
              f"err_H1={_fmt(row.err_H1)} ratio_H1={_fmt(row.ratio_H1)}", flush=True)

    rows, sols = convergence_study(problem, layout, cfg.method(), cfg.K_list, reference,
                                   cfg.settings(), on_row=show, keep_solutions=True)
    if cfg.dump_fields:
        for row, (space, u) in zip(rows, sols):
            if u is not None:
                out.field_dump(space, u, row.K)
    out.table(rows)
    failed = [r for r in rows if r.error is not None]
    return rows, (EXIT_NO_CONVERGENCE if failed else EXIT_OK)


def _orders(rows) -> dict:
    return {k: observed_order(rows, k) if len(rows) > 1 else None
            for k in ("L2", "H1", "broken")}


def _cmd_study(cfg: RunConfig, out: _Outputs) -> int:
    if cfg.reference.get("kind") == "mms":
        return _cmd_mms(cfg, out)
    problem, layout = cfg.problem(), cfg.layout()
    rows, code = _study(cfg, out, problem, layout, _reference(cfg, problem, layout))
    out.report({"rows": [r.as_dict() for r in rows], "observed_order": _orders(rows)})
    return code


def _cmd_mms(cfg: RunConfig, out: _Outputs) -> int:
    if cfg.reference.get("kind") != "mms":
        raise SemanticError("the mms subcommand needs study.reference.kind = 'mms'",
                            "$.study.reference")
    problem, exact, layout = mms_problem(cfg.reference["case"])
    rows, code = _study(cfg, out, problem, layout, exact)
    orders = _orders(rows)
    out.report({"case": cfg.reference["case"], "rows": [r.as_dict() for r in rows],
                "observed_order": orders})
    print("observed order: " + ", ".join(f"{k}={_fmt(v)}" for k, v in orders.items()))
    return code


def _cmd_selftest(cfg: RunConfig, out: _Outputs) -> int:
    rng = np.random.default_rng(0)
    problem, layout = cfg.problem(), cfg.layout()
    space = layout.space(cfg.K)
    checks = {}
    for variant in (CSIPG, CWOPSIP):
        method = MethodSpec(variant, cfg.sigma)
        sysm = DiscreteSystem(space, method, problem)
        K = sysm.K
        asym = abs(K - K.T).max() / abs(K).max()
        checks[f"{variant}_symmetric"] = (float(asym), bool(asym <= 1e-13))
        ratios = []
        for _ in range(50):
            v = rng.standard_normal(space.total_dofs)
            ratios.append(float(v @ (K @ v)) / broken_norm_sq(space, method, v, problem.eps,
                                                               eps_max=sysm.eps_max))
        if variant == CWOPSIP:
            dev = max(abs(r - 1.0) for r in ratios)
            checks["cwopsip_identity"] = (dev, bool(dev <= 1e-12))
        else:
            low = min(ratios)
            checks["csipg_coercivity"] = (low, bool(low >= 0.45))
    p_prob, p_exact, p_layout = mms_problem("patch")
    p_space = p_layout.space(1)
    method = MethodSpec(CSIPG)
    u, _ = newton_solve(p_space, method, p_prob)
    err = math.sqrt(broken_norm_sq(p_space, method, u, against=p_exact) /
                    broken_norm_sq(p_space, method, np.zeros_like(u), against=p_exact))
    checks["patch_test"] = (err, bool(err <= 1e-10))
    for name, (value, ok) in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e}")
    out.report({"selftest": {k: {"value": v, "passed": ok} for k, (v, ok) in checks.items()}})
    return EXIT_OK if all(ok for _, ok in checks.values()) else EXIT_FAILURE


_COMMANDS = {"solve": _cmd_solve, "study": _cmd_study, "mms": _cmd_mms,
             "selftest": _cmd_selftest}


def run(cfg: RunConfig, subcommand: str) -> int:
    """Execute one subcommand; returns the process exit code."""
    if subcommand not in _COMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = _Outputs(cfg)
    try:
        return _COMMANDS[subcommand](cfg, out)
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.report is not None:
            out.report({"error": str(exc), "solve": exc.report.as_dict()})
        return EXIT_NO_CONVERGENCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except CompositeDGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="composite-dg",
                                description="Composite DG solver for the equilibrium "
                                            "potential equation on layered devices.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration (schema v1)")
    p.add_argument("--method", choices=[CWOPSIP, CSIPG], help="override method.variant")
    p.add_argument("--sigma", type=float, help="override the penalty parameter")
    p.add_argument("--K", type=int, help="override mesh.K (solve, selftest)")
    p.add_argument("--out", help="override outputs.dir")
    p.add_argument("--threads", type=int,
                   help=f"thread limit for numerical libraries (fallback: ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}", "$env") from None
    return None


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.sigma is not None and not args.sigma > 0:
            raise SemanticError("--sigma must be positive", "--sigma")
        if args.K is not None and args.K < 1:
            raise SemanticError("--K must be positive", "--K")
        cfg = cfg.with_overrides(variant=args.method, sigma=args.sigma, K=args.K,
                                 out_dir=args.out)
        threads = _threads(args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if threads is not None:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=threads):
            return run(cfg, args.subcommand)
    return run(cfg, args.subcommand)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
