"""
Command-line front end.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Exit codes: 0 pass, 1 analysis failure, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import chart as chart_mod
from . import systems, torus
from .flows import FlowConfig, FlowError, NonCompactError, conservation_drift, integrate_flow

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


class StageFailure(Exception):
    def __init__(self, stage: str, message: str, report: dict | None = None):
        self.stage = stage
        self.report = report or {}
        super().__init__(f"{stage}: {message}")


class Run:
    """Collects stage outcomes, timings and emitted files for the manifest."""

    def __init__(self, args, digest: str, command: str):
        self.args = args
        self.digest = digest
        self.command = command
        self.stages = []
        self.outputs = []

    def stage(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*a, **kw)
        except StageFailure:
            self.stages.append({"stage": name, "ok": False, "seconds": time.perf_counter() - t0})
            raise
        except (NonCompactError, FlowError, torus.ContinuationError, torus.PeriodRefinementError,
                torus.LatticeSpanError, torus.OutOfGridError, chart_mod.ChartError) as exc:
            self.stages.append({"stage": name, "ok": False, "seconds": time.perf_counter() - t0})
            raise StageFailure(name, str(exc), {"diagnostic": str(exc)}) from exc
        self.stages.append({"stage": name, "ok": True, "seconds": time.perf_counter() - t0})
        return out

    def write(self, name: str, text: str) -> str:
        path = os.path.join(self.args.out, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.outputs.append(path)
        return path

    def write_json(self, name: str, obj) -> str:
        return self.write(name, json.dumps(systems._jsonable(obj), indent=2, sort_keys=True) + "\n")

    def finish(self, code: int) -> int:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "command": self.command,
            "input_sha256": self.digest,
            "config": config,
            "stages": self.stages,
            "exit_code": code,
        }
        path = os.path.join(self.args.out, "manifest.json")
        manifest["outputs"] = self.outputs + [path]
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return code


def _load(args):
    if args.builtin and args.input:
        raise InputError("give either --builtin or --input, not both")
    if args.builtin:
        try:
            spec = systems.builtin(args.builtin)
        except KeyError as exc:
            raise InputError(str(exc.args[0])) from exc
        data = systems.serialize(spec).encode()
    elif args.input:
        try:
            with open(args.input, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read {args.input}: {exc}") from exc
        try:
            spec = systems.load_system(data.decode("utf-8"))
        except (systems.SchemaError, UnicodeDecodeError) as exc:
            raise InputError(str(exc)) from exc
    else:
        raise InputError("one of --builtin or --input is required")
    if args.seed:
        try:
            seed = [float(v) for v in args.seed.split(",")]
        except ValueError as exc:
            raise InputError(f"bad --seed {args.seed!r}") from exc
        if len(seed) != spec.n:
            raise InputError(f"--seed needs {spec.n} values")
        try:
            spec = spec.with_seed(seed)
        except systems.SchemaError as exc:
            raise InputError(str(exc)) from exc
    return spec, hashlib.sha256(data).hexdigest()


def _cfg(args) -> FlowConfig:
    return FlowConfig(abs_tol=args.integ_tol, rel_tol=args.integ_tol)


def _lattice(run, spec, args):
    return run.stage(
        "periods",
        torus.build_lattice_field,
        spec,
        cfg=_cfg(args),
        nodes=args.grid,
        tol=args.period_tol,
    )


def _require_field(field_):
    if field_.failed.any():
        raise StageFailure(
            "periods",
            f"{int(field_.failed.sum())} grid nodes failed",
            {"frontier": field_.frontier(), "notes": field_.notes},
        )


def _validation(spec, args):
    poisson, report = systems.validate(spec, args.samples, args.tol)
    return poisson, report


def cmd_validate(run, spec, args) -> int:
    poisson, report = run.stage("validate", _validation, spec, args)
    run.write_json("validation.json", {"poisson": poisson.to_dict(), "integrability": report.to_dict()})
    return EXIT_OK if poisson.passed and report.passed else EXIT_FAIL


def cmd_flow(run, spec, args) -> int:
    name = args.function or spec.function_names[0]
    if name not in spec.function_names:
        raise InputError(f"unknown function {name!r}")
    m = np.array(spec.seed)
    cfg = _cfg(args)
    times = np.linspace(0.0, args.time, args.steps + 1)
    rows = ["t," + ",".join(spec.coords)]
    pts = []
    t0 = time.perf_counter()
    try:
        for t in times:
            x = integrate_flow(spec, name, m, float(t), cfg)
            pts.append(x)
            rows.append(",".join(f"{v:.17g}" for v in [t, *x]))
    except FlowError as exc:
        run.stages.append({"stage": "flow", "ok": False, "seconds": time.perf_counter() - t0})
        raise StageFailure("flow", str(exc)) from exc
    run.stages.append({"stage": "flow", "ok": True, "seconds": time.perf_counter() - t0})
    run.write("flow.csv", "\n".join(rows) + "\n")
    drift = conservation_drift(spec, m, np.array(pts))
    run.write_json("flow_report.json", {"function": name, "time": args.time, "drift": drift})
    return EXIT_OK


def cmd_periods(run, spec, args) -> int:
    field_ = _lattice(run, spec, args)
    run.write("lattice.csv", torus.lattice_csv(field_))
    ok = not field_.failed.any()
    run.write_json("periods_report.json", {
        "seed_basis": field_.basis[field_.seed_index],
        "max_defect": float(np.nanmax(field_.defects)),
        "max_jump": field_.max_jump(),
        "failed_nodes": int(field_.failed.sum()),
        "frontier": field_.frontier(),
        "notes": field_.notes,
    })
    return EXIT_OK if ok else EXIT_FAIL


def cmd_actions(run, spec, args) -> int:
    field_ = _lattice(run, spec, args)
    _require_field(field_)
    table = run.stage("actions", chart_mod.action_values, field_)
    closed = run.stage("closedness", chart_mod.closedness_check, field_)
    path = run.stage("path", chart_mod.path_independence, field_, closed)
    lines = [",".join(torus.base_names(spec) + [f"p{i + 1}" for i in range(spec.rank)])]
    for idx in field_.grid.indices():
        vals = list(field_.grid.node(idx)) + list(table.values[idx])
        lines.append(",".join(f"{v:.17g}" for v in vals))
    run.write("actions.csv", "\n".join(lines) + "\n")
    ok = closed.relative < args.closed_tol and path.passed
    run.write_json("actions_report.json", {
        "closedness": closed.to_dict(),
        "path_independence": path.to_dict(),
        "closedness_threshold": args.closed_tol,
        "passed": ok,
    })
    return EXIT_OK if ok else EXIT_FAIL


def _thresholds(spec, args) -> dict:
    t = chart_mod.default_thresholds(spec)
    t["theta_p"] = args.theta_p_tol
    t["p_p"] = args.p_p_tol
    if "p_z" in t:
        t["p_z"] = args.z_tol
    for key in ("theta_z", "z_z", "z_z_spread"):
        if key in t:
            t[key] = args.z_tol
    if spec.rank > 1:
        t["theta_theta"] = args.theta_theta_tol
    return t


def _build_chart(run, spec, args):
    field_ = _lattice(run, spec, args)
    _require_field(field_)
    return run.stage("chart", chart_mod.build_chart, spec, field_, _cfg(args), args.straighten)


def cmd_chart(run, spec, args) -> int:
    ch = _build_chart(run, spec, args)
    run.write("chart.csv", chart_mod.chart_csv(ch))
    rep = run.stage("verify", chart_mod.verify_canonical, spec, ch, args.samples_chart)
    thresholds = _thresholds(spec, args)
    out = rep.to_dict(thresholds)
    out["notes"] = ch.notes
    run.write_json("chart_report.json", out)
    return EXIT_OK if rep.passed(thresholds) else EXIT_FAIL


def _torus_checks(spec, ch, n, seed, cfg, tol):
    reps = []
    for c, u, anchor in chart_mod.chart_samples(ch, n, seed):
        m = chart_mod.torus_point(spec, ch, c, u, cfg, anchor)
        reps.append(torus.check_torus_action(spec, ch.field, m, cfg, tol))
    return reps


def cmd_verify(run, spec, args) -> int:
    ch = _build_chart(run, spec, args)
    cfg = _cfg(args)
    reps = run.stage("torus_action", _torus_checks, spec, ch, args.samples_torus, 0, cfg,
                     args.period_tol)
    period = max(r.max_period_defect for r in reps)
    poisson = max(r.max_poisson_residual for r in reps)
    rep = run.stage("verify", chart_mod.verify_canonical, spec, ch, args.samples_chart)
    thresholds = _thresholds(spec, args)
    ok = rep.passed(thresholds) and period < args.period1_tol and poisson < args.schouten_tol
    run.write_json("verify_report.json", {
        "canonical": rep.to_dict(thresholds),
        "period_one_defect": period,
        "period_one_threshold": args.period1_tol,
        "max_interpolation_gap": max(r.interpolation_gap for r in reps),
        "schouten_residual": poisson,
        "schouten_threshold": args.schouten_tol,
        "passed": ok,
    })
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "validate": cmd_validate,
    "flow": cmd_flow,
    "periods": cmd_periods,
    "actions": cmd_actions,
    "chart": cmd_chart,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("input")
    src.add_argument("--builtin", metavar="NAME", help=f"one of {', '.join(systems.BUILTIN_NAMES)}")
    src.add_argument("--input", metavar="FILE", help="YAML or JSON system document")
    common.add_argument("--seed", metavar="X1,...,XN", help="override the seed point")
    common.add_argument("--out", default=".", metavar="DIR", help="output directory")
    common.add_argument("--grid", type=int, default=11, help="nodes per action axis")
    common.add_argument("--tol", type=float, default=1e-9, help="Jacobi and involution tolerance")
    common.add_argument("--samples", type=int, default=100, help="validation sample count")
    common.add_argument("--integ-tol", type=float, default=1e-10, help="integrator abs/rel tolerance")
    common.add_argument("--period-tol", type=float, default=1e-9, help="return-defect tolerance")
    common.add_argument("--straighten", action="store_true", help="remove {theta_i, theta_j}")
    common.add_argument("--samples-chart", type=int, default=50)
    common.add_argument("--samples-torus", type=int, default=20)
    common.add_argument("--theta-p-tol", type=float, default=1e-5)
    common.add_argument("--p-p-tol", type=float, default=1e-8)
    common.add_argument("--z-tol", type=float, default=1e-6)
    common.add_argument("--theta-theta-tol", type=float, default=1e-4)
    common.add_argument("--closed-tol", type=float, default=1e-3)
    common.add_argument("--period1-tol", type=float, default=1e-6)
    common.add_argument("--schouten-tol", type=float, default=1e-4)

    parser = argparse.ArgumentParser(
        prog="aacoords", description="Action-angle coordinates for integrable Poisson systems."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "flow":
            p.add_argument("--function", metavar="NAME", help="Hamiltonian (default: first function)")
            p.add_argument("--time", type=float, default=1.0)
            p.add_argument("--steps", type=int, default=10, help="output rows minus one")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {args.out}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        spec, digest = _load(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run = Run(args, None, args.command)
        run.stages.append({"stage": "load", "ok": False, "seconds": 0.0, "error": str(exc)})
        return run.finish(EXIT_INPUT)
    run = Run(args, digest, args.command)
    try:
        code = COMMANDS[args.command](run, spec, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return run.finish(EXIT_INPUT)
    except StageFailure as exc:
        print(f"analysis failed in stage {exc}", file=sys.stderr)
        run.write_json(f"{args.command}_failure.json", {
            "stage": exc.stage,
            "error": str(exc),
            **exc.report,
        })
        return run.finish(EXIT_FAIL)
    status = "pass" if code == EXIT_OK else "fail"
    print(f"{args.command} {spec.name}: {status}")
    return run.finish(code)


if __name__ == "__main__":
    sys.exit(main())
