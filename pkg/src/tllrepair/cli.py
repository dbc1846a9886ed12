"""Command-line interface.

Exit codes: 0 success, 1 validation checks failed, 2 input error,
3 infeasible (the report names the stage: budget, local or global).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import SafetySpec, find_counterexample, prepare_bounds
from .demo import write_scenario
from .dynamics import Box, DynamicsModel, model_from_config, simulate
from .errors import BudgetError, InputError
from .repair import RepairConfig, repair_tll, validate_repair
from .tll import TllNetwork, active_indices, eval_lattice

EXIT_OK, EXIT_CHECKS, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _load_model(path) -> DynamicsModel:
    return model_from_config(_read_json(path, "dynamics"))


def _load_spec(path) -> SafetySpec:
    return SafetySpec.from_dict(_read_json(path, "safety spec"))


def _load_net(path) -> TllNetwork:
    return TllNetwork.from_dict(_read_json(path, "network"))


def _vector(text, n, what):
    try:
        v = np.array([float(t) for t in str(text).replace(",", " ").split()])
    except ValueError as exc:
        raise InputError(f"{what} must be a list of numbers: {text!r}") from exc
    if v.shape != (n,):
        raise InputError(f"{what} needs {n} entries, got {v.size}")
    return v


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, default=_json_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def _scenario(args):
    return _read_json(args.scenario, "scenario") if getattr(args, "scenario", None) else {}


def _config(args, scenario) -> RepairConfig:
    base = dict(scenario.get("config", {}))
    for key in ("margin_eps", "ce_horizon", "repair_horizon", "solver_tol", "samples"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "no_global_caps", False):
        base["enforce_global_safety_caps"] = False
    known = RepairConfig.__dataclass_fields__
    unknown = set(base) - set(known)
    if unknown:
        raise InputError(f"unknown repair settings: {sorted(unknown)}")
    return RepairConfig(**base)


def _x_ce(args, scenario, n):
    if getattr(args, "x_ce", None) is not None:
        return _vector(args.x_ce, n, "--x-ce")
    if "x_ce" in scenario:
        return _vector(" ".join(map(str, scenario["x_ce"])), n, "scenario x_ce")
    return None


def _trajectory_csv(traj, spec, path):
    extra = {f"unsafe_h{i + 1}": h for i, h in enumerate(spec.X_unsafe.h)} if spec is not None else None
    traj.to_csv(path, extra)


# -- commands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    model = _load_model(args.dynamics)
    net = _load_net(args.network)
    if args.steps < 1:
        raise InputError("--steps must be at least 1")
    x0 = _vector(args.x0, model.n, "--x0")
    spec = _load_spec(args.spec) if args.spec else None
    traj = simulate(model, lambda x: eval_lattice(net, x), x0, args.steps)
    _trajectory_csv(traj, spec, args.out)
    info = {"csv": str(args.out), "steps": traj.steps}
    if spec is not None:
        info["first_unsafe_step"] = traj.first_step_in(spec.X_unsafe.contains)
    _emit(info)
    return EXIT_OK


def _search_region(args, scenario, spec):
    if args.region_lower is not None or args.region_upper is not None:
        if args.region_lower is None or args.region_upper is None:
            raise InputError("give both --region-lower and --region-upper")
        return Box(_vector(args.region_lower, spec.n, "--region-lower"), _vector(args.region_upper, spec.n, "--region-upper"))
    if "search_region" in scenario:
        return Box.from_dict(scenario["search_region"])
    return None


def cmd_find_ce(args) -> int:
    model = _load_model(args.dynamics)
    spec = _load_spec(args.spec)
    net = _load_net(args.network)
    scenario = _scenario(args)
    grid = args.grid or scenario.get("search_grid", 11)
    region = _search_region(args, scenario, spec)
    x = find_counterexample(model, net, spec, args.ce_horizon, grid, region)
    _emit({"found": x is not None, "x_ce": None if x is None else x.tolist(), "ce_horizon": args.ce_horizon,
           "grid": grid}, args.out)
    return EXIT_OK


def cmd_bounds(args) -> int:
    model = _load_model(args.dynamics)
    spec = _load_spec(args.spec)
    net = _load_net(args.network)
    try:
        ctx = prepare_bounds(model, net, spec, args.samples or 21)
    except BudgetError as exc:
        _emit({"status": "budget_infeasible", "stage": "budget", "message": str(exc)}, args.out)
        return EXIT_INFEASIBLE
    _emit({"status": "ok", **ctx.to_dict()}, args.out)
    return EXIT_OK


def cmd_repair(args) -> int:
    model = _load_model(args.dynamics)
    spec = _load_spec(args.spec)
    net = _load_net(args.network)
    scenario = _scenario(args)
    config = _config(args, scenario)
    x_ce = _x_ce(args, scenario, net.n)
    if x_ce is None:
        region = _search_region(args, scenario, spec)
        x_ce = find_counterexample(model, net, spec, config.ce_horizon, args.grid or scenario.get("search_grid", 11),
                                   region)
        if x_ce is None:
            raise InputError("no --x-ce given and the grid search found no counterexample")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    result = repair_tll(model, net, spec, x_ce, config)
    report = {"x_ce": x_ce.tolist(), "config": config.to_dict(), **result.to_dict()}
    before = simulate(model, lambda x: eval_lattice(net, x), x_ce, args.steps)
    _trajectory_csv(before, spec, outdir / "before.csv")
    report["before_csv"] = str(outdir / "before.csv")
    report["before_first_unsafe_step"] = before.first_step_in(spec.X_unsafe.contains)
    if result.ok:
        result.repaired.save(outdir / "repaired_network.json")
        after = simulate(model, lambda x: eval_lattice(result.repaired, x), x_ce, args.steps)
        _trajectory_csv(after, spec, outdir / "after.csv")
        report["repaired_network"] = str(outdir / "repaired_network.json")
        report["after_csv"] = str(outdir / "after.csv")
        report["after_first_unsafe_step"] = after.first_step_in(spec.X_unsafe.contains)
        report["validation"] = validate_repair(model, net, result.repaired, spec, x_ce, result.pattern, config,
                                               result.bounds)
    _emit(report, outdir / "report.json")
    return EXIT_OK if result.ok else EXIT_INFEASIBLE


def cmd_validate(args) -> int:
    model = _load_model(args.dynamics)
    spec = _load_spec(args.spec)
    original = _load_net(args.original)
    repaired = _load_net(args.repaired) if args.repaired else original
    scenario = _scenario(args)
    config = _config(args, scenario)
    x_ce = _x_ce(args, scenario, original.n)
    if x_ce is None:
        raise InputError("validate needs --x-ce (or a scenario file with x_ce)")
    pattern = active_indices(original, x_ce)
    try:
        ctx = prepare_bounds(model, original, spec, config.samples, config.lipschitz_samples)
    except BudgetError as exc:
        _emit({"status": "budget_infeasible", "stage": "budget", "message": str(exc)}, args.out)
        return EXIT_INFEASIBLE
    report = validate_repair(model, original, repaired, spec, x_ce, pattern, config, ctx)
    report["pattern"] = pattern.to_dict()
    _emit(report, args.out)
    return EXIT_OK if report["all_pass"] else EXIT_CHECKS


def cmd_demo_car(args) -> int:
    paths = write_scenario(args.outdir, args.seed)
    if not args.run:
        _emit(paths)
        return EXIT_OK
    ns = argparse.Namespace(
        dynamics=paths["dynamics"], spec=paths["spec"], network=paths["network"], scenario=paths["scenario"],
        x_ce=None, region_lower=None, region_upper=None, grid=None, outdir=str(Path(args.outdir) / "repair"),
        steps=50, margin_eps=None, ce_horizon=None, repair_horizon=None, solver_tol=None, samples=None,
        no_global_caps=False,
    )
    return cmd_repair(ns)


# -- parser -----------------------------------------------------------------------


def _add_files(p, network=True):
    p.add_argument("--dynamics", required=True, help="dynamics JSON")
    p.add_argument("--spec", required=True, help="safety spec JSON")
    if network:
        p.add_argument("--network", required=True, help="TLL network JSON")


def _add_repair_knobs(p):
    p.add_argument("--scenario", help="scenario JSON supplying x_ce, search region and repair settings")
    p.add_argument("--x-ce", dest="x_ce", help="counterexample state, e.g. '0,2.999,0.2'")
    p.add_argument("--margin-eps", type=float)
    p.add_argument("--ce-horizon", type=int)
    p.add_argument("--repair-horizon", type=int)
    p.add_argument("--solver-tol", type=float)
    p.add_argument("--samples", type=int, help="grid points per axis for sup estimates")
    p.add_argument("--no-global-caps", action="store_true", help="skip the budget caps on rows changed by Global")


def _add_region(p):
    p.add_argument("--region-lower", help="lower corner of the counterexample search box")
    p.add_argument("--region-upper", help="upper corner of the counterexample search box")
    p.add_argument("--grid", type=int, help="grid points per axis for the counterexample search")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tllrepair", description="Repair unsafe TLL neural-network controllers.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-loop rollout to CSV")
    p.add_argument("--dynamics", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--spec", help="safety spec, to report the first unsafe step")
    p.add_argument("--x0", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("find-ce", help="grid search for a counterexample")
    _add_files(p)
    _add_region(p)
    p.add_argument("--scenario")
    p.add_argument("--ce-horizon", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_find_ce)

    p = sub.add_parser("bounds", help="beta/L bound functions and the safety budget")
    _add_files(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("repair", help="repair the network at a counterexample")
    _add_files(p)
    _add_repair_knobs(p)
    _add_region(p)
    p.add_argument("--steps", type=int, default=50, help="length of the before/after rollouts")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("validate", help="check a repaired network against the repair requirements")
    _add_files(p, network=False)
    p.add_argument("--original", required=True)
    p.add_argument("--repaired", help="repaired network (default: the original)")
    _add_repair_knobs(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("demo-car", help="write the synthetic car scenario")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--run", action="store_true", help="also run the repair on it")
    p.set_defaults(func=cmd_demo_car)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
