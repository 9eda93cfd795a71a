"""Command-line entry point.

Exit codes:
    0  success
    1  unexpected error
    2  feeder file could not be parsed
    3  feeder failed validation (island, bad slack, zero impedance, ...)
    4  a load or PV profile is missing
    5  bad configuration or command-line value
    6  power flow did not converge
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .feeder import FeederParseError, FeederValidationError, TapRangeError, build_admittance, parse_feeder
from .powerflow import FeederSolver, InjectionSet, PowerFlowError, nominal_injections
from .sim.profiles import MissingProfileError, ProfileError
from .sim.scenario import ConfigError, load_scenario

EXIT_OK, EXIT_ERROR, EXIT_PARSE, EXIT_VALIDATION, EXIT_PROFILE, EXIT_CONFIG, EXIT_POWERFLOW = range(7)

log = logging.getLogger("tapopt")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _scenario(args, **extra):
    extra.setdefault("seed", args.seed)
    if args.outdir is not None:
        extra.setdefault("outdir", args.outdir)
    return load_scenario(args.config, args.set, **extra)


def _outdir(args, s=None) -> Path:
    p = Path(args.outdir or (s.outdir if s is not None else "out"))
    p.mkdir(parents=True, exist_ok=True)
    return p


def _parse_taps(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"tap setting must be id=position, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = int(v)
        except ValueError:
            raise ConfigError(f"tap position must be an integer, got {v!r}") from None
    return out


def _parse_oltc_range(text: str) -> list:
    text = text.strip()
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split("..", 1))
            return list(range(a, b + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad OLTC count list {text!r}") from None


# ------------------------------------------------------------ subcommands


def cmd_validate(args) -> int:
    if args.feeder:
        from .sim.fixtures import bundled_feeder_path
        path = bundled_feeder_path(args.feeder) or Path(args.feeder)
    else:
        path = _scenario(args).feeder_path()
    model = parse_feeder(path)
    print(f"{path}: {model.n_nodes} nodes, {len(model.branches)} branches, {len(model.oltcs)} OLTCs, "
          f"{len(model.loads)} loads, {len(model.pvs)} PV")
    build_admittance(model, model.zero_taps())
    sol = FeederSolver(model).solve(model.zero_taps(), InjectionSet.zeros(model.n_nodes), check=True)
    print(f"no-load power flow converged in {sol.iterations} iterations, "
          f"max |V| {sol.vmag.max():.6f}, min |V| {sol.vmag.min():.6f}")
    print("OK")
    return EXIT_OK


def cmd_powerflow(args) -> int:
    s = _scenario(args)
    model = parse_feeder(s.feeder_path())
    if model.pvs and args.penetration is not None:
        from .feeder import scale_pv_penetration
        model = scale_pv_penetration(model, args.penetration)
    taps = {**model.zero_taps(), **_parse_taps(args.tap)}
    unknown = set(taps) - set(model.oltc_ids)
    if unknown:
        raise ConfigError(f"unknown OLTC id(s): {', '.join(sorted(unknown))}")
    sol = FeederSolver(model).solve(taps, nominal_injections(model, args.load_scale, args.pv_scale), check=True)
    out = _outdir(args, s) / "voltages.csv"
    with open(out, "w") as fh:
        fh.write("node,vmag,angle_deg\n")
        for node, v in zip(model.nodes, sol.v):
            fh.write(f"{node.name},{abs(v):.10f},{np.degrees(np.angle(v)):.8f}\n")
    free = ~model.slack_mask
    print(f"converged in {sol.iterations} iterations; max |V| {sol.vmag[free].max():.5f}, "
          f"min |V| {sol.vmag[free].min():.5f}; wrote {out}")
    return EXIT_OK


def _dump_first_milp(s, prep, path):
    from .otc import HorizonData, build_milp, oltc_terminal_nodes, select_candidate_nodes
    from .sensitivity import build_sensitivity

    model = prep.model
    solver = FeederSolver(model)
    taps = model.zero_taps()
    T = s.horizon_steps if s.controller == "otc-full" else 1
    day_end = prep.day_slices()[0].stop
    points, v = [], None
    for k in range(min(T, day_end)):
        sol = solver.solve(taps, prep.injections(k), v_init=v)
        v = sol.v
        points.append(sol)
    lin = [build_sensitivity(solver, taps, p) for p in points]
    cands = select_candidate_nodes(np.array([p.vmag for p in points]), oltc_terminal_nodes(model), s.candidate_k)
    h = HorizonData.from_sensitivities(model, lin, cands, taps)
    Path(path).write_text(build_milp(h, s.w1, 0.0 if s.controller == "otc-simplified" else s.w2).to_lp_text())


def cmd_run(args) -> int:
    from .sim.qsts import prepare, run_qsts, write_outputs

    extra = {}
    if args.controller:
        extra["controller"] = args.controller
    if args.commit_horizon:
        extra["commit_horizon"] = True
    s = _scenario(args, **extra)
    prep = prepare(s)              # profile and feeder errors surface here, before any step runs
    outdir = _outdir(args, s)
    if args.dump_lp:
        if not s.controller.startswith("otc"):
            raise ConfigError("--dump-lp needs an OTC controller")
        _dump_first_milp(s, prep, outdir / "milp_step0.lp")

    def progress(k, n):
        if args.verbose and (k + 1) % 500 == 0:
            log.info("step %d/%d", k + 1, n)

    res = run_qsts(s, prep=prep, progress=progress)
    write_outputs(res, outdir, timing=args.timing)
    sm = res.summary()
    print(f"{s.controller} {sm['feeder']} pen={s.penetration:g}%: max V {sm['max_v']:.4f}, "
          f"min V {sm['min_v']:.4f}, total TO {sm['total_to']}, violations {sm['violation_steps']}"
          + (f", failed steps {sm['failed_steps']}" if sm["failed_steps"] else ""))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sim.studies import hosting_capacity_sweep, parse_levels

    s = _scenario(args)
    try:
        levels = parse_levels(args.levels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    res = hosting_capacity_sweep(s, levels, controllers, jobs=args.jobs)
    out = _outdir(args, s) / "hosting.csv"
    res.write_csv(out)
    for c in controllers:
        th = res.threshold(c)
        print(f"{c}: first over-voltage at {'none' if th is None else f'{th:g}%'}")
    if "atc" in controllers and "otc-full" in controllers:
        r = res.ratio()
        print(f"hosting ratio otc-full/atc: {'n/a' if r is None else f'{r:.3f}'}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_weights(args) -> int:
    from .sim.studies import weight_sweep, write_weight_table

    s = _scenario(args)
    try:
        values = [float(x) for x in args.w2.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad w2 list {args.w2!r}") from None
    rows = weight_sweep(s, values, jobs=args.jobs)
    out = _outdir(args, s) / "table_w2.csv"
    write_weight_table(rows, out)
    for r in rows:
        print(f"w2={r['w2']:g}: max V {r['max_v']:.4f}, min V {r['min_v']:.4f}, total TO {r['total_to']}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .sim.studies import runtime_benchmark, write_runtime_table

    counts = _parse_oltc_range(args.oltcs)
    rows, fit = runtime_benchmark(counts, n_nodes=args.nodes, horizon=args.horizon, repeats=args.repeats,
                                  seed=args.seed or 0)
    out = _outdir(args) / "runtime.csv"
    write_runtime_table(rows, fit, out)
    for r in rows:
        print(f"P={r.P}: mean {r.mean_s:.3f} s, max {r.max_s:.3f} s over {r.solves} solves ({r.n_nodes} nodes)")
    if fit is not None:
        print("cubic fit (a3, a2, a1, a0): " + ", ".join(f"{c:.4g}" for c in fit))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_lincheck(args) -> int:
    from .sim.studies import linearization_check

    s = _scenario(args)
    stats, model = linearization_check(s, stride=args.stride, taps=_parse_taps(args.tap))
    outdir = _outdir(args, s)
    stats.to_csv(outdir / "errors.csv", [n.name for n in model.nodes])
    counts, edges = stats.histogram(bins=args.bins)
    summary = {**stats.summary(), "histogram": {"counts": counts.tolist(), "edges": edges.tolist()}}
    (outdir / "linearization.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{stats.comparisons} perturbations, max |E| {stats.max_abs:.3e}, mean |E| {stats.mean_abs:.3e}"
          + (f", {stats.skipped} skipped" if stats.skipped else ""))
    return EXIT_OK


# ------------------------------------------------------------ parser


def _global_flags(parser, suppress=False):
    # subcommands repeat the global flags; their defaults are suppressed so
    # a flag given before the subcommand is not reset by the subparser
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="scenario file (key = value lines)")
    parser.add_argument("--set", action="append", default=d([]), metavar="KEY=VALUE",
                        help="override a scenario key; repeatable")
    parser.add_argument("--outdir", default=d(None), help="output directory (default: scenario outdir)")
    parser.add_argument("--jobs", type=int, default=d(1), help="parallel runs for sweeps")
    parser.add_argument("--seed", type=int, default=d(None), help="profile seed")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = argparse.ArgumentParser(prog="tapopt", description="OLTC control studies on distribution feeders")
    _global_flags(p)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", parents=[common], help="parse a feeder and run a no-load power flow")
    sp.add_argument("feeder", nargs="?", help="feeder file or bundled name (default: scenario feeder)")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("powerflow", parents=[common], help="single power flow at fixed scales")
    sp.add_argument("--load-scale", type=float, default=1.0)
    sp.add_argument("--pv-scale", type=float, default=0.0)
    sp.add_argument("--penetration", type=float, default=None, help="rescale PV to this %% of nominal load")
    sp.add_argument("--tap", action="append", default=[], metavar="ID=POS")
    sp.set_defaults(func=cmd_powerflow)

    sp = sub.add_parser("run", parents=[common], help="time-series simulation of one scenario")
    sp.add_argument("--controller", choices=["atc", "vlc", "otc-full", "otc-simplified"])
    sp.add_argument("--commit-horizon", action="store_true", help="apply whole OTC schedules open-loop")
    sp.add_argument("--dump-lp", action="store_true", help="write the first step's MILP as milp_step0.lp")
    sp.add_argument("--timing", action="store_true", help="also write wall-clock timing.json")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", parents=[common], help="PV hosting capacity sweep")
    sp.add_argument("--levels", default="0:200:25", help="start:stop:step or comma list (%%)")
    sp.add_argument("--controllers", default="atc,otc-full")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("weights", parents=[common], help="OTC tap-operation weight sweep")
    sp.add_argument("--w2", default="0,0.005,0.01,0.02,0.04")
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("bench", parents=[common], help="MILP solve time against OLTC count")
    sp.add_argument("--oltcs", default="2..8", help="a..b or comma list")
    sp.add_argument("--nodes", type=int, default=1000)
    sp.add_argument("--horizon", type=int, default=10)
    sp.add_argument("--repeats", type=int, default=20)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("lincheck", parents=[common], help="linear model vs power flow for single tap steps")
    sp.add_argument("--stride", type=int, default=1, help="check every n-th step")
    sp.add_argument("--tap", action="append", default=[], metavar="ID=POS", help="held tap position")
    sp.add_argument("--bins", type=int, default=40)
    sp.set_defaults(func=cmd_lincheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse usage errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FeederParseError as exc:
        msg, code = str(exc), EXIT_PARSE
    except FeederValidationError as exc:
        msg, code = str(exc), EXIT_VALIDATION
    except MissingProfileError as exc:
        msg, code = str(exc), EXIT_PROFILE
    except (ConfigError, ProfileError, TapRangeError) as exc:
        msg, code = str(exc), EXIT_CONFIG
    except PowerFlowError as exc:
        msg, code = str(exc), EXIT_POWERFLOW
    except CliError as exc:
        msg, code = str(exc), exc.code
    except Exception as exc:           # noqa: BLE001
        if getattr(args, "verbose", False):
            raise
        msg, code = f"{type(exc).__name__}: {exc}", EXIT_ERROR
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
