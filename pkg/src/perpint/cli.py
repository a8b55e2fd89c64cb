"""Command-line front end.

Exit codes: 0 success (decided verdict), 2 parse or configuration error,
3 inconclusive verdict, 4 simulation error, 5 analytic/empirical
disagreement in an experiment.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .classifier import (
    CriterionInapplicable,
    NovikovConditionError,
    classify_fixation_before_extinction,
    classify_perpetual_two_sided,
    classify_perpetual_zero,
    moment_bound,
)
from .coefficients import DomainError, ParseError, parse_expr
from .experiments import (
    CRITERION_PRESETS,
    ExperimentConfig,
    FIGURE2_SIM,
    run_criterion_validation,
    run_figure2_sweep,
    run_green_calibration,
    run_martingale_check,
    run_moment_check,
    run_selection_case,
    run_successive_extinctions,
)
from .io import RunManifest, format_value, manifest_path_for, trajectory_rows, write_csv
from .quadrature import QuadratureError
from .rng import DEFAULT_SEED
from .scale_speed import DiffusionSpec, build_scale_speed, classify_boundaries
from .simulate import SimConfig, SimulationError, simulate_1d, simulate_coupled, simulate_multiallele

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3
EXIT_SIMULATION = 4
EXIT_DISAGREEMENT = 5


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# argument types


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _domain(text: str) -> tuple:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("domain must be 'a,b' (b may be inf)")
    return vals


def _boundary(text: str):
    t = str(text).strip().lower()
    if t in ("left", "right"):
        return t
    return float(t)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="master seed (default %(default)#x)")
    g.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker threads")
    g.add_argument("--out", default=None, help="output CSV path")
    g.add_argument("--config", default=None, help="INI file with option defaults")


def _model(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--sigma", required=required, help="diffusion coefficient expression in y")
    p.add_argument("--drift", default="0", help="drift expression in y (default 0)")
    p.add_argument("--domain", type=_domain, default=(0.0, math.inf), help="a,b (default 0,inf)")


def _sim_options(p: argparse.ArgumentParser, dt: float, eps: float, budget: float) -> None:
    p.add_argument("--dt", type=float, default=dt)
    p.add_argument("--absorption-eps", type=float, default=eps)
    p.add_argument("--t-budget", type=float, default=budget)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="perpint", description="Perpetual integrals of one-dimensional diffusions.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("classify", help="almost-sure finiteness of a perpetual integral")
    _model(p)
    p.add_argument("--f", required=True, help="non-negative integrand expression")
    p.add_argument("--boundary", type=_boundary, default="left",
                   help="absorbing endpoint: left, right or its value (default left)")
    p.add_argument("--criterion", choices=("perpetual", "fixation"), default="perpetual",
                   help="'fixation': --sigma is the population noise and --f the time-change function")
    p.add_argument("--method", choices=("auto", "numeric"), default="auto")
    _common(p)

    p = sub.add_parser("boundary", help="absorption in finite time at the endpoints")
    _model(p)
    _common(p)

    p = sub.add_parser("moment-bound", help="upper bounds n!(int s f m)^n on moments")
    _model(p)
    p.add_argument("--f", required=True)
    p.add_argument("--n", type=int, default=1, help="highest moment order")
    _common(p)

    p = sub.add_parser("simulate", help="simulate and dump one trajectory")
    simsub = p.add_subparsers(dest="kind", metavar="KIND", parser_class=_Parser)
    simsub.required = True
    q = simsub.add_parser("1d", help="one-dimensional diffusion")
    _model(q)
    q.add_argument("--x0", type=float, required=True)
    q.add_argument("--f", action="append", default=[], help="running integrand (repeatable)")
    q.add_argument("--scheme", choices=("euler-full-truncation", "euler-reflected"),
                   default="euler-full-truncation")
    q.add_argument("--reflect-at", type=float, default=math.inf)
    q.add_argument("--bridge", type=_bool, default=False)
    q.add_argument("--trajectory", type=int, default=0, help="trajectory index within the seed")
    _sim_options(q, 1e-3, 1e-6, 1e3)
    _common(q)
    q = simsub.add_parser("coupled", help="population size with allele frequency")
    q.add_argument("--eps", type=float, default=0.4, help="noise exponent: sigma_N = y^((1-eps)/2)")
    q.add_argument("--r", type=float, default=-1.0)
    q.add_argument("--c", type=float, default=0.1)
    q.add_argument("--sigma", default=None, help="override sigma_N")
    q.add_argument("--drift", default=None, help="override drift_N")
    q.add_argument("--f", default="y", help="time-change function (default y)")
    q.add_argument("--selection", type=float, default=0.0, help="selective advantage r2 - r1")
    q.add_argument("--n0", type=float, default=1.0)
    q.add_argument("--x0", type=float, default=0.5)
    q.add_argument("--scheme", choices=("time-change", "euler"), default="time-change")
    q.add_argument("--trajectory", type=int, default=0)
    _sim_options(q, FIGURE2_SIM.dt, FIGURE2_SIM.absorption_eps, FIGURE2_SIM.t_budget)
    _common(q)
    q = simsub.add_parser("multiallele", help="L-allele Wright-Fisher")
    q.add_argument("--L", type=int, default=3)
    q.add_argument("--x0", type=_floats, default=None, help="initial proportions (default uniform)")
    q.add_argument("--stride", type=int, default=1, help="record every n-th step")
    q.add_argument("--trajectory", type=int, default=0)
    _sim_options(q, 1e-3, 1e-6, 1e3)
    _common(q)

    p = sub.add_parser("experiment", help="run a simulation campaign")
    exsub = p.add_subparsers(dest="name", metavar="NAME", parser_class=_Parser)
    exsub.required = True
    q = exsub.add_parser("figure2", help="extinction-before-fixation counts against eps")
    q.add_argument("--eps", type=_floats, default=(0.1, 0.25, 0.4))
    q.add_argument("--r", type=float, default=-1.0)
    q.add_argument("--c", type=float, default=0.1)
    q.add_argument("--n0", type=float, default=1.0)
    q.add_argument("--x0", type=float, default=0.5)
    q.add_argument("--scheme", choices=("time-change", "euler"), default="time-change")
    q.add_argument("--n", type=int, default=2000, help="trajectories per cell")
    _sim_options(q, FIGURE2_SIM.dt, FIGURE2_SIM.absorption_eps, FIGURE2_SIM.t_budget)
    _common(q)
    q = exsub.add_parser("criterion", help="analytic verdicts against budget ladders")
    q.add_argument("--preset", choices=CRITERION_PRESETS, default="example2.1")
    q.add_argument("--beta", type=_floats, default=(0.1, 0.25, 0.4), help="beta/sigma^2 grid")
    q.add_argument("--alpha", type=_floats, default=(0.5, 0.9, 1.0, 1.1, 2.0))
    q.add_argument("--depths", type=_floats, default=(64, 128, 256), help="budgets in octaves")
    q.add_argument("--n", type=int, default=1000)
    _common(q)
    q = exsub.add_parser("selection", help="two competing types with selection")
    q.add_argument("--r1", type=float, default=-1.0)
    q.add_argument("--r2", type=float, default=-0.8)
    q.add_argument("--c", type=float, default=0.1)
    q.add_argument("--n0", type=float, default=1.0)
    q.add_argument("--x0", type=float, default=0.5)
    q.add_argument("--n", type=int, default=2000)
    _sim_options(q, FIGURE2_SIM.dt, FIGURE2_SIM.absorption_eps, FIGURE2_SIM.t_budget)
    _common(q)
    q = exsub.add_parser("successive", help="ordered allele extinctions")
    q.add_argument("--L", type=int, default=3)
    q.add_argument("--n", type=int, default=2000)
    _sim_options(q, 1e-3, 1e-6, 1e3)
    _common(q)
    for name, helptext, n, dt in (
        ("moments", "moments of the bump integral against their bounds", 100_000, 1e-4),
        ("green", "Monte Carlo against the Green formula", 20_000, 1e-4),
        ("martingale", "neutral fixation probability against x0", 10_000, 1e-4),
    ):
        q = exsub.add_parser(name, help=helptext)
        q.add_argument("--n", type=int, default=n)
        _sim_options(q, dt, 1e-6, 1e4)
        _common(q)
    return parser


# --------------------------------------------------------------------------
# configuration files


def _leaf_parser(parser: argparse.ArgumentParser, argv: Sequence[str]):
    """Follow the sub-command words in ``argv`` down to the leaf parser."""
    node = parser
    names = []
    for word in argv:
        if word.startswith("-"):
            continue
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions or word not in actions[0].choices:
            break
        node = actions[0].choices[word]
        names.append(word)
    return node, names


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Use ``--config`` INI values as defaults of the selected sub-command.

    Sections ``[common]``, ``[<command>]`` and ``[<command>.<kind>]`` are
    read in that order; keys are long option names with either dashes or
    underscores. Command-line flags override the file.
    """
    path = None
    for k, word in enumerate(argv):
        if word == "--config" and k + 1 < len(argv):
            path = argv[k + 1]
        elif word.startswith("--config="):
            path = word.split("=", 1)[1]
    if path is None:
        return
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    leaf, names = _leaf_parser(parser, argv)
    sections = ["common"] + [".".join(names[: k + 1]) for k in range(len(names))]
    dests = {a.dest: a for a in leaf._actions}
    defaults = {}
    for section in sections:
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in dests or dest in ("config", "help"):
                raise ConfigError(f"unknown option {key!r} in section [{section}]")
            value = value.strip().strip('"').strip("'")
            action = dests[dest]
            try:
                if isinstance(action, argparse._AppendAction):
                    converted = [v.strip() for v in value.split(";") if v.strip()]
                elif action.type is not None:
                    converted = action.type(value)
                else:
                    converted = value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {exc}") from exc
            if action.choices is not None and converted not in action.choices:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {value!r}")
            defaults[dest] = converted
    leaf.set_defaults(**defaults)


# --------------------------------------------------------------------------
# commands


def _spec(args) -> DiffusionSpec:
    return DiffusionSpec.from_strings(args.sigma, args.drift, tuple(args.domain))


def _resolved(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items()}


class _Run:
    """Manifest bookkeeping around a command that writes files."""

    def __init__(self, args, subcommand: str):
        self.args = args
        self.out = Path(args.out) if args.out else None
        self.started = time.perf_counter()
        self.manifest = RunManifest(subcommand, _resolved(args), int(args.seed), __version__)
        if self.out is not None:
            self.manifest.outputs.append(str(self.out))
            self.manifest.write(manifest_path_for(self.out))

    def finish(self, warnings=(), extra_outputs=()) -> None:
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        if self.out is None:
            return
        self.manifest.warnings.extend(warnings)
        self.manifest.outputs.extend(str(p) for p in extra_outputs if str(p) != str(self.out))
        self.manifest.status = "complete"
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self.started, 3)
        self.manifest.write(manifest_path_for(self.out))


def _emit_table(run: _Run, columns, rows) -> None:
    if run.out is not None:
        write_csv(run.out, columns, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(v) for v in r])


def cmd_classify(args) -> int:
    run = _Run(args, "classify")
    f = parse_expr(args.f)
    if args.criterion == "fixation":
        drift = parse_expr(args.drift) if args.drift.strip() != "0" else None
        verdict = classify_fixation_before_extinction(parse_expr(args.sigma), f, drift=drift,
                                                      method=args.method)
    else:
        spec = _spec(args)
        a, b = spec.domain
        side = args.boundary
        if not isinstance(side, str):
            if side == a:
                side = "left"
            elif side == b:
                side = "right"
            else:
                raise ConfigError(f"boundary {args.boundary!r} is not an endpoint of {spec.domain!r}")
        if spec.bounded:
            verdict = classify_perpetual_two_sided(spec, f, side, method=args.method)
        else:
            if side != "left":
                raise ConfigError("on a half-line only the left endpoint can be absorbing")
            verdict = classify_perpetual_zero(spec, f, method=args.method)
    print(verdict.summary())
    if run.out is not None:
        write_csv(run.out, ("outcome", "integral", "value", "method"),
                  [(verdict.outcome.value, verdict.integral, verdict.value, verdict.method)])
    run.finish()
    return EXIT_OK if verdict.decided else EXIT_INCONCLUSIVE


def cmd_boundary(args) -> int:
    run = _Run(args, "boundary")
    spec = _spec(args)
    report = classify_boundaries(build_scale_speed(spec), spec)
    rows = []
    for name, ep in (("left", report.left), ("right", report.right)):
        print(f"{name} endpoint {ep.boundary!r}: s={ep.s_at_boundary!r} "
              f"int|s - s(E)| m={ep.integral_s_m!r} accessible={ep.accessible} ({ep.method})")
        rows.append((name, ep.boundary, ep.s_at_boundary, ep.integral_s_m, ep.accessible, ep.method))
    absorbed = report.absorbed_in_finite_time
    print(f"absorbed in finite time: {'undetermined' if absorbed is None else absorbed}")
    if run.out is not None:
        write_csv(run.out, ("endpoint", "value", "scale", "integral_s_m", "accessible", "method"), rows)
    run.finish()
    return EXIT_OK if absorbed is not None else EXIT_INCONCLUSIVE


def cmd_moment_bound(args) -> int:
    run = _Run(args, "moment-bound")
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    spec = _spec(args)
    f = parse_expr(args.f)
    mb = moment_bound(spec, f, 1)
    rows = []
    for _ in range(args.n):
        print(f"E[(int f)^{mb.order}] <= {mb.bound!r}")
        rows.append((mb.order, mb.bound, mb.integral, mb.method))
        mb = mb.next_order()
    if run.out is not None:
        write_csv(run.out, ("order", "bound", "integral_s_f_m", "method"), rows)
    run.finish()
    return EXIT_OK if math.isfinite(rows[0][1]) else EXIT_INCONCLUSIVE


def _sim_config(args, **extra) -> SimConfig:
    return SimConfig(dt=args.dt, absorption_eps=args.absorption_eps, t_budget=args.t_budget,
                     seed=args.seed, **extra)


def cmd_simulate(args) -> int:
    run = _Run(args, f"simulate {args.kind}")
    if args.kind == "1d":
        cfg = _sim_config(args, scheme=args.scheme, reflect_at=args.reflect_at, bridge=args.bridge)
        traj = simulate_1d(_spec(args), args.x0, cfg, [parse_expr(f) for f in args.f],
                           trajectory_index=args.trajectory)
    elif args.kind == "coupled":
        cfg = _sim_config(args)
        sigma = args.sigma or f"y^({(1.0 - args.eps) / 2!r})"
        drift = args.drift or f"y*({args.r!r} - {args.c!r}*y)"
        traj = simulate_coupled(sigma, drift, args.f, cfg, args.n0, args.x0,
                                selection=args.selection, scheme=args.scheme,
                                trajectory_index=args.trajectory)
        print(f"outcome: {traj.events['outcome']} at t={float(traj.times[-1])!r}", file=sys.stderr)
    else:
        x0 = args.x0 if args.x0 is not None else (1.0 / args.L,) * args.L
        traj = simulate_multiallele(args.L, x0, _sim_config(args), record_stride=args.stride,
                                    trajectory_index=args.trajectory)
    columns, rows = trajectory_rows(traj)
    _emit_table(run, columns, rows)
    run.finish()
    return EXIT_OK


def cmd_experiment(args) -> int:
    run = _Run(args, f"experiment {args.name}")
    name = args.name
    sim = None
    if hasattr(args, "dt"):
        sim = _sim_config(args)
    common = dict(n_paths=args.n, seed=args.seed, jobs=args.jobs)
    if sim is not None:
        common["sim"] = sim
    if name == "figure2":
        cfg = ExperimentConfig("figure2", grid={"eps": args.eps},
                               params={"r": args.r, "c": args.c, "n0": args.n0, "x0": args.x0,
                                       "scheme": args.scheme}, **common)
        stats = run_figure2_sweep(cfg)
        print(f"increasing: {stats.meta['increasing']} (p-values {stats.meta['pvalues']})")
    elif name == "criterion":
        cfg = ExperimentConfig(args.preset, grid={"beta": args.beta, "alpha": args.alpha,
                                                  "depths": args.depths}, **common)
        stats = run_criterion_validation(cfg)
    elif name == "selection":
        cfg = ExperimentConfig("selection", params={"r1": args.r1, "r2": args.r2, "c": args.c,
                                                    "n0": args.n0, "x0": args.x0}, **common)
        stats = run_selection_case(cfg)
    elif name == "successive":
        cfg = ExperimentConfig("successive", **common)
        stats = run_successive_extinctions(args.L, cfg)
    else:
        runner = {"moments": run_moment_check, "green": run_green_calibration,
                  "martingale": run_martingale_check}[name]
        stats = runner(ExperimentConfig(name, **common))
    out = run.out or Path(f"{stats.experiment}.csv")
    if run.out is None:
        run.out = out
        run.manifest.outputs.append(str(out))
        run.manifest.write(manifest_path_for(out))
    written = stats.write(out)
    for r in stats.rows[:50]:
        print(",".join(str(v) for v in r))
    if len(stats.rows) > 50:
        print(f"... {len(stats.rows) - 50} more rows in {out}")
    run.finish(stats.warnings, written)
    if stats.failed:
        print("analytic and empirical results disagree", file=sys.stderr)
        return EXIT_DISAGREEMENT
    return EXIT_OK


COMMANDS = {
    "classify": cmd_classify,
    "boundary": cmd_boundary,
    "moment-bound": cmd_moment_bound,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"perpint: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ParseError, ConfigError, CriterionInapplicable, NovikovConditionError) as exc:
        code = EXIT_INCONCLUSIVE if isinstance(exc, CriterionInapplicable) else EXIT_CONFIG
        print(f"perpint: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except (SimulationError, QuadratureError, DomainError) as exc:
        print(f"perpint: numerical error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        print(f"perpint: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
