"""Command-line interface.

Exit codes: 0 success, 2 invalid input or options, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .applications import build_interaction, heritability_report
from .data import (
    Dataset,
    GroupSpec,
    WeightMatrix,
    load_dataset,
    load_group_file,
    load_groups_file,
    load_matrix,
    validate_group,
)
from .errors import SolverError, ValidationError
from .hiertest import ClusterTree, EngineConfig, build_tree, run_hierarchy
from .inference import CorrectionSample, confidence_interval, result_record, test_group
from .lasso import fit_initial
from .projection import DEFAULT_C_LAMBDA

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3
SEED_ENV = "QUADGROUP_SEED"

log = logging.getLogger("quadgroup")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _unit_interval(name):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not 0 < v < 1:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1), got {v}")
        return v
    return parse


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _positive(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file with covariates and a response column")
    p.add_argument("--no-header", action="store_true", help="file has no header row")
    p.add_argument("--response", help="response column name or 1-based number (default: column 'y')")
    p.add_argument("--drop-incomplete", action="store_true", help="drop rows with blank or NA cells")


def _fit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda0", type=_positive, help="scaled-lasso penalty level (default sqrt(2 log p / n) / 2)")
    p.add_argument("--split", action="store_true", help="fit on one random half, correct on the other")
    p.add_argument("--seed", type=int, default=1, help=f"random seed (overridden by ${SEED_ENV})")
    p.add_argument("--c-lambda", type=_positive, default=DEFAULT_C_LAMBDA, help="projection tuning constant")
    p.add_argument("--tau", type=_nonneg, default=1.0, help="variance enlargement constant")


def _group_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--group", help="1-based indices, e.g. '1-5,9'")
    g.add_argument("--group-file", help="file with one 1-based index per line")


def _mode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("sigma", "general", "identity"), default="sigma")
    p.add_argument("--weight-matrix", help="headerless CSV with the |G| x |G| weight matrix (mode general)")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (results and manifest)")
    p.add_argument("--debug", action="store_true", help="verbose logging and tracebacks")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quadgroup", description="Group inference for high-dimensional linear models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (
        ("estimate", "estimate, test and interval for one group"),
        ("test", "one-sided group significance test"),
        ("ci", "confidence interval for the group functional"),
    ):
        p = sub.add_parser(name, help=helptext)
        _data_args(p)
        _group_args(p)
        _fit_args(p)
        _mode_args(p)
        p.add_argument("--alpha", type=_unit_interval("alpha"), default=0.05)
        p.add_argument("--level", type=_unit_interval("level"), default=0.95)
        p.add_argument("--truncate", action="store_true", help="clip the interval at zero")
        _common(p)

    p = sub.add_parser("hiertest", help="hierarchical testing over a clustering tree")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--engine-mode", choices=("sigma", "identity"), default="sigma")
    p.add_argument("--alpha", type=_unit_interval("alpha"), default=0.05)
    p.add_argument("--linkage", choices=("complete", "average"), default="complete")
    p.add_argument("--tree", help="JSON tree to use instead of clustering")
    _common(p)

    p = sub.add_parser("interact", help="test for treatment-covariate interactions")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--treatment-col", required=True, help="name of the treatment column")
    p.add_argument("--mode", choices=("sigma", "identity"), default="sigma")
    p.add_argument("--alpha", type=_unit_interval("alpha"), default=0.05)
    p.add_argument("--level", type=_unit_interval("level"), default=0.95)
    _common(p)

    p = sub.add_parser("herit", help="explained-variance intervals for several groups")
    _data_args(p)
    _fit_args(p)
    p.add_argument("--groups", required=True, help="file with one comma-separated group per line")
    p.add_argument("--mode", choices=("sigma", "identity"), default="sigma")
    p.add_argument("--level", type=_unit_interval("level"), default=0.95)
    p.add_argument("--normalize", action="store_true", help="also report proportions of var(y)")
    _common(p)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    p.add_argument("--scenario", required=True, help="dense, highcorr, hier1 or hier2")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=1, help=f"random seed (overridden by ${SEED_ENV})")
    p.add_argument("--hier-beta", type=float, default=1.0, help="coefficient on active covariates (hier1, hier2)")
    p.add_argument("--c-lambda", type=_positive, default=DEFAULT_C_LAMBDA)
    p.add_argument("--alpha", type=_unit_interval("alpha"), default=0.05)
    p.add_argument("--level", type=_unit_interval("level"), default=0.95)
    p.add_argument("--split", action="store_true")
    p.add_argument("--linkage", choices=("complete", "average"), default="complete")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--debug", action="store_true")
    return parser


# ---------------------------------------------------------------------------


def _resolve_seed(args) -> None:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            args.seed = int(env)
        except ValueError:
            raise ValidationError(f"${SEED_ENV} must be an integer, got {env!r}") from None


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "debug"}


def _manifest(args, argv) -> dict:
    return {"version": __version__, "argv": list(argv), "config": _config(args)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _emit(args, argv, payload: dict, name: str = "result.json") -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / name, payload)
        _write_json(out / "manifest.json", _manifest(args, argv))
    print(json.dumps(payload, indent=1, sort_keys=True, default=_json_default))


def _load(args) -> Dataset:
    return load_dataset(args.data, header=not args.no_header, response=args.response,
                        drop_incomplete=args.drop_incomplete)


def _fit(args, d: Dataset):
    return fit_initial(d, split=args.split, seed=args.seed, lambda0=args.lambda0)


def _group(args, p: int) -> GroupSpec:
    if args.group_file:
        return load_group_file(args.group_file, p)
    return validate_group(GroupSpec.parse(args.group), p)


def _weight(args, g: GroupSpec):
    if args.mode != "general":
        if args.weight_matrix:
            raise ValidationError("--weight-matrix requires --mode general")
        return None
    if not args.weight_matrix:
        raise ValidationError("--mode general requires --weight-matrix")
    return WeightMatrix(load_matrix(args.weight_matrix))


def cmd_single(args, argv) -> int:
    d = _load(args)
    g = _group(args, d.p)
    a = _weight(args, g)
    fit = _fit(args, d)
    est = CorrectionSample(d, fit).estimate(g, args.mode, args.tau, args.c_lambda, a)
    test = test_group(est, args.alpha)
    ci = confidence_interval(est, args.level, args.truncate)
    rec = result_record(est, test, ci, d.p, d.n)
    if args.command == "test":
        keep = ("mode", "group", "q_hat", "v_hat", "statistic", "p_value", "reject", "alpha", "tau", "n", "p")
        rec = {k: rec[k] for k in keep}
    elif args.command == "ci":
        keep = ("mode", "group", "q_hat", "v_hat", "ci", "level", "ci_truncated", "tau", "n", "p")
        rec = {k: rec[k] for k in keep}
    rec["config"] = _config(args)
    _emit(args, argv, rec)
    return EXIT_OK


def cmd_hiertest(args, argv) -> int:
    d = _load(args)
    tree = ClusterTree.load(args.tree) if args.tree else build_tree(d, args.linkage)
    fit = _fit(args, d)
    res = run_hierarchy(d, tree, args.alpha, EngineConfig(args.engine_mode, args.tau, args.c_lambda), fit=fit)
    payload = res.to_json()
    payload["config"] = _config(args)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        res.write_csv(out / "findings.csv")
        tree.save(out / "tree.json")
    _emit(args, argv, payload, "findings.json")
    return EXIT_OK


def cmd_interact(args, argv) -> int:
    d = _load(args)
    if d.columns is None or args.treatment_col not in d.columns:
        raise ValidationError(f"treatment column {args.treatment_col!r} not found among covariates")
    j = d.columns.index(args.treatment_col)
    keep = [k for k in range(d.p) if k != j]
    if not keep:
        raise ValidationError("no covariates left besides the treatment")
    base = Dataset(d.x[:, keep], d.y, tuple(d.columns[k] for k in keep))
    w, g = build_interaction(base, d.x[:, j])
    fit = _fit(args, w)
    est = CorrectionSample(w, fit).estimate(g, args.mode, args.tau, args.c_lambda)
    rec = result_record(est, test_group(est, args.alpha), confidence_interval(est, args.level), w.p, w.n)
    rec["treatment_col"] = args.treatment_col
    rec["config"] = _config(args)
    _emit(args, argv, rec)
    return EXIT_OK


def cmd_herit(args, argv) -> int:
    d = _load(args)
    groups = load_groups_file(args.groups, d.p)
    fit = _fit(args, d)
    recs = heritability_report(d, groups, args.level, args.tau, args.mode, args.normalize, fit, args.c_lambda)
    payload = {"records": [r.to_json() for r in recs], "config": _config(args)}
    _emit(args, argv, payload, "heritability.json")
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    from .simharness import Methods, Scenario, run_scenario

    if args.threads < 1:
        raise ValidationError("--threads must be at least 1")
    sc = Scenario(args.scenario, args.n, args.p, args.delta, args.reps, args.seed, args.hier_beta)
    methods = Methods(alpha=args.alpha, level=args.level, c_lambda=args.c_lambda,
                      split=args.split, linkage=args.linkage)
    t0 = time.perf_counter()
    report = run_scenario(sc, methods, threads=args.threads)
    runtime = time.perf_counter() - t0
    out = Path(args.out)
    report.write(out, runtime)
    man = json.loads((out / "manifest.json").read_text())
    # the output location and worker count do not affect the report
    man["config"] = {k: v for k, v in _config(args).items() if k not in ("threads", "out")}
    _write_json(out / "manifest.json", man)
    summary = {
        "scenario": sc.name,
        "truth": report.truth,
        "completed": report.completed,
        "failures": len(report.failures),
        "rows": [
            {"table": t, "method": m, "value": None if math.isnan(v) else v} for t, m, v, _ in report.rows
        ],
    }
    print(json.dumps(summary, indent=1))
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_single,
    "test": cmd_single,
    "ci": cmd_single,
    "hiertest": cmd_hiertest,
    "interact": cmd_interact,
    "herit": cmd_herit,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    debug = "--debug" in argv
    logging.basicConfig(level=logging.DEBUG if debug else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parser.parse_args(argv)
        _resolve_seed(args)
        return COMMANDS[args.command](args, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValidationError as exc:
        if debug:
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        if debug:
            traceback.print_exc()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
