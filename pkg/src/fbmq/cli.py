"""Command-line front end: ``fbmq <command> [flags]``.

Exit codes: 0 success, 2 configuration error (the message names the offending flag),
1 runtime failure.  Records go to ``<out>/records.jsonl``; tail studies also append
rows to ``<out>/summary.csv``.  Stdout carries a one-line summary per result.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import analytics, experiments
from .constants import FbmEta, Functional, SumFieldEta, estimate_H_phi, estimate_many
from .errors import HypothesisViolation
from .experiments import ExperimentRecord, ExperimentStore, ScalingRule, summary_rows, write_summary_csv
from .gaussgen import Grid, build_embedding, sample_fbm, RngStream, write_path_csv
from .storage import SimConfig, StorageParams, estimate_tail_probs

COMMANDS = ("gen", "qtail", "pickands", "asympt", "piterbarg", "brownian-check", "report")


class ConfigError(Exception):
    def __init__(self, key: str, msg: str):
        super().__init__(f"--{key}: {msg}")
        self.key = key


def _shared(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("shared flags")
    g.add_argument("--h", type=float, default=0.75, help="Hurst parameter in (0, 1) (dimensionless; default 0.75)")
    g.add_argument("--c", type=float, default=1.0, help="service rate, input units per unit time (default 1)")
    g.add_argument("--u", type=float, nargs="+", default=[2.0], help="buffer level(s), input units (default 2)")
    g.add_argument("--T", type=float, default=0.0, help="window length, time units (default 0)")
    g.add_argument("--S", type=float, nargs="+", default=[1.0], help="window length(s) in scaled time (default 1)")
    g.add_argument("--step", type=float, default=None, help="coarse grid step, time units (default: automatic)")
    g.add_argument("--kappa", type=float, default=5.0, help="horizon multiple of u*tau0 (dimensionless; default 5)")
    g.add_argument("--reps", type=int, default=10_000, help="Monte Carlo replicates (count; default 10000)")
    g.add_argument("--seed", type=int, default=0, help="RNG seed, 64-bit unsigned integer (default 0)")
    g.add_argument("--workers", type=int, default=1, help="worker processes (count; default 1)")
    g.add_argument("--out", type=str, default=".", help="output directory (default: current directory)")
    g.add_argument("--format", choices=("json", "csv"), default="json", help="output format (default json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbmq", description="Storage process with fBm input: simulation and asymptotics.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen", help="dump one fBm path on [0, T]")
    _shared(p)

    p = sub.add_parser("qtail", help="tail probabilities of Q(0), inf Q and sup Q over [0, T]")
    _shared(p)

    p = sub.add_parser("pickands", help="estimate E exp(Phi(sqrt2 eta - var eta)) on [0, S]")
    _shared(p)
    p.add_argument("--phi", choices=("sup", "inf", "infsup", "integral"), default="sup", help="functional Phi")
    p.add_argument("--S2", type=float, default=None, help="second-coordinate window for infsup, scaled time (default S)")
    p.add_argument("--a", type=float, default=1.0, help="coordinate variance coefficient for infsup (default 1)")

    p = sub.add_parser("asympt", help="closed-form constants and the large-u tail of Q(0)")
    _shared(p)
    p.add_argument("--pickands", type=float, default=1.0, help="classical Pickands constant to use (default 1)")

    p = sub.add_parser("piterbarg", help="window ratios with T(u) = theta u^p / log(e + u) (H > 1/2)")
    _shared(p)
    p.add_argument("--rule", choices=("fixed_T", "power_rule"), default="power_rule", help="window rule")
    p.add_argument("--theta", type=float, default=0.05, help="window scale, time units (default 0.05)")
    p.add_argument("--exponent", type=float, default=1 / 3, help="window exponent p (dimensionless; default 1/3)")
    p.add_argument("--pickands", type=float, default=None, help="Pickands constant (default: estimated)")

    p = sub.add_parser("brownian-check", help="H = 1/2 window ratios against exact formulas, one window per --S")
    _shared(p)

    p = sub.add_parser("report", help="summarize the records in <out>/records.jsonl")
    _shared(p)
    p.add_argument("--experiment", type=str, default=None, help="only records of this experiment")
    return parser


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _validate(args: argparse.Namespace) -> None:
    if not 0 < args.h < 1:
        raise ConfigError("h", f"Hurst parameter must lie in (0, 1), got {args.h}")
    if not args.c > 0:
        raise ConfigError("c", f"must be positive, got {args.c}")
    if any(not u > 0 for u in args.u):
        raise ConfigError("u", "levels must be positive")
    if args.T < 0:
        raise ConfigError("T", "must be nonnegative")
    if any(not s > 0 for s in args.S):
        raise ConfigError("S", "windows must be positive")
    if args.step is not None and not args.step > 0:
        raise ConfigError("step", "must be positive")
    if args.kappa < 1:
        raise ConfigError("kappa", "must be >= 1")
    if args.reps < 2:
        raise ConfigError("reps", "need at least 2 replicates")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    if args.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    cmd = args.command
    if cmd == "gen" and not args.T > 0:
        raise ConfigError("T", "gen needs a positive window")
    if cmd == "qtail" and args.step is not None and args.T > 0 and not args.step < args.T:
        raise ConfigError("step", "must be smaller than T")
    if cmd == "piterbarg":
        if not args.theta > 0:
            raise ConfigError("theta", "must be positive")
        try:
            ScalingRule(args.rule, args.theta, args.exponent).check(args.h)
        except HypothesisViolation as exc:
            key = "h" if args.h <= 0.5 else "exponent"
            raise ConfigError(key, str(exc)) from None
        if args.pickands is not None and not args.pickands > 0:
            raise ConfigError("pickands", "must be positive")
    if cmd == "asympt" and not args.pickands > 0:
        raise ConfigError("pickands", "must be positive")
    if cmd == "pickands":
        if args.S2 is not None and not args.S2 > 0:
            raise ConfigError("S2", "must be positive")
        if not args.a > 0:
            raise ConfigError("a", "must be positive")


def _config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _record(name, cfg, results, t0) -> ExperimentRecord:
    meta = {"wall_time_s": time.perf_counter() - t0, "timestamp": datetime.now(timezone.utc).isoformat()}
    return ExperimentRecord(name, {"config": cfg}, cfg["seed"], results, meta=meta)


def _persist(rec: ExperimentRecord, out: Path, csv_rows: bool = False) -> None:
    ExperimentStore(out / "records.jsonl").append(rec)
    if csv_rows:
        write_summary_csv(summary_rows(rec), out / "summary.csv")


def _cmd_gen(args, cfg, out):
    step = args.step if args.step is not None else args.T / 1024
    count = max(1, int(round(args.T / step)))
    path = sample_fbm(build_embedding(count, args.h, step), RngStream(args.seed, 0))
    if args.format == "csv":
        dest = out / "path.csv"
        write_path_csv(path, dest)
    else:
        dest = out / "path.json"
        dest.write_text(json.dumps({"config": cfg, "t": path.grid.times.tolist(), "value": path.values.tolist()}))
    print(f"gen: {count + 1} points of B_H (H={args.h}) on [0, {path.grid.span:g}] -> {dest}")


def _cmd_qtail(args, cfg, out):
    t0 = time.perf_counter()
    params = StorageParams(args.h, args.c)
    levels = []
    for u in args.u:
        tp = estimate_tail_probs(params, SimConfig(u, args.T, args.step, args.kappa), args.reps, args.seed, args.workers)
        row = tp.summary()
        levels.append(row)
        print(
            f"qtail u={u:g} T={tp.window:g}: p_inf={tp.inf.p_hat:.4g} p_zero={tp.zero.p_hat:.4g} "
            f"p_sup={tp.sup.p_hat:.4g} ratio_inf={tp.ratio_inf.value:.4g}" + ("" if tp.feasible else " [infeasible: too few hits]")
        )
    _persist(_record("qtail", cfg, {"levels": levels}, t0), out, csv_rows=True)


def _cmd_pickands(args, cfg, out):
    t0 = time.perf_counter()
    step = args.step if args.step is not None else 0.01
    rows = []
    if args.phi == "infsup":
        eta = SumFieldEta(args.h, args.a)
        for s in args.S:
            s2 = args.S2 if args.S2 is not None else s
            phi = Functional("infsup", (Grid.spanning(s, step), Grid.spanning(s2, step)))
            rows.append(estimate_H_phi(eta, phi, args.reps, args.seed, args.workers))
    else:
        phis = [Functional(args.phi, Grid.spanning(s, step)) for s in args.S]
        rows = estimate_many(FbmEta(args.h), phis, args.reps, args.seed, args.workers)
    results = {"estimates": [dict(vars(e)) for e in rows]}
    for e in rows:
        print(
            f"pickands {args.phi} S={e.span}: {e.value:.5g} +- {e.stderr:.2g} "
            f"(refined {e.refined_value:.5g} +- {e.refined_stderr:.2g})"
        )
    _persist(_record("pickands", cfg, results, t0), out)


def _cmd_asympt(args, cfg, out):
    t0 = time.perf_counter()
    k = analytics.constants(args.h, args.c)
    model = analytics.TailModel(args.h, args.c, args.pickands)
    levels = []
    for u in args.u:
        p = analytics.tail_asymptotic(u, model)
        row = {"u": u, "tail_asymptotic": p}
        msg = f"asympt u={u:g}: P(Q(0)>u) ~ {p:.6g}"
        if args.h == 0.5:
            exact = analytics.brownian_qzero_tail(u, args.c)
            row["exact_brownian"] = exact
            row["reduction_ratio"] = p / exact if exact > 0 else math.nan
            msg += f", exp(-2cu) = {exact:.6g}, ratio = {row['reduction_ratio']:.6g}"
        levels.append(row)
        print(msg)
    results = {"constants": dict(vars(k)), "levels": levels}
    _persist(_record("asympt", cfg, results, t0), out)


def _cmd_piterbarg(args, cfg, out):
    rule = ScalingRule(args.rule, args.theta, args.exponent)
    rec = experiments.run_strong_piterbarg(
        args.h, args.c, args.u, rule, args.reps, args.seed,
        pickands=args.pickands, step=args.step, kappa=args.kappa, workers=args.workers,
    )  # fmt: skip
    rec.params["config"] = cfg
    for r in rec.results["levels"]:
        print(
            f"piterbarg u={r['u']:g} T={r['T']:.4g}: ratio_inf={r['ratio_inf']:.4g} +- {r['ratio_inf_se']:.2g} "
            f"ratio_sup={r['ratio_sup']:.4g} p_zero={r['p_zero']['p_hat']:.4g} eq1={r['eq1_prediction']:.4g}"
        )
    _persist(rec, out, csv_rows=True)


def _cmd_brownian(args, cfg, out):
    if len(args.u) != 1:
        raise ConfigError("u", "brownian-check takes a single level")
    step = args.step if args.step is not None else 0.01
    if step >= min(args.S):
        raise ConfigError("step", "must be smaller than every window S")
    rec = experiments.run_brownian_counterexample(
        args.c, args.u[0], args.S, args.reps, args.seed, step=step, kappa=args.kappa, workers=args.workers
    )
    rec.params["config"] = cfg
    for r in rec.results["levels"]:
        print(
            f"brownian-check S={r['S']:g}: ratio_inf={r['ratio_inf']:.4g} +- {r['ratio_inf_se']:.2g} "
            f"(exact {r['exact_ratio_inf']:.4g}), ratio_sup={r['ratio_sup']:.4g} (limit {r['limit_ratio_sup']:.4g})"
        )
    _persist(rec, out, csv_rows=True)


def _cmd_report(args, cfg, out):
    recs = ExperimentStore(out / "records.jsonl").read()
    if args.experiment:
        recs = [r for r in recs if r.experiment == args.experiment]
    if args.format == "csv":
        rows = [row for r in recs for row in summary_rows(r)]
        write_summary_csv(rows, out / "report.csv", append=False)
        print(f"report: {len(rows)} rows from {len(recs)} records -> {out / 'report.csv'}")
    else:
        for r in recs:
            print(f"{r.experiment} seed={r.seed} levels={len(r.results.get('levels', []))}")
        print(f"report: {len(recs)} records")


_DISPATCH = {
    "gen": _cmd_gen,
    "qtail": _cmd_qtail,
    "pickands": _cmd_pickands,
    "asympt": _cmd_asympt,
    "piterbarg": _cmd_piterbarg,
    "brownian-check": _cmd_brownian,
    "report": _cmd_report,
}


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports unknown or malformed flags itself
        return int(exc.code or 0)
    try:
        _validate(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _DISPATCH[args.command](args, _config(args), out)
    except ConfigError as exc:
        print(f"fbmq {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"fbmq {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
