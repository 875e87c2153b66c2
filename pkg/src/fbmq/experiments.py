"""Monte Carlo studies that confront simulation with the limit theorems, plus persistence.

Every ``run_*`` function returns an :class:`ExperimentRecord`; pass ``store=`` to
append it to an :class:`ExperimentStore` (JSON lines, one record per line).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import partial
from pathlib import Path

import numpy as np

from . import analytics
from ._batch import batch_size_for, run_batches
from .constants import estimate_pickands_limit
from .errors import HypothesisViolation
from .gaussgen import Grid, sample_ou_paths
from .storage import (
    SimConfig,
    StorageParams,
    default_step,
    simulate_window_stats_multi,
    tail_probs_from_stats,
)

__all__ = [
    "SCHEMA_VERSION",
    "SUMMARY_COLUMNS",
    "ScalingRule",
    "ExperimentRecord",
    "ExperimentStore",
    "summary_rows",
    "write_summary_csv",
    "run_pickands_lemma_check",
    "run_strong_piterbarg",
    "run_brownian_counterexample",
    "run_integral_sandwich",
]

SCHEMA_VERSION = 1
SUMMARY_COLUMNS = (
    "u", "T", "p_inf", "se_inf", "p_zero", "se_zero", "p_sup", "se_sup",
    "ratio_inf", "ratio_sup", "eq1_prediction",
)  # fmt: skip


# ---------------------------------------------------------------------------
# Window scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRule:
    """Window length as a function of the level: ``theta`` or ``theta u^p / log(e + u)``.

    The level plays the role of both normalizing functions of the Pickands-type lemma
    (``n(u) = f(u) = u``).
    """

    kind: str
    theta: float
    exponent: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed_T", "power_rule"):
            raise ValueError(f"unknown scaling rule {self.kind!r}")
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def window(self, u: float) -> float:
        if self.kind == "fixed_T":
            return self.theta
        return self.theta * u**self.exponent / math.log(math.e + u)

    def check(self, h: float) -> None:
        """Raise unless the window is ``o(u^{(2H-1)/H})``."""
        if h <= 0.5:
            raise HypothesisViolation(f"H = {h}: the strong Piterbarg property is only claimed for H > 1/2")
        limit = (2 * h - 1) / h
        if self.kind == "power_rule" and self.exponent >= limit:
            raise HypothesisViolation(
                f"window exponent {self.exponent} must be < (2H-1)/H = {limit:.6g} for H = {h}"
            )


# ---------------------------------------------------------------------------
# Records and store
# ---------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None, tuples to lists."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


@dataclass
class ExperimentRecord:
    """One persisted result.  ``meta`` holds run-dependent fields (time stamps)."""

    experiment: str
    params: dict
    seed: int
    results: dict
    schema_version: int = SCHEMA_VERSION
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(
            {
                "schema_version": self.schema_version,
                "experiment": self.experiment,
                "params": self.params,
                "seed": self.seed,
                "results": self.results,
                "meta": self.meta,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def deterministic_json(self) -> str:
        """Serialization without ``meta``; identical for identical inputs and seed."""
        d = self.to_dict()
        d.pop("meta")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ExperimentRecord":
        d = json.loads(line)
        return cls(d["experiment"], d["params"], d["seed"], d["results"], d["schema_version"], d.get("meta", {}))


class ExperimentStore:
    """Append-only JSON-lines file of :class:`ExperimentRecord`."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, record: ExperimentRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(record.to_json() + "\n")

    def read(self) -> list[ExperimentRecord]:
        if not self.path.exists():
            return []
        with open(self.path) as fh:
            return [ExperimentRecord.from_json(line) for line in fh if line.strip()]


def _finish(name, params, seed, results, t0, store):
    rec = ExperimentRecord(
        name,
        params,
        seed,
        results,
        meta={"wall_time_s": time.perf_counter() - t0, "timestamp": datetime.now(timezone.utc).isoformat()},
    )
    if store is not None:
        store.append(rec)
    return rec


def summary_rows(record: ExperimentRecord) -> list[dict]:
    """Rows of the fixed-column summary table for tail-probability records."""
    rows = []
    for r in record.results.get("levels", []):
        if "p_zero" not in r:
            continue
        rows.append(
            {
                "u": r["u"],
                "T": r["T"],
                "p_inf": r["p_inf"]["p_hat"],
                "se_inf": r["p_inf"]["stderr"],
                "p_zero": r["p_zero"]["p_hat"],
                "se_zero": r["p_zero"]["stderr"],
                "p_sup": r["p_sup"]["p_hat"],
                "se_sup": r["p_sup"]["stderr"],
                "ratio_inf": r["ratio_inf"],
                "ratio_sup": r["ratio_sup"],
                "eq1_prediction": r.get("eq1_prediction"),
            }
        )
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_summary_csv(rows: list[dict], dest: str | Path, append: bool = True) -> None:
    dest = Path(dest)
    new = not dest.exists() or not append
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in SUMMARY_COLUMNS])


# ---------------------------------------------------------------------------
# Pickands lemma on a stationary process
# ---------------------------------------------------------------------------


def _ou_batch(grid: Grid, u: float, seed: int, lo: int, hi: int):
    x = sample_ou_paths(grid, seed, lo, hi - lo)
    fine = x.max(axis=1) > u
    coarse = x[:, ::2].max(axis=1) > u
    return (
        int(np.count_nonzero(fine & coarse)),
        int(np.count_nonzero(fine & ~coarse)),
        int(np.count_nonzero(coarse & ~fine)),
        int(np.count_nonzero(x[:, 0] > u)),
    )


def run_pickands_lemma_check(
    u_list, S: float, n_reps: int, seed: int, n_points: int = 128, workers: int = 1, store=None
) -> ExperimentRecord:
    """``P(sup_{[0, S u^-2]} X > u)`` for the stationary process with ``r(t) = exp(-|t|)``.

    Compared with ``H([0, S]) Psi(u)``, the Brownian Pickands-type constant times the
    normal tail.  The window is resolved by ``n_points`` coarse and ``2 n_points`` fine
    grid intervals on common noise; the refined estimate is the Richardson combination
    with exponent 1/2.
    """
    t0 = time.perf_counter()
    us = [float(u) for u in u_list]
    if any(u < 2 for u in us) or us != sorted(us):
        raise ValueError("u_list must be increasing with every u >= 2")
    const = analytics.pickands_brownian(S)
    k = math.sqrt(2.0)
    w_fine_only = k / (k - 1)
    levels = []
    for i, u in enumerate(us):
        grid = Grid(S / u**2 / (2 * n_points), 2 * n_points)
        # each level gets its own seed offset so levels are independent
        fn = partial(_ou_batch, grid, u, seed + i)
        parts = run_batches(fn, n_reps, batch_size_for(3 * (grid.count + 1)), workers)
        n11, n10, n01, n0 = (sum(p[j] for p in parts) for j in range(4))
        p_fine = (n11 + n10) / n_reps
        p_coarse = (n11 + n01) / n_reps
        # refined per-replicate value: 1 if both hit, k/(k-1) if only fine, -1/(k-1) if only coarse
        m1 = (n11 + w_fine_only * n10 - n01 / (k - 1)) / n_reps
        m2 = (n11 + w_fine_only**2 * n10 + n01 / (k - 1) ** 2) / n_reps
        se_ref = math.sqrt(max(m2 - m1 * m1, 0.0) / (n_reps - 1))
        target = const * analytics.mills_psi(u)
        p0 = n0 / n_reps
        levels.append(
            {
                "u": u,
                "target": target,
                "p_fine": p_fine,
                "se_fine": math.sqrt(p_fine * (1 - p_fine) / n_reps),
                "p_coarse": p_coarse,
                "p_refined": m1,
                "se_refined": se_ref,
                "ratio_fine": p_fine / target,
                "ratio_refined": m1 / target,
                "ratio_refined_se": se_ref / target,
                "p_point0": p0,
                "psi_u": analytics.mills_psi(u),
                "se_point0": math.sqrt(p0 * (1 - p0) / n_reps),
            }
        )
    params = {"u_list": us, "S": S, "n_reps": n_reps, "n_points": n_points, "constant": const}
    return _finish("pickands_lemma_check", params, seed, {"levels": levels}, t0, store)


# ---------------------------------------------------------------------------
# Storage-process studies
# ---------------------------------------------------------------------------


def run_strong_piterbarg(
    h: float,
    c: float,
    u_list,
    rule: ScalingRule,
    n_reps: int,
    seed: int,
    *,
    pickands: float | None = None,
    pickands_s_list=(4.0, 8.0, 16.0),
    pickands_step: float = 0.02,
    pickands_reps: int = 20_000,
    step: float | None = None,
    window_points: int = 4,
    kappa: float = 5.0,
    common_noise: bool = True,
    workers: int = 1,
    store=None,
) -> ExperimentRecord:
    """Ratios ``P(inf Q > u)/P(Q(0) > u)`` and ``P(sup Q > u)/P(Q(0) > u)`` with ``T = T(u)``.

    The grid step defaults to the smaller of :func:`~fbmq.storage.default_step` and
    ``T(u)/window_points`` so the window is resolved.  Without ``pickands`` the classical
    constant is estimated first (slope over ``pickands_s_list``) and used for the
    asymptotic prediction of ``P(Q(0) > u)``.

    With ``common_noise`` all levels are read off one set of paths (horizon and step of
    the most demanding level, windows as prefixes), so differences between levels are
    estimated far more precisely; ``ratio_inf_trend`` holds consecutive differences of
    ``ratio_inf`` with their standard errors.
    """
    t0 = time.perf_counter()
    rule.check(h)
    params_sp = StorageParams(h, c)
    pick_info = None
    if pickands is None:
        lim = estimate_pickands_limit(h, pickands_s_list, pickands_step, pickands_reps, seed + 10_007, workers)
        pickands = lim.slope
        pick_info = {"slope": lim.slope, "stderr": lim.stderr, "intercept": lim.intercept, "s_list": list(lim.s_list)}
    model = analytics.TailModel(h, c, pickands)
    us = [float(x) for x in u_list]
    windows = [rule.window(u) for u in us]
    levels = []
    residuals = []
    if common_noise:
        # one simulation serves every level: horizon of the largest u, finest step, nested windows
        st = step if step is not None else min(min(default_step(params_sp, u), T / window_points) for u, T in zip(us, windows))
        cfg = SimConfig(max(us), max(windows), st, kappa)
        multi = simulate_window_stats_multi(params_sp, cfg, windows, n_reps, seed, workers)
        per_level = [multi[T] for T in windows]
    else:
        per_level = []
        for i, (u, T) in enumerate(zip(us, windows)):
            st = step if step is not None else min(default_step(params_sp, u), T / window_points)
            cfg = SimConfig(u, T, st, kappa)
            per_level.append(simulate_window_stats_multi(params_sp, cfg, [T], n_reps, seed + i, workers)[T])
    for u, stats in zip(us, per_level):
        row = tail_probs_from_stats(stats, level=u).summary()
        row["eq1_prediction"] = analytics.tail_asymptotic(u, model)
        levels.append(row)
        hit0 = (stats.fine.q_zero > u).astype(float)
        hit_inf = (stats.fine.q_inf > u).astype(float)
        residuals.append((hit_inf - row["ratio_inf"] * hit0) / max(hit0.sum(), 1.0))
    trend = []
    for k in range(1, len(us)):
        d = residuals[k] - residuals[k - 1]
        se = math.sqrt(float(d @ d)) if common_noise else math.hypot(
            math.sqrt(float(residuals[k] @ residuals[k])), math.sqrt(float(residuals[k - 1] @ residuals[k - 1]))
        )
        trend.append({"u_from": us[k - 1], "u_to": us[k], "diff": levels[k]["ratio_inf"] - levels[k - 1]["ratio_inf"], "se": se})
    params = {
        "h": h,
        "c": c,
        "u_list": [float(x) for x in u_list],
        "rule": {"kind": rule.kind, "theta": rule.theta, "exponent": rule.exponent},
        "n_reps": n_reps,
        "kappa": kappa,
        "step": step,
        "window_points": window_points,
        "common_noise": common_noise,
        "pickands": pickands,
    }
    results = {"levels": levels, "ratio_inf_trend": trend, "pickands_estimate": pick_info}
    return _finish("strong_piterbarg", params, seed, results, t0, store)


def run_brownian_counterexample(
    c: float,
    u: float,
    S_list,
    n_reps: int,
    seed: int,
    *,
    step: float = 0.01,
    kappa: float = 10.0,
    workers: int = 1,
    store=None,
) -> ExperimentRecord:
    """Brownian input: simulated window ratios against the exact infimum law.

    All windows are prefixes of ``[0, max(S_list)]`` on common noise.  The supremum ratio
    is reported against both the printed asymptotic formula and the first-passage limit.
    """
    t0 = time.perf_counter()
    S_sorted = sorted(float(s) for s in S_list)
    params_sp = StorageParams(0.5, c)
    cfg = SimConfig(u, S_sorted[-1], step, kappa)
    multi = simulate_window_stats_multi(params_sp, cfg, S_sorted, n_reps, seed, workers)
    levels = []
    for S in S_sorted:
        row = tail_probs_from_stats(multi[S]).summary()
        row["S"] = S
        row["exact_ratio_inf"] = analytics.brownian_inf_ratio(c * c * S)
        row["printed_ratio_sup"] = analytics.brownian_sup_asympt(u, S, c) / analytics.brownian_qzero_tail(u, c)
        row["limit_ratio_sup"] = analytics.brownian_sup_ratio_limit(S, c)
        row["exact_p_zero"] = analytics.brownian_qzero_tail(u, c)
        levels.append(row)
    params = {"c": c, "u": u, "S_list": S_sorted, "n_reps": n_reps, "step": step, "kappa": kappa}
    return _finish("brownian_counterexample", params, seed, {"levels": levels}, t0, store)


def run_integral_sandwich(
    h: float,
    c: float,
    u: float,
    T: float,
    n_reps: int,
    seed: int,
    *,
    step: float | None = None,
    kappa: float = 5.0,
    workers: int = 1,
    store=None,
) -> ExperimentRecord:
    """Check ``T inf Q <= int_0^T Q <= T sup Q`` on every replicate and the implied tail ordering."""
    if not T > 0:
        raise ValueError("T must be positive")
    t0 = time.perf_counter()
    params_sp = StorageParams(h, c)
    st = step if step is not None else min(default_step(params_sp, u), T / 8)
    cfg = SimConfig(u, T, st, kappa)
    stats = simulate_window_stats_multi(params_sp, cfg, [T], n_reps, seed, workers)[T]
    violations = 0
    for s in (stats.fine, stats.coarse):
        w = stats.window
        violations += int(np.count_nonzero((w * s.q_inf > s.q_integral) | (s.q_integral > w * s.q_sup)))
    tp = tail_probs_from_stats(stats)
    row = tp.summary()
    row["sandwich_violations"] = violations
    row["p_integral_between"] = tp.inf.p_hat <= tp.integral.p_hat <= tp.sup.p_hat
    params = {"h": h, "c": c, "u": u, "T": T, "n_reps": n_reps, "step": st, "kappa": kappa}
    return _finish("integral_sandwich", params, seed, {"levels": [row]}, t0, store)
