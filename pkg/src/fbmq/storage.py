"""Simulation of the stationary storage process fed by fBm.

``Q(t) = sup_{sigma >= t} (B(sigma) - B(t) - c (sigma - t))`` is evaluated on a
uniform grid over ``[0, T]``.  The supremum is truncated at ``T + L`` where
``L = kappa * u * tau0`` covers the most likely overflow lag ``u * tau0``; for every
``t`` in the window the effective horizon is therefore at least ``L``.

Every simulation runs on a fine grid of step ``step/2``; the coarse grid (every other
point) is evaluated on the same noise, which gives a two-grid Richardson pair with
exponent ``H`` for the one-sided grid bias.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache, partial

import numpy as np

from ._batch import batch_size_for, run_batches
from .analytics import constants
from .gaussgen import FgnSpectrum, RngStream, SamplePath, Grid, build_embedding, check_hurst, sample_fbm_paths

__all__ = [
    "StorageParams",
    "SimConfig",
    "WindowStat",
    "TailEstimate",
    "RatioEstimate",
    "TailProbs",
    "ReplicateStats",
    "choose_horizon",
    "default_step",
    "q_from_paths",
    "simulate_q_window",
    "window_stats",
    "window_stats_array",
    "simulate_window_stats",
    "simulate_window_stats_multi",
    "tail_probs_from_stats",
    "estimate_tail_probs",
    "horizon_sensitivity",
]


@dataclass(frozen=True)
class StorageParams:
    h: float
    c: float

    def __post_init__(self):
        check_hurst(self.h)
        if not self.c > 0:
            raise ValueError(f"service rate c must be positive, got {self.c}")

    @property
    def tau0(self) -> float:
        return constants(self.h, self.c).tau0


@dataclass(frozen=True)
class SimConfig:
    """Discretization and truncation controls.

    ``step`` is the coarse grid step (the fine grid uses ``step/2``); ``None`` selects
    :func:`default_step`.
    """

    level: float
    window: float = 0.0
    step: float | None = None
    horizon_kappa: float = 5.0

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError("level u must be positive")
        if self.window < 0:
            raise ValueError("window T must be nonnegative")
        if self.horizon_kappa < 1:
            raise ValueError("horizon_kappa must be >= 1")
        if self.step is not None:
            if not self.step > 0:
                raise ValueError("step must be positive")
            if self.window > 0 and not self.step < self.window:
                raise ValueError("step must be smaller than the window")

    def resolved_step(self, params: StorageParams) -> float:
        """Requested (or default) step, shrunk if needed so that it divides the window."""
        step = self.step if self.step is not None else default_step(params, self.level)
        if self.window > 0:
            step = self.window / math.ceil(self.window / step - 1e-9)
        return step


def choose_horizon(params: StorageParams, u: float, kappa: float = 5.0) -> float:
    """Truncation horizon ``kappa * u * tau0`` for level ``u``."""
    if not u > 0:
        raise ValueError("level u must be positive")
    return kappa * u * params.tau0


def default_step(params: StorageParams, u: float) -> float:
    tau0 = params.tau0
    return min(0.01 * tau0, 0.25 * u ** (-1.0 / params.h) * (u * tau0))


# ---------------------------------------------------------------------------
# Pathwise evaluation
# ---------------------------------------------------------------------------


def q_from_paths(b: np.ndarray, step: float, c: float, n_window: int) -> np.ndarray:
    """Storage process on the first ``n_window + 1`` grid points of each row of ``b``.

    ``b`` holds input paths on ``0, step, 2 step, ...``; the supremum over ``sigma`` runs
    over all later grid points of the row (backward running maximum of ``b - c t``).
    """
    b = np.atleast_2d(b)
    y = b - c * step * np.arange(b.shape[1])
    head = y[:, : n_window + 1]
    m = np.maximum.accumulate(head[:, ::-1], axis=1)[:, ::-1]
    if b.shape[1] > n_window + 1:
        np.maximum(m, y[:, n_window + 1 :].max(axis=1, keepdims=True), out=m)
    return m - head


@dataclass(frozen=True)
class WindowStat:
    """Functionals of ``Q`` over the window; fields are floats or per-replicate arrays."""

    q_zero: float | np.ndarray
    q_inf: float | np.ndarray
    q_sup: float | np.ndarray
    q_integral: float | np.ndarray


def window_stats_array(q: np.ndarray, step: float) -> WindowStat:
    """Grid extrema and trapezoidal integral of each row of ``q``."""
    q = np.atleast_2d(q)
    n = q.shape[1] - 1
    lo = q.min(axis=1)
    hi = q.max(axis=1)
    if n == 0:
        integral = np.zeros(q.shape[0])
    else:
        w = np.full(n + 1, 1.0 / n)
        w[[0, -1]] = 0.5 / n
        # rounding-level clamp keeps the mean inside [min, max]
        integral = (n * step) * np.clip(q @ w, lo, hi)
    return WindowStat(q[:, 0].copy(), lo, hi, integral)


def window_stats(path: SamplePath) -> WindowStat:
    s = window_stats_array(path.values[None, :], path.grid.step)
    return WindowStat(*(float(getattr(s, f)[0]) for f in ("q_zero", "q_inf", "q_sup", "q_integral")))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Layout:
    step: float  # coarse
    n_window: int  # coarse points in window
    n_total: int  # coarse grid count (window + horizon)

    @property
    def window(self) -> float:
        return self.n_window * self.step


def _layout(params: StorageParams, cfg: SimConfig) -> _Layout:
    step = cfg.resolved_step(params)
    n_window = int(round(cfg.window / step))
    horizon = choose_horizon(params, cfg.level, cfg.horizon_kappa)
    return _Layout(step, n_window, n_window + max(1, math.ceil(horizon / step - 1e-9)))


@lru_cache(maxsize=32)
def _spectrum(count: int, h: float, step: float) -> FgnSpectrum:
    return build_embedding(count, h, step)


def simulate_q_window(params: StorageParams, cfg: SimConfig, stream: RngStream) -> SamplePath:
    """One path of ``Q`` on the coarse window grid of ``cfg``."""
    lay = _layout(params, cfg)
    spec = _spectrum(lay.n_total, params.h, lay.step)
    b = sample_fbm_paths(spec, stream.seed, stream.stream_id, 1)
    q = q_from_paths(b, lay.step, params.c, lay.n_window)[0]
    return SamplePath(Grid(lay.step, lay.n_window), q)


@dataclass
class ReplicateStats:
    """Per-replicate window functionals on the fine and coarse grids (common noise)."""

    params: StorageParams
    cfg: SimConfig
    step: float  # coarse step
    window: float
    seed: int
    fine: WindowStat
    coarse: WindowStat

    @property
    def n_reps(self) -> int:
        return len(self.fine.q_zero)

    def dump_jsonl(self, dest) -> None:
        """One JSON object per replicate with the fine-grid functionals."""
        f = self.fine
        with open(dest, "w") as fh:
            for i in range(self.n_reps):
                row = {
                    "stream_id": i,
                    "q_zero": float(f.q_zero[i]),
                    "q_inf": float(f.q_inf[i]),
                    "q_sup": float(f.q_sup[i]),
                    "q_integral": float(f.q_integral[i]),
                }
                fh.write(json.dumps(row) + "\n")


def _stats_batch(params, lay: _Layout, n_keep: int, windows: tuple[int, ...], seed: int, lo: int, hi: int):
    """Window functionals for each coarse window length in ``windows`` (prefixes of ``lay``)."""
    spec = _spectrum(2 * lay.n_total, params.h, lay.step / 2)
    b = sample_fbm_paths(spec, seed, lo, hi - lo)[:, : 2 * n_keep + 1]
    nw = max(windows)
    qf = q_from_paths(b, lay.step / 2, params.c, 2 * nw)
    qc = q_from_paths(b[:, ::2], lay.step, params.c, nw)
    return [
        (window_stats_array(qf[:, : 2 * w + 1], lay.step / 2), window_stats_array(qc[:, : w + 1], lay.step))
        for w in windows
    ]


def _concat(stats: list[WindowStat]) -> WindowStat:
    return WindowStat(*(np.concatenate([getattr(s, k) for s in stats]) for k in ("q_zero", "q_inf", "q_sup", "q_integral")))


def simulate_window_stats_multi(
    params: StorageParams,
    cfg: SimConfig,
    windows,
    n_reps: int,
    seed: int,
    workers: int = 1,
    *,
    horizon_kappa_sim: float | None = None,
) -> dict[float, ReplicateStats]:
    """Window functionals for several window lengths ``<= cfg.window`` on common noise.

    Each window ``[0, T']`` is a prefix of ``[0, cfg.window]``; ``Q`` itself is computed
    once with the horizon of ``cfg``.  ``horizon_kappa_sim`` simulates a longer input path
    than ``cfg`` needs and uses only the required prefix, so runs with different horizons
    can share noise.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    lay = _layout(params, cfg)
    sim_lay = lay
    if horizon_kappa_sim is not None:
        sim_lay = _layout(params, SimConfig(cfg.level, cfg.window, lay.step, horizon_kappa_sim))
        if sim_lay.n_total < lay.n_total:
            raise ValueError("simulation horizon shorter than the configured horizon")
    counts = tuple(int(round(w / lay.step)) for w in windows)
    if any(k > lay.n_window for k in counts):
        raise ValueError("sub-window longer than the configured window")
    spec = _spectrum(2 * sim_lay.n_total, params.h, sim_lay.step / 2)
    fn = partial(_stats_batch, params, sim_lay, lay.n_total, counts, seed)
    parts = run_batches(fn, n_reps, batch_size_for(3 * spec.draws_per_path), workers)
    out = {}
    for j, (w, k) in enumerate(zip(windows, counts)):
        fine = _concat([p[j][0] for p in parts])
        coarse = _concat([p[j][1] for p in parts])
        out[w] = ReplicateStats(params, cfg, lay.step, k * lay.step, seed, fine, coarse)
    return out


def simulate_window_stats(
    params: StorageParams,
    cfg: SimConfig,
    n_reps: int,
    seed: int,
    workers: int = 1,
    *,
    horizon_kappa_sim: float | None = None,
) -> ReplicateStats:
    """Simulate ``n_reps`` replicates (streams ``0..n_reps-1``) and return window functionals."""
    multi = simulate_window_stats_multi(
        params, cfg, [cfg.window], n_reps, seed, workers, horizon_kappa_sim=horizon_kappa_sim
    )
    return multi[cfg.window]


# ---------------------------------------------------------------------------
# Tail estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailEstimate:
    """Proportion estimate; ``upper95`` is the one-sided bound (rule of three when no hits)."""

    p_hat: float
    stderr: float
    n_reps: int
    hits: int
    upper95: float

    @classmethod
    def from_indicators(cls, ind: np.ndarray) -> "TailEstimate":
        n = len(ind)
        hits = int(np.count_nonzero(ind))
        p = hits / n
        se = math.sqrt(p * (1 - p) / n)
        upper = 3.0 / n if hits == 0 else min(1.0, p + 1.6448536269514722 * se)
        return cls(p, se, n, hits, upper)


@dataclass(frozen=True)
class RatioEstimate:
    """Ratio of two means estimated on common replicates; delta-method standard error."""

    value: float
    stderr: float

    @classmethod
    def from_samples(cls, num: np.ndarray, den: np.ndarray) -> "RatioEstimate":
        sd = float(np.sum(den))
        if sd == 0:
            return cls(math.nan, math.nan)
        r = float(np.sum(num)) / sd
        resid = num - r * den
        return cls(r, math.sqrt(float(np.sum(resid * resid))) / sd)


def _richardson(fine, coarse, h):
    k = 2.0**h
    return (k * fine - coarse) / (k - 1)


@dataclass
class TailProbs:
    """Tail probabilities of ``Q(0)``, window infimum, supremum and integral.

    ``inf``/``zero``/``sup``/``integral`` are fine-grid estimates; ``coarse`` holds the
    coarse-grid ones and ``refined`` the Richardson combinations as ``(value, stderr)``.
    Ratios are against ``P(Q(0) > u)`` on the same replicates.
    """

    level: float
    window: float
    step: float
    inf: TailEstimate
    zero: TailEstimate
    sup: TailEstimate
    integral: TailEstimate
    coarse: dict[str, TailEstimate]
    refined: dict[str, tuple[float, float]]
    ratio_inf: RatioEstimate
    ratio_sup: RatioEstimate
    refined_ratio_inf: RatioEstimate
    refined_ratio_sup: RatioEstimate
    config: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        """Enough exceedances of ``Q(0)`` for ratios to be meaningful."""
        return self.zero.hits >= 100 and self.zero.p_hat >= 1e-4

    def summary(self) -> dict:
        out = {
            "u": self.level,
            "T": self.window,
            "step": self.step,
            "feasible": self.feasible,
            "ratio_inf": self.ratio_inf.value,
            "ratio_inf_se": self.ratio_inf.stderr,
            "ratio_sup": self.ratio_sup.value,
            "ratio_sup_se": self.ratio_sup.stderr,
            "refined_ratio_inf": self.refined_ratio_inf.value,
            "refined_ratio_inf_se": self.refined_ratio_inf.stderr,
            "refined_ratio_sup": self.refined_ratio_sup.value,
            "refined_ratio_sup_se": self.refined_ratio_sup.stderr,
        }
        for name in ("inf", "zero", "sup", "integral"):
            out[f"p_{name}"] = asdict(getattr(self, name))
            out[f"p_{name}_coarse"] = asdict(self.coarse[name])
            out[f"p_{name}_refined"] = list(self.refined[name])
        out.update(self.config)
        return out


def _indicators(s: WindowStat, u: float, window: float) -> dict[str, np.ndarray]:
    return {
        "inf": s.q_inf > u,
        "zero": s.q_zero > u,
        "sup": s.q_sup > u,
        "integral": s.q_integral > u * window if window > 0 else s.q_zero > u,
    }


def tail_probs_from_stats(stats: ReplicateStats, level: float | None = None) -> TailProbs:
    """Threshold replicate functionals at ``level`` (default: the configured level)."""
    u = stats.cfg.level if level is None else level
    h = stats.params.h
    fi = _indicators(stats.fine, u, stats.window)
    ci = _indicators(stats.coarse, u, stats.window)
    refined_w = {k: _richardson(fi[k].astype(float), ci[k].astype(float), h) for k in fi}
    n = stats.n_reps
    refined = {k: (float(w.mean()), float(w.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan) for k, w in refined_w.items()}
    config = {
        "h": h,
        "c": stats.params.c,
        "kappa": stats.cfg.horizon_kappa,
        "n_reps": n,
        "seed": stats.seed,
    }
    f = lambda d: {k: TailEstimate.from_indicators(v) for k, v in d.items()}  # noqa: E731
    fine_est = f(fi)
    z = fi["zero"].astype(float)
    zr = refined_w["zero"]
    return TailProbs(
        level=u,
        window=stats.window,
        step=stats.step,
        inf=fine_est["inf"],
        zero=fine_est["zero"],
        sup=fine_est["sup"],
        integral=fine_est["integral"],
        coarse=f(ci),
        refined=refined,
        ratio_inf=RatioEstimate.from_samples(fi["inf"].astype(float), z),
        ratio_sup=RatioEstimate.from_samples(fi["sup"].astype(float), z),
        refined_ratio_inf=RatioEstimate.from_samples(refined_w["inf"], zr),
        refined_ratio_sup=RatioEstimate.from_samples(refined_w["sup"], zr),
        config=config,
    )


def estimate_tail_probs(
    params: StorageParams, cfg: SimConfig, n_reps: int, seed: int, workers: int = 1
) -> TailProbs:
    """``P(inf Q > u)``, ``P(Q(0) > u)``, ``P(sup Q > u)`` on common replicates."""
    return tail_probs_from_stats(simulate_window_stats(params, cfg, n_reps, seed, workers))


def horizon_sensitivity(
    params: StorageParams, cfg: SimConfig, n_reps: int, seed: int, kappas=(5.0, 10.0), workers: int = 1
) -> dict[float, TailProbs]:
    """Tail estimates for several truncation horizons on shared noise."""
    kmax = max(kappas)
    out = {}
    for k in kappas:
        c = SimConfig(cfg.level, cfg.window, cfg.resolved_step(params), k)
        out[k] = tail_probs_from_stats(simulate_window_stats(params, c, n_reps, seed, workers, horizon_kappa_sim=kmax))
    return out
