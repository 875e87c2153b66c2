"""Monte Carlo estimation of Pickands-type constants ``E exp(Phi(sqrt(2) eta - var_eta))``.

``eta`` is either an fBm on ``[0, S]`` or a sum of independent fBm's along two
coordinates.  ``Phi`` comes from a small registry of functionals (sup, inf, inf-sup,
normalized integral) that are positively homogeneous and translation equivariant.

Each estimate is computed on the functional's grid and on the grid of half the step
over the same noise, and reported together with the two-grid Richardson value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from ._batch import batch_size_for, run_batches
from .errors import GridMismatch, InsufficientPoints
from .gaussgen import (
    Grid,
    build_embedding,
    check_hurst,
    sample_fbm_paths,
    sample_field_sum_paths,
)

__all__ = [
    "KINDS",
    "Functional",
    "FbmEta",
    "SumFieldEta",
    "ConstantEstimate",
    "FunctionalReport",
    "PickandsLimit",
    "estimate_H_phi",
    "estimate_many",
    "estimate_pickands_limit",
    "fit_slope",
    "validate_functional",
    "check_f1",
    "pointwise_exponential_moments",
]

KINDS = ("sup", "inf", "infsup", "integral")
_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    """A path functional on a grid (or a product of two grids for ``infsup``).

    ``infsup`` is ``inf`` over the first coordinate of ``sup`` over the second;
    ``integral`` is the trapezoidal mean over the window.
    """

    kind: str
    domain: Grid | tuple[Grid, Grid]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}; expected one of {KINDS}")
        two_d = isinstance(self.domain, tuple)
        if two_d != (self.kind == "infsup"):
            raise GridMismatch(f"functional {self.kind!r} needs a {'2-D' if self.kind == 'infsup' else '1-D'} domain")

    @property
    def shape(self) -> tuple[int, ...]:
        if isinstance(self.domain, tuple):
            return tuple(g.count + 1 for g in self.domain)
        return (self.domain.count + 1,)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        """Apply to grid values; leading axes are batch axes."""
        f = np.asarray(f, dtype=float)
        if f.shape[-len(self.shape):] != self.shape:
            raise GridMismatch(f"values of shape {f.shape} do not match domain shape {self.shape}")
        if self.kind == "sup":
            return f.max(axis=-1)
        if self.kind == "inf":
            return f.min(axis=-1)
        if self.kind == "infsup":
            return f.max(axis=-1).min(axis=-1)
        n = self.domain.count
        if n == 0:
            return f[..., 0]
        w = np.full(n + 1, 1.0 / n)
        w[[0, -1]] = 0.5 / n
        return f @ w

    def refined(self) -> "Functional":
        if isinstance(self.domain, tuple):
            return Functional(self.kind, tuple(g.refined() for g in self.domain))
        return Functional(self.kind, self.domain.refined())


def check_f1(phi: Functional, f: np.ndarray) -> tuple[bool, bool]:
    """``(Phi(f) <= sup f, |Phi(f)| <= sup f)`` for one grid function."""
    val = float(phi(f))
    top = float(np.max(f))
    return val <= top, abs(val) <= top


@dataclass(frozen=True)
class FunctionalReport:
    kind: str
    n_checked: int
    f2_max_rel_err: float
    upper_bound_violations: int
    literal_f1_violations: int

    @property
    def f2_ok(self) -> bool:
        return self.f2_max_rel_err <= 1e-12


def validate_functional(phi: Functional, n_funcs: int = 100, seed: int = 0) -> FunctionalReport:
    """Check affine equivariance and the sup bounds on random grid functions.

    F2 errors are measured relative to ``a * max|f| + b``, the natural magnitude of the
    transformed function.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    upper_bad = literal_bad = 0
    for _ in range(n_funcs):
        f = rng.standard_normal(phi.shape) * rng.uniform(0.1, 10.0)
        a, b = rng.uniform(0.0, 10.0, size=2)
        a, b = 10.0 - a, 10.0 - b  # (0, 10]
        lhs = float(phi(a * f + b))
        rhs = a * float(phi(f)) + b
        worst = max(worst, abs(lhs - rhs) / (a * np.abs(f).max() + b))
        upper, literal = check_f1(phi, f)
        upper_bad += not upper
        literal_bad += not literal
    return FunctionalReport(phi.kind, n_funcs, worst, upper_bad, literal_bad)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FbmEta:
    """``eta = B_H`` with variance ``t^{2H}``."""

    h: float

    def __post_init__(self):
        check_hurst(self.h)

    def variance(self, grid: Grid) -> np.ndarray:
        return grid.times ** (2 * self.h)

    def sample(self, grid: Grid, seed: int, lo: int, n: int) -> np.ndarray:
        spec = build_embedding(max(grid.count, 1), self.h, grid.step)
        return sample_fbm_paths(spec, seed, lo, n)[:, : grid.count + 1]


@dataclass(frozen=True)
class SumFieldEta:
    """``eta(t1, t2) = B1(a^{1/2H} t1) + B2(a^{1/2H} t2)`` with independent fBm's."""

    h: float
    a: float = 1.0

    def __post_init__(self):
        check_hurst(self.h)
        if not self.a > 0:
            raise ValueError("a must be positive")

    def variance(self, grids: tuple[Grid, Grid]) -> np.ndarray:
        p = 2 * self.h
        return self.a * (grids[0].times[:, None] ** p + grids[1].times[None, :] ** p)

    def sample(self, grids: tuple[Grid, Grid], seed: int, lo: int, n: int) -> np.ndarray:
        return sample_field_sum_paths(grids, self.h, self.a, seed, lo, n)


def _check_match(eta, phi: Functional):
    two_d = isinstance(phi.domain, tuple)
    if isinstance(eta, SumFieldEta) != two_d:
        raise GridMismatch(f"{type(eta).__name__} cannot be evaluated on domain {phi.domain}")


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantEstimate:
    """Constant on the functional's grid (``value``), at half step, and Richardson-refined."""

    value: float
    stderr: float
    grid_step: float
    n_reps: int
    refined_value: float
    refined_stderr: float
    fine_value: float
    fine_stderr: float
    kind: str = ""
    span: float | tuple[float, float] = 0.0


class _Moments:
    """Exactly rounded running sums of a per-replicate quantity and its square."""

    def __init__(self):
        self.s: list[float] = []
        self.s2: list[float] = []
        self.n = 0

    def add(self, x: np.ndarray):
        self.s.append(math.fsum(x))
        self.s2.append(math.fsum(x * x))
        self.n += len(x)

    def mean_se(self) -> tuple[float, float]:
        m = math.fsum(self.s) / self.n
        if self.n < 2:
            return m, math.nan
        var = max(math.fsum(self.s2) / self.n - m * m, 0.0) * self.n / (self.n - 1)
        return m, math.sqrt(var / self.n)


def _exp_batch(eta, phis, fine_domain, seed, lo, hi):
    """Per-replicate ``exp(Phi(sqrt2 eta - var))`` for each functional on fine and coarse grids.

    Every functional's domain must be a prefix of ``fine_domain``'s coarse version.
    """
    n = hi - lo
    x = eta.sample(fine_domain, seed, lo, n)
    x *= _SQRT2
    x -= eta.variance(fine_domain)
    fine = np.empty((n, len(phis)))
    coarse = np.empty((n, len(phis)))
    for j, phi in enumerate(phis):
        if isinstance(phi.domain, tuple):
            n1, n2 = (g.count for g in phi.domain)
            xf = x[:, : 2 * n1 + 1, : 2 * n2 + 1]
            xc = xf[:, ::2, ::2]
        else:
            xf = x[:, : 2 * phi.domain.count + 1]
            xc = xf[:, ::2]
        fine[:, j] = np.exp(phi.refined()(xf))
        coarse[:, j] = np.exp(phi(xc))
    return fine, coarse


def _run(eta, phis, n_reps, seed, workers, weights=None):
    """Simulate once for all ``phis`` and accumulate moments of coarse/fine/refined values."""
    for phi in phis:
        _check_match(eta, phi)
    if isinstance(phis[0].domain, tuple):
        if len(phis) != 1:
            raise ValueError("2-D estimation takes one functional at a time")
        big = phis[0].domain
        fine_domain = tuple(g.refined() for g in big)
        per_rep = np.prod([g.count + 1 for g in fine_domain])
    else:
        steps = {phi.domain.step for phi in phis}
        if len(steps) != 1:
            raise GridMismatch("functionals estimated together must share a grid step")
        big = max((phi.domain for phi in phis), key=lambda g: g.count)
        fine_domain = big.refined()
        per_rep = 2 * (fine_domain.count + 1)
    h = eta.h
    k = 2.0**h
    fn = partial(_exp_batch, eta, tuple(phis), fine_domain, seed)
    parts = run_batches(fn, n_reps, batch_size_for(int(per_rep) * 4), workers)
    m = len(phis)
    mom = {name: [_Moments() for _ in range(m)] for name in ("coarse", "fine", "refined")}
    slope = _Moments() if weights is not None else None
    for fine, coarse in parts:
        refined = (k * fine - coarse) / (k - 1)
        for j in range(m):
            mom["coarse"][j].add(coarse[:, j])
            mom["fine"][j].add(fine[:, j])
            mom["refined"][j].add(refined[:, j])
        if slope is not None:
            slope.add(refined @ weights)
    ests = []
    for j, phi in enumerate(phis):
        v, se = mom["coarse"][j].mean_se()
        fv, fse = mom["fine"][j].mean_se()
        rv, rse = mom["refined"][j].mean_se()
        dom = phi.domain
        step = dom[0].step if isinstance(dom, tuple) else dom.step
        span = tuple(g.span for g in dom) if isinstance(dom, tuple) else dom.span
        ests.append(ConstantEstimate(v, se, step, n_reps, rv, rse, fv, fse, phi.kind, span))
    return ests, (slope.mean_se() if slope is not None else None)


def estimate_H_phi(eta, phi: Functional, n_reps: int, seed: int, workers: int = 1) -> ConstantEstimate:
    """Estimate ``E exp(Phi(sqrt(2) eta - var_eta))`` on ``phi``'s domain grid.

    The grid value, the half-step value and the Richardson combination (exponent ``H``)
    are all computed from the same ``n_reps`` replicates.
    """
    if n_reps < 2:
        raise ValueError("n_reps must be >= 2")
    return _run(eta, [phi], n_reps, seed, workers)[0][0]


def estimate_many(eta, phis: list[Functional], n_reps: int, seed: int, workers: int = 1) -> list[ConstantEstimate]:
    """Several 1-D functionals on nested windows of one grid, estimated on common noise."""
    return _run(eta, list(phis), n_reps, seed, workers)[0]


def fit_slope(s_values, h_values) -> tuple[float, float]:
    """Least-squares slope and intercept of ``h_values`` against ``s_values``."""
    s = np.asarray(s_values, dtype=float)
    v = np.asarray(h_values, dtype=float)
    if len(s) < 3:
        raise InsufficientPoints("need at least three window lengths")
    slope, intercept = np.polyfit(s, v, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class PickandsLimit:
    h: float
    slope: float
    stderr: float
    intercept: float
    s_list: tuple[float, ...]
    estimates: list[ConstantEstimate] = field(default_factory=list)


def estimate_pickands_limit(
    h: float, s_list, step: float, n_reps: int, seed: int, workers: int = 1
) -> PickandsLimit:
    """Classical Pickands constant as the slope of ``H_sup([0, S])`` in ``S``.

    All windows are prefixes of one simulated path per replicate; the slope uses the
    refined values and its standard error comes from the per-replicate slope
    contributions, so the correlation between windows is accounted for.
    """
    s = np.asarray(sorted(float(x) for x in s_list))
    if len(s) < 3:
        raise InsufficientPoints("need at least three window lengths")
    phis = [Functional("sup", Grid.spanning(x, step)) for x in s]
    spans = np.array([phi.domain.span for phi in phis])
    w = (spans - spans.mean()) / np.sum((spans - spans.mean()) ** 2)
    ests, (slope, se) = _run(FbmEta(h), phis, n_reps, seed, workers, weights=w)
    _, intercept = fit_slope(spans, [e.refined_value for e in ests])
    return PickandsLimit(h, slope, se, intercept, tuple(spans), ests)


def pointwise_exponential_moments(eta: FbmEta, grid: Grid, indices, n_reps: int, seed: int) -> list[tuple[float, float]]:
    """Mean and standard error of ``exp(sqrt2 eta(t) - var(t))`` at selected grid points."""
    idx = list(indices)
    var = eta.variance(grid)[idx]
    mom = [_Moments() for _ in idx]

    def batch(lo, hi):
        x = eta.sample(grid, seed, lo, hi - lo)[:, idx]
        return np.exp(_SQRT2 * x - var)

    for vals in run_batches(batch, n_reps, batch_size_for(2 * (grid.count + 1))):
        for j, m in enumerate(mom):
            m.add(vals[:, j])
    return [m.mean_se() for m in mom]
