"""Exact Gaussian path generation: fGn/fBm, Ornstein-Uhlenbeck, coordinate-sum fields.

All randomness flows through :func:`standard_normals`, which gives every replicate
its own block of the Philox counter space under the key ``seed``.  Replicate ``i`` always receives the
same variates regardless of how replicates are grouped into batches, so results are
reproducible for any batch size or worker count.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import lfilter

from .errors import EmbeddingFailure, NotPositiveDefinite, SizeExceeded

__all__ = [
    "Grid",
    "SamplePath",
    "RngStream",
    "FgnSpectrum",
    "check_hurst",
    "standard_normals",
    "fgn_autocov",
    "build_embedding",
    "sample_fbm",
    "sample_fbm_paths",
    "sample_fbm_cholesky",
    "sample_fbm_cholesky_paths",
    "sample_ou",
    "sample_ou_paths",
    "sample_field_sum",
    "sample_field_sum_paths",
    "write_path_csv",
]

log = logging.getLogger(__name__)

TOL_EIG_REL = 1e-10
CHOLESKY_MAX = 4096


def check_hurst(h: float) -> float:
    """Validate a Hurst index and return it as float."""
    h = float(h)
    if not 0.0 < h < 1.0:
        raise ValueError(f"Hurst index must lie in (0, 1), got {h}")
    return h


# ---------------------------------------------------------------------------
# Grids and paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``0, step, ..., count*step``.

    ``count == 0`` is the degenerate single-point grid ``{0}``.
    """

    step: float
    count: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        if int(self.count) != self.count or self.count < 0:
            raise ValueError(f"grid count must be a nonnegative integer, got {self.count}")
        object.__setattr__(self, "count", int(self.count))

    @classmethod
    def spanning(cls, span: float, step: float) -> "Grid":
        """Grid with the given step covering ``[0, span]`` (span rounded to a multiple of step)."""
        return cls(step, int(round(span / step)))

    @property
    def span(self) -> float:
        return self.step * self.count

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.count + 1)

    def refined(self) -> "Grid":
        return Grid(self.step / 2, 2 * self.count)


@dataclass(frozen=True)
class SamplePath:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if len(self.values) != self.grid.count + 1:
            raise ValueError("values must have grid.count + 1 entries")


@dataclass(frozen=True)
class RngStream:
    """Identifies one independent stream of variates: ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64 or not 0 <= self.stream_id < 2**64:
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")


def standard_normals(seed: int, first_stream: int, n_streams: int, per_stream: int) -> np.ndarray:
    """Standard normal variates for streams ``first_stream .. first_stream+n_streams-1``.

    Returns an array of shape ``(n_streams, per_stream)``.  Philox is keyed by ``seed`` and
    stream ``i`` starts at counter ``i * 2^192``, so row ``i`` depends only on ``(seed, i)``
    and a longer request extends a shorter one.
    """
    out = np.empty((n_streams, per_stream))
    bg = np.random.Philox(key=int(seed))
    gen = np.random.Generator(bg)
    state = bg.state
    for j in range(n_streams):
        state["state"]["counter"] = np.array([0, 0, 0, first_stream + j], dtype=np.uint64)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        bg.state = state
        gen.standard_normal(per_stream, out=out[j])
    return out


# ---------------------------------------------------------------------------
# Fractional Gaussian noise via circulant embedding
# ---------------------------------------------------------------------------


def fgn_autocov(k, h: float):
    """Autocovariance of unit-step fGn at lag ``k``.

    ``0.5 * (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H})``; accepts scalars or arrays.
    """
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * h
    out = 0.5 * (np.abs(k + 1) ** two_h - 2.0 * k**two_h + np.abs(k - 1) ** two_h)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FgnSpectrum:
    """Eigenvalues of the circulant embedding of ``count`` fGn increments."""

    order: int
    eigenvalues: np.ndarray
    hurst: float
    step: float
    count: int
    clipped: float = 0.0
    white: bool = field(default=False)

    @property
    def draws_per_path(self) -> int:
        return self.count if self.white else self.order


def _embedding_order(count: int) -> int:
    m = 2
    while m < 2 * count:
        m *= 2
    return m


def build_embedding(count: int, h: float, step: float = 1.0) -> FgnSpectrum:
    """Circulant embedding of the fGn covariance for ``count`` increments of size ``step``.

    The autocovariance row is built at unit step and the eigenvalues scaled by
    ``step^{2H}``.  Negative eigenvalues within ``1e-10 * max`` are clipped to zero;
    anything below raises :class:`EmbeddingFailure`.
    """
    h = check_hurst(h)
    if count < 1:
        raise ValueError("count must be >= 1")
    if not step > 0:
        raise ValueError("step must be positive")
    m = _embedding_order(count)
    half = m // 2
    lags = np.arange(half + 1)
    gam = fgn_autocov(lags, h)
    row = np.concatenate([gam, gam[-2:0:-1]])
    eig = np.fft.fft(row).real * step ** (2 * h)
    tol = TOL_EIG_REL * eig.max()
    lo = eig.min()
    if lo < -tol:
        raise EmbeddingFailure(f"eigenvalue {lo:.3e} below -{tol:.3e} (H={h}, count={count})")
    clipped = float(-lo) if lo < 0 else 0.0
    if clipped:
        log.info("clipped negative eigenvalues of magnitude up to %.3e", clipped)
        eig = np.maximum(eig, 0.0)
    eig.setflags(write=False)
    return FgnSpectrum(m, eig, h, float(step), int(count), clipped, white=(h == 0.5))


def _fgn_from_normals(spec: FgnSpectrum, z: np.ndarray) -> np.ndarray:
    """Map normals of shape ``(k, spec.draws_per_path)`` to fGn increments ``(k, count)``."""
    if spec.white:
        return z[:, : spec.count] * math.sqrt(spec.eigenvalues[0])
    m = spec.order
    half = m // 2
    lam = spec.eigenvalues[: half + 1]
    w = np.empty((z.shape[0], half + 1), dtype=complex)
    w.real[:, 0] = z[:, 0] * math.sqrt(lam[0] / m)
    w.imag[:, 0] = 0.0
    w.real[:, half] = z[:, 1] * math.sqrt(lam[half] / m)
    w.imag[:, half] = 0.0
    scale = np.sqrt(lam[1:half] / (2 * m))
    w.real[:, 1:half] = z[:, 2::2] * scale
    w.imag[:, 1:half] = z[:, 3::2] * scale
    x = np.fft.irfft(w, n=m, axis=1)
    return m * x[:, : spec.count]


def _cumulate(incr: np.ndarray) -> np.ndarray:
    out = np.zeros((incr.shape[0], incr.shape[1] + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return out


def sample_fbm_paths(spec: FgnSpectrum, seed: int, first_stream: int, n: int) -> np.ndarray:
    """``n`` fBm paths (streams ``first_stream..``), shape ``(n, count+1)``, ``B(0) = 0``."""
    z = standard_normals(seed, first_stream, n, spec.draws_per_path)
    return _cumulate(_fgn_from_normals(spec, z))


def sample_fbm(spec: FgnSpectrum, stream: RngStream) -> SamplePath:
    values = sample_fbm_paths(spec, stream.seed, stream.stream_id, 1)[0]
    return SamplePath(Grid(spec.step, spec.count), values)


# ---------------------------------------------------------------------------
# Dense oracle
# ---------------------------------------------------------------------------


def _cholesky_factor(grid: Grid, h: float) -> np.ndarray:
    if grid.count > CHOLESKY_MAX:
        raise SizeExceeded(f"Cholesky sampler limited to {CHOLESKY_MAX} points, got {grid.count}")
    cov = toeplitz(fgn_autocov(np.arange(grid.count), h)) * grid.step ** (2 * h)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def sample_fbm_cholesky_paths(grid: Grid, h: float, seed: int, first_stream: int, n: int) -> np.ndarray:
    h = check_hurst(h)
    chol = _cholesky_factor(grid, h)
    z = standard_normals(seed, first_stream, n, grid.count)
    return _cumulate(z @ chol.T)


def sample_fbm_cholesky(grid: Grid, h: float, stream: RngStream) -> SamplePath:
    """Exact fBm via the Cholesky factor of the increment covariance (test oracle)."""
    values = sample_fbm_cholesky_paths(grid, h, stream.seed, stream.stream_id, 1)[0]
    return SamplePath(grid, values)


# ---------------------------------------------------------------------------
# Stationary Ornstein-Uhlenbeck, r(t) = exp(-|t|)
# ---------------------------------------------------------------------------


def sample_ou_paths(grid: Grid, seed: int, first_stream: int, n: int) -> np.ndarray:
    rho = math.exp(-grid.step)
    z = standard_normals(seed, first_stream, n, grid.count + 1)
    z[:, 1:] *= math.sqrt(-math.expm1(-2 * grid.step))
    return lfilter([1.0], [1.0, -rho], z, axis=1)


def sample_ou(grid: Grid, stream: RngStream) -> SamplePath:
    """Stationary unit-variance Gauss-Markov path with correlation ``exp(-|t|)``."""
    return SamplePath(grid, sample_ou_paths(grid, stream.seed, stream.stream_id, 1)[0])


# ---------------------------------------------------------------------------
# Sum of independent fBm's along coordinates
# ---------------------------------------------------------------------------


def _coordinate_spectra(grids: tuple[Grid, Grid], h: float, a_coef: float):
    scale = a_coef ** (1.0 / (2 * h))
    return [build_embedding(max(g.count, 1), h, scale * g.step) for g in grids]


def sample_field_sum_paths(
    grids: tuple[Grid, Grid], h: float, a_coef: float, seed: int, first_stream: int, n: int
) -> np.ndarray:
    """Fields ``B1(a^{1/2H} t1) + B2(a^{1/2H} t2)``, shape ``(n, n1+1, n2+1)``."""
    h = check_hurst(h)
    if not a_coef > 0:
        raise ValueError("a_coef must be positive")
    s1, s2 = _coordinate_spectra(grids, h, a_coef)
    d1 = s1.draws_per_path
    z = standard_normals(seed, first_stream, n, d1 + s2.draws_per_path)
    b1 = _cumulate(_fgn_from_normals(s1, z[:, :d1]))[:, : grids[0].count + 1]
    b2 = _cumulate(_fgn_from_normals(s2, z[:, d1:]))[:, : grids[1].count + 1]
    return b1[:, :, None] + b2[:, None, :]


def sample_field_sum(grids: tuple[Grid, Grid], h: float, a_coef: float, stream: RngStream) -> np.ndarray:
    return sample_field_sum_paths(grids, h, a_coef, stream.seed, stream.stream_id, 1)[0]


def write_path_csv(path: SamplePath, dest: str | Path) -> None:
    """Dump a path as CSV with header ``t,value`` at 17 significant digits."""
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value"])
        for t, v in zip(path.grid.times, path.values):
            w.writerow([f"{t:.17g}", f"{v:.17g}"])
