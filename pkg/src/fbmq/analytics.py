"""Closed-form quantities for the fBm storage process.

Covers the asymptotic constants ``tau0, A, B, a, b``, the auxiliary field ``Z``
(``nu``, ``sigma_Z``, ``r_Z``), the normal tail, the exact tail asymptotics of
``Q(0)``, and the exact Brownian (H = 1/2) formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, ndtr

from .errors import DomainError
from .gaussgen import check_hurst

__all__ = [
    "AsymConstants",
    "TailModel",
    "constants",
    "nu",
    "nu_second_derivative",
    "sigma_Z",
    "r_Z",
    "mills_psi",
    "psi_asymptotic",
    "tail_asymptotic",
    "pickands_brownian",
    "brownian_qzero_tail",
    "brownian_inf_ratio",
    "brownian_inf_exact",
    "brownian_sup_asympt",
    "brownian_sup_ratio_limit",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class AsymConstants:
    tau0: float
    A: float
    B: float
    a: float
    b: float


def constants(h: float, c: float) -> AsymConstants:
    """Constants of the exact tail asymptotics of ``Q(0)`` for input ``B_H`` and rate ``c``."""
    h = check_hurst(h)
    if not c > 0:
        raise DomainError(f"service rate must be positive, got {c}")
    tau0 = h / (c * (1 - h))
    A = tau0**-h / (1 - h)
    B = h * tau0 ** (-h - 2)
    a = 0.5 * tau0 ** (-2 * h)
    return AsymConstants(tau0, A, B, a, B / (2 * A))


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError(f"{name} must be positive")
    return x


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def nu(tau, h: float, c: float):
    """``tau^{-H} + c tau^{1-H}``."""
    tau = _positive("tau", tau)
    return _out(tau**-h + c * tau ** (1 - h))


def nu_second_derivative(tau, h: float, c: float):
    tau = _positive("tau", tau)
    return _out(h * (h + 1) * tau ** (-h - 2) - c * h * (1 - h) * tau ** (-h - 1))


def sigma_Z(tau, h: float, c: float):
    """Standard deviation of ``Z(s, tau)``, equal to ``1/nu(tau)``."""
    return _out(1.0 / np.asarray(nu(tau, h, c)))


def r_Z(s1, tau1, s2, tau2, h: float):
    """Correlation of ``Z(s1, tau1)`` and ``Z(s2, tau2)``.

    ``Z(s, tau) = (B_H(s + tau) - B_H(s)) / (tau^H nu(tau))``, so the correlation is the
    normalized covariance of two fBm increments.
    """
    tau1 = _positive("tau1", tau1)
    tau2 = _positive("tau2", tau2)
    x0 = np.asarray(s1, dtype=float)
    y0 = np.asarray(s2, dtype=float)
    x1, y1 = x0 + tau1, y0 + tau2
    p = 2 * h
    # built from endpoint differences so that swapping the arguments is exact
    num = np.abs(x1 - y0) ** p + np.abs(y1 - x0) ** p - np.abs(x1 - y1) ** p - np.abs(x0 - y0) ** p
    return _out(np.clip(num / (2 * tau1**h * tau2**h), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Normal tail
# ---------------------------------------------------------------------------


def mills_psi(u):
    """Standard normal upper tail ``P(N > u)`` via ``erfc``."""
    return _out(0.5 * erfc(np.asarray(u, dtype=float) / _SQRT2))


def psi_asymptotic(u):
    """Leading term ``exp(-u^2/2) / (u sqrt(2 pi))`` of the normal tail."""
    u = _positive("u", u)
    return _out(np.exp(-0.5 * u * u) / (u * math.sqrt(2 * math.pi)))


# ---------------------------------------------------------------------------
# Tail asymptotics of Q(0)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailModel:
    h: float
    c: float
    pickands: float

    def __post_init__(self):
        if not self.pickands > 0:
            raise ValueError("pickands constant must be positive")

    @property
    def constants(self) -> AsymConstants:
        return constants(self.h, self.c)


def tail_asymptotic(u, model: TailModel):
    """Asymptotic ``P(Q(0) > u)`` for large ``u``.

    ``sqrt(pi) a^{1/2H} b^{-1/2} H_sup (A u^{1-H})^{(1-H)/H} Psi(A u^{1-H})``
    """
    u = _positive("u", u)
    h = model.h
    k = model.constants
    x = k.A * u ** (1 - h)
    pre = math.sqrt(math.pi) * k.a ** (1 / (2 * h)) * k.b**-0.5 * model.pickands
    return _out(pre * x ** ((1 - h) / h) * 0.5 * erfc(x / _SQRT2))


# ---------------------------------------------------------------------------
# Brownian case
# ---------------------------------------------------------------------------


def pickands_brownian(S):
    """``E exp(sup_{[0,S]} (sqrt(2) W(t) - t))`` for standard Brownian ``W``.

    Closed form ``(2 + S) Phi(sqrt(S/2)) + sqrt(S/pi) exp(-S/4)``, obtained by
    integrating ``e^x`` against the first-passage law of ``sqrt(2) W(t) - t``.
    """
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise DomainError("S must be nonnegative")
    return _out((2 + S) * ndtr(np.sqrt(S / 2)) + np.sqrt(S / math.pi) * np.exp(-S / 4))


def brownian_qzero_tail(u, c: float):
    """``P(Q(0) > u) = exp(-2 c u)`` for Brownian input with unit variance."""
    return _out(np.exp(-2.0 * c * np.asarray(u, dtype=float)))


def brownian_inf_ratio(S):
    """``P(inf_{[0,S]} Q > u) / P(Q(0) > u)`` at ``c = 1`` (independent of ``u``)."""
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise DomainError("S must be nonnegative")
    r = 2 * (1 + S) * 0.5 * erfc(np.sqrt(S) / _SQRT2) - np.sqrt(2 * S / math.pi) * np.exp(-S / 2)
    return _out(r)


def brownian_inf_exact(u, S, c: float = 1.0):
    """Exact ``P(inf_{[0,S]} Q > u)`` with service rate ``c``.

    Brownian scaling maps rate ``c`` on ``[0, S]`` at level ``u`` to rate 1 on
    ``[0, c^2 S]`` at level ``c u``.
    """
    S = np.asarray(S, dtype=float)
    return _out(brownian_qzero_tail(u, c) * np.asarray(brownian_inf_ratio(c * c * S)))


def brownian_sup_asympt(u, S, c: float = 1.0):
    """Large-``u`` ``P(sup_{[0,S]} Q > u)`` in the form ``P(Q(0)>u) 2 sqrt(pi) H([0, 2 c^2 S])``.

    This is the formula as printed in the literature; :func:`brownian_sup_ratio_limit`
    gives the ratio obtained from a direct first-passage argument, which simulation
    supports.
    """
    S = _positive("S", S)
    return _out(
        brownian_qzero_tail(u, c) * 2 * math.sqrt(math.pi) * np.asarray(pickands_brownian(2 * c * c * S))
    )


def brownian_sup_ratio_limit(S, c: float = 1.0):
    """``lim_u P(sup_{[0,S]} Q > u) / P(Q(0) > u) = H([0, 2 c^2 S])``.

    Conditionally on ``Q(0) = u - y`` the path stays unreflected near level ``u``, so the
    ratio tends to ``E exp(2c sup_{[0,S]} (W(t) - c t))``, which rescales to the Brownian
    Pickands-type constant on ``[0, 2 c^2 S]``.
    """
    S = np.asarray(S, dtype=float)
    return pickands_brownian(2 * c * c * S)
