import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize
from scipy.stats import norm

from fbmq import analytics as an
from fbmq.errors import DomainError

hurst = st.floats(0.05, 0.95)
rate = st.floats(0.1, 5.0)


# --- constants ---------------------------------------------------------------------


@given(h=hurst, c=rate)
def test_tau0_minimizes_nu(h, c):
    k = an.constants(h, c)
    res = optimize.minimize_scalar(lambda t: an.nu(t, h, c), bounds=(k.tau0 / 50, k.tau0 * 50), method="bounded",
                                   options={"xatol": 1e-12 * k.tau0})  # fmt: skip
    assert res.x == pytest.approx(k.tau0, rel=1e-4)


@given(h=hurst, c=rate)
def test_A_and_B_are_value_and_curvature_of_nu(h, c):
    k = an.constants(h, c)
    assert an.nu(k.tau0, h, c) == pytest.approx(k.A, rel=1e-12)
    assert an.nu_second_derivative(k.tau0, h, c) == pytest.approx(k.B, rel=1e-10)
    assert k.a == pytest.approx(0.5 * k.tau0 ** (-2 * h), rel=1e-14)
    assert k.b == pytest.approx(k.B / (2 * k.A), rel=1e-14)


def test_nu_second_derivative_finite_difference():
    h, c, t = 0.7, 1.3, 0.8
    d = 1e-4
    fd = (an.nu(t + d, h, c) - 2 * an.nu(t, h, c) + an.nu(t - d, h, c)) / d**2
    assert an.nu_second_derivative(t, h, c) == pytest.approx(fd, rel=1e-6)


def test_constants_examples():
    k = an.constants(0.5, 1.0)
    assert (k.tau0, k.A, k.B, k.a, k.b) == pytest.approx((1.0, 2.0, 0.5, 0.5, 0.125))
    assert an.constants(0.75, 1.0).tau0 == pytest.approx(3.0)


@pytest.mark.parametrize("h,c", [(0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_constants_domain(h, c):
    with pytest.raises(ValueError):
        an.constants(h, c)


def test_nu_domain():
    with pytest.raises(DomainError):
        an.nu(0.0, 0.5, 1.0)
    with pytest.raises(DomainError):
        an.sigma_Z(np.array([1.0, -1.0]), 0.5, 1.0)


# --- the Z field ------------------------------------------------------------------------


@given(h=hurst, c=rate)
def test_sigma_Z_taylor_at_tau0(h, c):
    k = an.constants(h, c)
    assert an.sigma_Z(k.tau0, h, c) == pytest.approx(1 / k.A, rel=1e-12)
    d = 1e-3 * k.tau0
    lhs = 1 - an.sigma_Z(k.tau0 + d, h, c) * k.A
    assert lhs / d**2 == pytest.approx(k.b, rel=1e-2)


@given(h=hurst)
def test_r_Z_local_structure(h):
    k = an.constants(h, 1.0)
    assert an.r_Z(0.3, k.tau0, 0.3, k.tau0, h) == pytest.approx(1.0)
    # 1 - r along s: 2a |ds|^{2H} - H(2H-1)(ds/tau0)^2 + O(ds^4)
    ds = 1e-3 * k.tau0
    smooth = -h * (2 * h - 1) * (ds / k.tau0) ** 2
    slope = (1 - an.r_Z(0.0, k.tau0, ds, k.tau0, h) - smooth) / ds ** (2 * h)
    assert slope == pytest.approx(2 * k.a, rel=1e-5)


@given(
    s1=st.floats(-5, 5), t1=st.floats(0.01, 5), s2=st.floats(-5, 5), t2=st.floats(0.01, 5), h=hurst
)
def test_r_Z_bounded_and_symmetric(s1, t1, s2, t2, h):
    r = an.r_Z(s1, t1, s2, t2, h)
    assert -1.0 <= r <= 1.0
    assert r == pytest.approx(an.r_Z(s2, t2, s1, t1, h), abs=1e-12)


def test_r_Z_brownian_overlap():
    # H = 1/2: correlation = overlap length / sqrt(t1 t2)
    assert an.r_Z(0.0, 1.0, 0.5, 1.0, 0.5) == pytest.approx(0.5)
    assert an.r_Z(0.0, 1.0, 2.0, 1.0, 0.5) == pytest.approx(0.0)


# --- normal tail ----------------------------------------------------------------------------


@given(u=st.floats(-8, 37))
def test_mills_psi_matches_norm_sf(u):
    assert an.mills_psi(u) == pytest.approx(norm.sf(u), rel=1e-12, abs=1e-300)


def test_psi_asymptotic_ratio():
    ratios = [an.psi_asymptotic(u) / an.mills_psi(u) for u in (5.0, 10.0, 20.0)]
    assert all(r > 1 for r in ratios)
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] == pytest.approx(1.0, abs=3e-3)


# --- tail asymptotics of Q(0) -------------------------------------------------------------


@given(u=st.floats(0.5, 50.0), c=rate)
def test_tail_asymptotic_brownian_identity(u, c):
    # at H = 1/2 with constant 1 the formula is sqrt(2 pi) x Psi(x), x = 2 sqrt(c u)
    x = 2 * math.sqrt(c * u)
    p = an.tail_asymptotic(u, an.TailModel(0.5, c, 1.0))
    assert p == pytest.approx(math.sqrt(2 * math.pi) * x * norm.sf(x), rel=1e-11)


def test_tail_asymptotic_reduces_to_exponential():
    for c in (1.0, 2.0):
        ratios = [an.tail_asymptotic(u, an.TailModel(0.5, c, 1.0)) / an.brownian_qzero_tail(u, c) for u in (5, 7, 10, 100)]
        assert ratios == sorted(ratios)
        assert abs(ratios[2] - 1) < 0.05
        assert ratios[3] == pytest.approx(1 - 1 / (4 * c * 100), abs=1e-4)


def test_tail_asymptotic_scales_with_constant():
    m1 = an.TailModel(0.75, 1.0, 1.0)
    m2 = an.TailModel(0.75, 1.0, 2.5)
    assert an.tail_asymptotic(3.0, m2) == pytest.approx(2.5 * an.tail_asymptotic(3.0, m1))


def test_tail_model_validation():
    with pytest.raises(ValueError):
        an.TailModel(0.75, 1.0, 0.0)
    with pytest.raises(DomainError):
        an.tail_asymptotic(0.0, an.TailModel(0.75, 1.0, 1.0))


# --- Brownian closed forms ---------------------------------------------------------------


def _exp_times_sup_tail(x, S):
    # e^x P(max_{[0,S]} (sqrt2 W(t) - t) > x), x >= 0
    s = math.sqrt(2 * S)
    return math.exp(x + norm.logsf((x + S) / s)) + norm.sf((x - S) / s)


def _pickands_quadrature(S):
    val, _ = integrate.quad(_exp_times_sup_tail, 0, np.inf, args=(S,), limit=200)
    return 1 + val


@pytest.mark.parametrize("S", [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 20.0])
def test_pickands_brownian_against_quadrature(S):
    assert an.pickands_brownian(S) == pytest.approx(_pickands_quadrature(S), rel=1e-8)


def test_pickands_brownian_values():
    assert an.pickands_brownian(0.0) == 1.0
    for S, v in [(1, 2.7201411), (2, 3.8493204), (4, 5.9432099), (8, 9.9884625)]:
        assert an.pickands_brownian(S) == pytest.approx(v, abs=1e-7)
    slopes = np.diff(an.pickands_brownian(np.array([50.0, 100.0]))) / 50
    assert slopes[0] == pytest.approx(1.0, abs=1e-6)


def _inf_ratio_quadrature(S):
    # overshoot y ~ Exp(2); window stays above u iff min_{[0,S]} (W(t) - t) > -y
    def stay(y):
        p_cross = norm.sf((y - S) / math.sqrt(S)) + math.exp(2 * y + norm.logsf((y + S) / math.sqrt(S)))
        return 1 - p_cross

    val, _ = integrate.quad(lambda y: 2 * math.exp(-2 * y) * stay(y), 0, np.inf, limit=200)
    return val


@pytest.mark.parametrize("S", [0.01, 0.5, 1.0, 3.0])
def test_brownian_inf_ratio_against_quadrature(S):
    assert an.brownian_inf_ratio(S) == pytest.approx(_inf_ratio_quadrature(S), rel=1e-7)


def test_brownian_inf_ratio_values():
    assert an.brownian_inf_ratio(0.0) == 1.0
    assert an.brownian_inf_ratio(1.0) == pytest.approx(0.1506796, abs=5e-7)
    assert an.brownian_inf_ratio(1.0) < 0.5
    assert 1 - an.brownian_inf_ratio(0.01) < 0.15
    r = an.brownian_inf_ratio(np.linspace(0, 5, 30))
    assert np.all(np.diff(r) < 0)


def test_brownian_rate_scaling():
    u, S, c = 0.7, 0.8, 2.0
    assert an.brownian_inf_exact(u, S, c) == pytest.approx(
        an.brownian_qzero_tail(c * u, 1.0) * an.brownian_inf_ratio(c * c * S)
    )
    assert an.brownian_qzero_tail(1.0, 1.0) == pytest.approx(math.exp(-2))


def test_brownian_sup_forms():
    S, c, u = 1.0, 1.0, 2.0
    assert an.brownian_sup_ratio_limit(S, c) == pytest.approx(an.pickands_brownian(2.0))
    printed = an.brownian_sup_asympt(u, S, c) / an.brownian_qzero_tail(u, c)
    assert printed == pytest.approx(2 * math.sqrt(math.pi) * an.pickands_brownian(2.0))
    with pytest.raises(DomainError):
        an.pickands_brownian(-1.0)
