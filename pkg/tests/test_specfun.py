"""Special-function checks against independent quadrature / series oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from ncsol import specfun as sf


def euler_gamma_oracle(n=100000):
    # Euler-Maclaurin: gamma = H_n - log n - 1/(2n) + 1/(12n^2) - 1/(120n^4) + O(n^-6)
    h = math.fsum(1.0 / j for j in range(1, n + 1))
    return h - math.log(n) - 1.0 / (2 * n) + 1.0 / (12 * n**2) - 1.0 / (120 * n**4)


def e1_quad(x):
    if x < 30:
        val, err = quad(lambda t: math.exp(-x * t) / t, 1.0, np.inf, epsabs=1e-16, epsrel=1e-13, limit=200)
        return val
    # substitute u = x(t-1) so the oracle keeps relative accuracy for tiny values
    val, err = quad(lambda u: math.exp(-u) / (1.0 + u / x), 0.0, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return math.exp(-x) / x * val


def ei_quad(x):
    # Ei(x) = gamma + log x + int_0^x (e^t - 1)/t dt, smooth integrand
    val, _ = quad(lambda t: np.expm1(t) / t, 0.0, x, epsabs=1e-15, epsrel=1e-13, limit=200)
    return euler_gamma_oracle() + math.log(x) + val


def test_e1_at_one_matches_quadrature():
    r = sf.exp_integral_e1(1.0)
    assert r.value == pytest.approx(0.21938393439552029, abs=1e-14)
    assert abs(r.value - e1_quad(1.0)) < 1e-14
    assert r.abs_error_bound < 1e-14 * abs(r.value) + 1e-288


def test_e1_small_x_limit():
    # E1(x) + log x + gamma -> 0 like x
    for x in [1e-8, 1e-6, 1e-4]:
        r = sf.exp_integral_e1(x)
        assert abs(r.value + math.log(x) + sf.EULER_GAMMA) < 2 * x


def test_e1_asymptotic_form_at_ten():
    # e^-10 10^-1 (1 - 1/10 + 2/100 - 6/1000 + ...), first omitted term controls
    r = sf.exp_integral_e1(10.0)
    partial = math.exp(-10.0) / 10.0 * (1 - 0.1 + 0.02 - 0.006)
    assert abs(r.value - partial) <= math.exp(-10.0) / 10.0 * 24e-4 * 1.05


def test_e1_relative_bound_across_range():
    for x in np.geomspace(1e-8, 700, 160):
        r = sf.exp_integral_e1(float(x))
        if r.value != 0.0:
            assert r.abs_error_bound <= 1e-14 * abs(r.value), f"x={x}"


def test_e1_against_quadrature_sweep():
    for x in np.geomspace(1e-6, 250, 60):
        r = sf.exp_integral_e1(float(x))
        q = e1_quad(float(x))
        if q > 0:
            assert abs(r.value - q) < 5e-12 * q + 1e-300, f"x={x}"


def test_e1_underflow_flag_and_domain():
    assert sf.exp_integral_e1(701.0).flag == "underflow"
    with pytest.raises(ValueError):
        sf.exp_integral_e1(0.0)
    with pytest.raises(ValueError):
        sf.exp_integral_e1(-3.0)


def test_ei_at_one_matches_pv_quadrature():
    # symmetric-excision principal value of -int_{-x}^inf e^-u/u du
    x = 1.0
    out = []
    for d in [1e-3, 1e-4, 1e-5]:
        left, _ = quad(lambda u: math.exp(-u) / u, -x, -d, epsabs=1e-15, limit=200)
        right, _ = quad(lambda u: math.exp(-u) / u, d, 60.0, epsabs=1e-15, limit=200)
        out.append(-(left + right))
    # excision error is O(d) -> Richardson on the last two
    extrap = (out[-1] * 10 - out[-2]) / 9
    r = sf.exp_integral_ei(1.0)
    assert r.value == pytest.approx(1.8951178163559368, abs=1e-13)
    assert abs(r.value - extrap) < 1e-8
    assert abs(r.value - ei_quad(1.0)) < 1e-12


def test_ei_small_x_limit():
    for x in [1e-8, 1e-5]:
        r = sf.exp_integral_ei(x)
        assert abs(r.value - math.log(x) - sf.EULER_GAMMA) < 2 * x


def test_ei_overflow_flag():
    r = sf.exp_integral_ei(720.0)
    assert r.flag == "overflow"
    with pytest.raises(ValueError):
        sf.exp_integral_ei(-1.0)


def test_cut_identity_pv_e1_is_minus_ei():
    # PV E1(-x) = -Ei(x): pv_f(lam) = e^-lam * PV E1(-lam) must equal -e^-lam Ei(lam)
    for x in np.geomspace(0.05, 300, 40):
        lhs = sf.pv_f(float(x))
        ei = sf.exp_integral_ei(float(x)).value
        if math.isfinite(ei):
            assert abs(lhs + math.exp(-x) * ei) <= 1e-12 * max(abs(lhs), 1e-30)


def test_digamma_values():
    gamma = euler_gamma_oracle()
    assert sf.digamma(1) == pytest.approx(-gamma, abs=1e-13)
    assert sf.digamma(2) == pytest.approx(1.0 - gamma, abs=1e-13)
    h10 = math.fsum(1.0 / j for j in range(1, 11))
    assert sf.digamma(11) == pytest.approx(-gamma + h10, abs=1e-13)
    assert sf.digamma(11) == pytest.approx(2.3517525890667211, abs=1e-13)
    with pytest.raises(ValueError):
        sf.digamma(0)


@given(st.integers(min_value=1, max_value=400))
def test_digamma_recurrence(k):
    assert sf.digamma(k + 1) - sf.digamma(k) == pytest.approx(1.0 / k, rel=1e-12)


def test_f_resolvent_negative_axis():
    r = sf.f_resolvent(-1.0)
    assert r.value.real == pytest.approx(0.5963473623231941, abs=1e-13)
    assert r.value.imag == 0.0


def test_f_resolvent_large_argument_expansion():
    mu = 100.0
    r = sf.f_resolvent(-mu)
    poly = 1 / mu - 1 / mu**2 + 2 / mu**3 - 6 / mu**4
    # next term is 24 mu^-5
    assert abs(r.value.real - poly) < 2 * 24 / mu**5


def test_f_resolvent_rejects_cut():
    with pytest.raises(ValueError):
        sf.f_resolvent(0.5)
    with pytest.raises(ValueError):
        sf.f_resolvent(0.0)


def test_series_asymptotic_cross_validation():
    # both branches agree within the sum of their reported bounds on [5, 40]
    for x in np.linspace(5.0, 40.0, 36):
        rs = sf._e1_series_mp(float(x))
        ra = sf._e1_asymptotic(float(x))
        assert abs(rs.value - ra.value) <= rs.abs_error_bound + ra.abs_error_bound, f"x={x}"


def test_pv_delta_from_epsilon_limits():
    # average of f across the cut -> pv_f, half the jump -> pi*delta_f,
    # Richardson-extrapolated in eps^2
    for lam in [0.5, 1.0, 3.0, 8.0]:
        eps = np.array([1e-3, 1e-4, 1e-5])
        avg = []
        jump = []
        for e in eps:
            fp = sf.f_resolvent(complex(lam, e)).value
            fm = sf.f_resolvent(complex(lam, -e)).value
            avg.append((fp + fm) / 2)
            jump.append((fp - fm) / 2j)
        # boundary values expand linearly in eps; Richardson with ratio 10
        pv_extrap = (avg[-1] * 10 - avg[-2]) / 9
        dj_extrap = (jump[-1] * 10 - jump[-2]) / 9
        assert abs(pv_extrap.real - sf.pv_f(lam)) < 1e-6
        assert abs(dj_extrap.real - math.pi * sf.delta_f(lam)) < 1e-6
        assert abs(pv_extrap.imag) < 1e-8


def test_delta_f_trivial():
    assert sf.delta_f(0.0) == 1.0
    assert sf.delta_f(3.0) == math.exp(-3.0)


def test_exp_scaled_e1_monotone_decreasing():
    a = np.geomspace(1e-4, 500, 1000)
    vals = []
    for x in a:
        if x < 36:
            vals.append(math.exp(x) * sf.exp_integral_e1(float(x)).value)
        else:
            vals.append(sf.f_resolvent(-float(x)).value.real)
    vals = np.array(vals)
    assert np.all(np.diff(vals) < 0)


def test_w_bracket_matches_closed_form():
    # (1 - q pv_f(lam)) reproduces 1 + q e^-lam Ei(lam)
    q = 1.7
    for lam in [0.3, 1.0, 5.0, 20.0]:
        lhs = 1.0 - q * sf.pv_f(lam)
        rhs = 1.0 + q * math.exp(-lam) * sf.exp_integral_ei(lam).value
        assert lhs == pytest.approx(rhs, rel=1e-13)
