import math

import numpy as np
import pytest

from oracles import mp_sgm_rdp, renyi_gaussians
from superdp import accountant as acc
from superdp.errors import ConfigError, InputError


class TestGaussianRdp:
    @pytest.mark.parametrize("sigma,alpha,expected", [(1.0, 2.0, 1.0), (10.0, 2.0, 0.01)])
    def test_values_match_integration(self, sigma, alpha, expected):
        oracle = renyi_gaussians(sigma, alpha)
        assert oracle == pytest.approx(expected, rel=1e-9)
        assert acc.gaussian_rdp(sigma, alpha) == pytest.approx(oracle, rel=1e-9)

    def test_vanishes_with_noise(self):
        vals = [acc.gaussian_rdp(s, 4.0) for s in (1, 10, 100, 1e4)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-7

    @pytest.mark.parametrize("sigma,alpha", [(0, 2), (-1, 2), (1, 1), (1, 0.5)])
    def test_domain(self, sigma, alpha):
        with pytest.raises(InputError):
            acc.gaussian_rdp(sigma, alpha)


class TestSgmRdp:
    def test_zero_rate(self):
        assert acc.sgm_rdp(0.0, 1.0, 8) == 0.0

    def test_full_rate(self):
        assert acc.sgm_rdp(1.0, 1.3, 8) == acc.gaussian_rdp(1.3, 8)

    def test_against_high_precision_integral(self):
        assert acc.sgm_rdp(0.01, 1.0, 2) == pytest.approx(mp_sgm_rdp(0.01, 1.0, 2), rel=1e-6)

    @pytest.mark.parametrize("q,sigma,alpha", [(0.001, 4.0, 2), (0.1, 0.5, 16), (0.01, 2.0, 32)])
    def test_integer_orders_high_precision(self, q, sigma, alpha):
        assert acc.sgm_rdp(q, sigma, alpha) == pytest.approx(mp_sgm_rdp(q, sigma, alpha), rel=1e-6)

    @pytest.mark.parametrize("q,sigma,alpha", [(0.01, 1.1, 1.25), (0.01, 1.1, 1.75), (0.1, 0.7, 2.5),
                                               (0.001, 2.0, 5.5)])
    def test_fractional_orders_high_precision(self, q, sigma, alpha):
        assert acc.sgm_rdp(q, sigma, alpha) == pytest.approx(mp_sgm_rdp(q, sigma, alpha), rel=1e-6)

    def test_monotone_on_grid(self):
        qs, sigmas, alphas = (0.001, 0.01, 0.05, 0.1, 0.5), (0.5, 1.0, 2.0, 4.0), acc.DEFAULT_ORDERS[:12]
        v = np.array([[[acc.sgm_rdp(q, s, a) for a in alphas] for s in sigmas] for q in qs])
        assert np.all(np.diff(v, axis=0) >= 0)  # q
        assert np.all(np.diff(v, axis=1) <= 0)  # sigma
        assert np.all(np.diff(v, axis=2) >= 0)  # alpha

    def test_domain(self):
        for args in [(-0.1, 1, 2), (1.1, 1, 2), (0.1, 0, 2), (0.1, 1, 1)]:
            with pytest.raises(InputError):
                acc.sgm_rdp(*args)


class TestLedger:
    def test_linear_composition_exact(self):
        led = acc.RdpLedger()
        single = np.array([acc.sgm_rdp(0.01, 1.1, a) for a in led.orders])
        for _ in range(250):
            led.step(0.01, 1.1)
        assert np.array_equal(led.eps_rdp, 250 * single)
        assert led.steps == 250

    def test_empty(self):
        led = acc.RdpLedger()
        assert not led.eps_rdp.any() and led.steps == 0

    def test_interleaving_is_order_free(self):
        a, b = acc.RdpLedger(), acc.RdpLedger()
        for _ in range(5):
            a.step(0.01, 1.0)
        for _ in range(3):
            a.step(0.05, 2.0)
        for i in range(8):
            b.step(*((0.05, 2.0) if i % 2 else (0.01, 1.0)))
        b.step(0.01, 1.0)
        a.step(0.05, 2.0)
        assert np.array_equal(a.eps_rdp, b.eps_rdp)

    def test_nondecreasing(self):
        led, prev = acc.RdpLedger(), None
        for i in range(30):
            led.step(0.02 if i % 3 else 0.1, 1.5)
            cur = led.eps_rdp
            if prev is not None:
                assert np.all(cur >= prev)
            prev = cur

    def test_account_step_is_functional(self):
        led = acc.RdpLedger()
        new = acc.account_step(led, 0.1, 1.0)
        assert led.steps == 0 and new.steps == 1

    @pytest.mark.parametrize("orders", [(), (1.0, 2.0), (2.0, 2.0), (3.0, 2.0)])
    def test_order_grid_validation(self, orders):
        with pytest.raises(ConfigError):
            acc.RdpLedger(orders)


class TestConversion:
    def test_single_order(self):
        rep = acc.to_dp(_fixed(2.0, 1.0), 1e-5)
        assert rep.epsilon == pytest.approx(1.0 + math.log(1e5), abs=1e-12)
        assert rep.epsilon == pytest.approx(12.5129, abs=1e-3)
        assert rep.best_order == 2.0

    def test_delta_near_one(self):
        led = acc.RdpLedger().step(0.01, 1.0, 100)
        rep = acc.to_dp(led, 1 - 1e-15)
        assert rep.epsilon == pytest.approx(led.eps_rdp.min(), abs=1e-12)

    def test_zero_budget_picks_largest_order(self):
        rep = acc.to_dp(acc.RdpLedger(), 1e-5)
        assert rep.best_order == 256.0
        assert rep.epsilon == pytest.approx(math.log(1e5) / 255)

    def test_ties_pick_smallest_order(self):
        # eps(2) + ln(1/d)/1 == eps(3) + ln(1/d)/2 when eps(2) = eps(3) - ln(1/d)/2
        d = 1e-3
        rep = acc.to_dp(_fixed2((2.0, 3.0), [0.0, math.log(1 / d) / 2]), d)
        assert rep.best_order == 2.0

    def test_epsilon_nonincreasing_in_delta(self):
        led = acc.RdpLedger().step(0.01, 1.1, 500)
        eps = [acc.to_dp(led, d).epsilon for d in (1e-9, 1e-7, 1e-5, 1e-3, 0.1)]
        assert all(b <= a for a, b in zip(eps, eps[1:]))

    def test_bad_delta(self):
        with pytest.raises(InputError):
            acc.to_dp(acc.RdpLedger(), 0.0)


class _FixedLedger:
    def __init__(self, orders, eps):
        self.orders, self.eps_rdp, self.steps = tuple(orders), np.asarray(eps, dtype=float), 1


def _fixed(order, eps):
    return _FixedLedger((order,), [eps])


def _fixed2(orders, eps):
    return _FixedLedger(orders, eps)


def test_empty_grid_conversion():
    with pytest.raises(ConfigError):
        acc.to_dp(_FixedLedger((), []), 1e-5)


class TestBasicComposition:
    def test_sum(self):
        assert acc.basic_composition([1.0, 2.0]) == 3.0

    def test_empty_and_single(self):
        assert acc.basic_composition([]) == 0.0
        assert acc.basic_composition([0.7]) == 0.7

    def test_negative(self):
        with pytest.raises(InputError):
            acc.basic_composition([1.0, -0.1])


class TestPrivacyLoss:
    def test_equal_densities(self):
        assert acc.privacy_loss_sample(0.3, 0.3) == 0.0

    def test_antisymmetric(self):
        assert acc.privacy_loss_sample(0.2, 0.5) == -acc.privacy_loss_sample(0.5, 0.2)

    def test_gaussian_midpoint(self):
        pdf = lambda z, m: math.exp(-0.5 * (z - m) ** 2) / math.sqrt(2 * math.pi)
        assert acc.privacy_loss_sample(pdf(0.5, 0.0), pdf(0.5, 1.0)) == pytest.approx(0.0, abs=1e-15)

    def test_nonpositive(self):
        with pytest.raises(InputError):
            acc.privacy_loss_sample(0.0, 0.5)


def test_tail_bound_monte_carlo():
    """For the plain Gaussian mechanism the converted epsilon bounds the privacy-loss tail."""
    sigma, delta, draws = 1.5, 1e-5, 1_000_000
    rep = acc.RdpLedger().step(1.0, sigma).to_dp(delta)
    z = np.random.default_rng(2).normal(0.0, sigma, draws)
    # loss of observing z under D1 (mean 0) vs D2 (mean 1)
    loss = ((z - 1.0) ** 2 - z**2) / (2 * sigma**2)
    exceed = np.mean(loss > rep.epsilon)
    # one-sided: allow 4 binomial standard errors above delta
    assert exceed <= delta + 4 * math.sqrt(delta / draws)
