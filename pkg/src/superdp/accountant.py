"""Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Quantities are in nats. One mechanism step at sampling rate ``q`` and noise
multiplier ``sigma`` has RDP

    eps(alpha) = log A(alpha) / (alpha - 1),
    A(alpha)   = E_{z ~ N(0, s^2)} [ ((1 - q) + q * N(1, s^2)(z) / N(0, s^2)(z)) ** alpha ].

Integer orders expand A binomially, summed in log space. Fractional orders
integrate A numerically (``rdp_quadrature``).
"""

import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, InputError

DEFAULT_ORDERS = (1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)


def _check(q, sigma, alpha):
    if not 0.0 <= q <= 1.0:
        raise InputError(f"sampling rate q must lie in [0, 1], got {q}")
    if not sigma > 0:
        raise InputError(f"sigma must be > 0, got {sigma}")
    if not alpha > 1:
        raise InputError(f"order alpha must be > 1, got {alpha}")


def gaussian_rdp(sigma, alpha):
    """RDP of the sensitivity-1 Gaussian mechanism: alpha / (2 sigma^2)."""
    if not sigma > 0:
        raise InputError(f"sigma must be > 0, got {sigma}")
    if not alpha > 1:
        raise InputError(f"order alpha must be > 1, got {alpha}")
    return alpha / (2.0 * sigma * sigma)


def _log_a_int(q, sigma, alpha):
    a = int(alpha)
    k = np.arange(a + 1, dtype=np.float64)
    log_binom = special.gammaln(a + 1) - special.gammaln(k + 1) - special.gammaln(a - k + 1)
    terms = log_binom + k * math.log(q) + (a - k) * math.log1p(-q) + (k * k - k) / (2.0 * sigma * sigma)
    return float(special.logsumexp(terms))


def sgm_rdp(q, sigma, alpha):
    """RDP of one step of the Poisson-subsampled Gaussian mechanism at order ``alpha``."""
    _check(q, sigma, alpha)
    if q == 0.0:
        return 0.0
    if q == 1.0:
        return gaussian_rdp(sigma, alpha)
    if float(alpha).is_integer():
        return max(_log_a_int(q, sigma, alpha), 0.0) / (alpha - 1)
    return rdp_quadrature(q, sigma, alpha)


def _log_ratio(z, q, sigma):
    """log((1 - q) + q * exp(t)), t = (2z - 1) / (2 sigma^2), without overflow."""
    t = (2.0 * z - 1.0) / (2.0 * sigma * sigma)
    small = t < 30.0
    out = np.empty_like(t)
    out[small] = np.log1p(q * np.expm1(t[small]))
    out[~small] = np.logaddexp(math.log1p(-q), math.log(q) + t[~small])
    return out


def _log_phi0(z, sigma):
    return -0.5 * (z / sigma) ** 2 - math.log(sigma * math.sqrt(2.0 * math.pi))


def _excess(x, alpha):
    """(1 + x)**alpha - 1 - alpha*x for x > -1, accurate for small |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    acc = np.zeros_like(xs)
    for j in range(12, 1, -1):
        acc = acc * xs + special.binom(alpha, j)
    out[small] = acc * xs * xs
    xl = x[~small]
    out[~small] = np.expm1(alpha * np.log1p(xl)) - alpha * xl
    return out


def rdp_quadrature(q, sigma, alpha, rtol=1e-12):
    """RDP of the subsampled Gaussian by adaptive quadrature, valid for any real alpha > 1.

    For moderate A the integrand is rewritten as
    phi0 * ((1+x)^alpha - 1 - alpha*x), x = q*(r - 1), which is nonnegative
    and integrates to A - 1 directly (the dropped alpha*x term has zero
    mean). Large A is integrated in log-scaled form instead.
    """
    _check(q, sigma, alpha)
    if q == 0.0:
        return 0.0
    lo, hi = -15.0 * sigma - 1.0, alpha + 15.0 * sigma + 1.0
    grid = np.linspace(lo, hi, int((hi - lo) / min(sigma, 1.0) * 40) + 1)
    log_r = _log_ratio(grid, q, sigma)
    ell = _log_phi0(grid, sigma) + alpha * log_r
    m = float(ell.max())
    # integrate only where the log integrand is within 80 nats of its peak
    live = grid[ell > m - 80.0]
    a, b = max(lo, live[0] - 1.0), min(hi, live[-1] + 1.0)
    edges = np.arange(math.floor(a), math.ceil(b) + 1.0, min(sigma, 1.0))

    if m > 30.0:
        def f(z):
            zz = np.atleast_1d(z)
            lr = _log_ratio(zz, q, sigma)
            return float(np.exp(_log_phi0(zz, sigma) + alpha * lr - m)[0])

        pieces = [integrate.quad(f, u, v, epsabs=0.0, epsrel=rtol, limit=200)[0]
                  for u, v in zip(edges[:-1], edges[1:])]
        log_a = m + math.log(math.fsum(pieces))
        return log_a / (alpha - 1)

    def g(z):
        zz = np.atleast_1d(np.float64(z))
        t = (2.0 * zz - 1.0) / (2.0 * sigma * sigma)
        x = q * np.expm1(t)
        return float((np.exp(_log_phi0(zz, sigma)) * _excess(x, alpha))[0])

    peak = max(abs(g(z)) for z in grid[:: max(1, grid.size // 400)])
    tol = max(peak, 1e-300) * 1e-16
    pieces = [integrate.quad(g, u, v, epsabs=tol, epsrel=rtol, limit=200)[0]
              for u, v in zip(edges[:-1], edges[1:])]
    return math.log1p(math.fsum(pieces)) / (alpha - 1)


@lru_cache(maxsize=256)
def _rdp_vector(q, sigma, orders):
    return np.array([sgm_rdp(q, sigma, a) for a in orders])


def _check_orders(orders):
    orders = tuple(float(a) for a in orders)
    if not orders:
        raise ConfigError("RDP order grid is empty")
    if any(a <= 1 for a in orders):
        raise ConfigError("RDP orders must be > 1")
    if any(b <= a for a, b in zip(orders, orders[1:])):
        raise ConfigError("RDP orders must be strictly increasing")
    return orders


@dataclass(frozen=True)
class PrivacyReport:
    epsilon: float
    delta: float
    best_order: float
    steps: int


class RdpLedger:
    """Accumulated RDP per order.

    Steps are stored as counts per (q, sigma) setting and the total is
    rebuilt as sum(count * per_step_rdp) in a canonical order, so T
    identical steps give exactly T times the single-step value and the
    order of interleaved settings does not matter.
    """

    def __init__(self, orders=DEFAULT_ORDERS):
        self.orders = _check_orders(orders)
        self._counts = {}
        self._lock = threading.Lock()

    @property
    def steps(self):
        with self._lock:
            return sum(self._counts.values())

    def step(self, q, sigma, count=1):
        if count < 0:
            raise InputError("step count must be >= 0")
        _check(q, sigma, 2.0)
        key = (float(q), float(sigma))
        _rdp_vector(*key, self.orders)
        with self._lock:
            self._counts[key] = self._counts.get(key, 0) + int(count)
        return self

    @property
    def eps_rdp(self):
        with self._lock:
            items = sorted(self._counts.items())
        total = np.zeros(len(self.orders))
        for key, count in items:
            total = total + count * _rdp_vector(*key, self.orders)
        return total

    def copy(self):
        new = RdpLedger(self.orders)
        with self._lock:
            new._counts = dict(self._counts)
        return new

    def to_dp(self, delta):
        return to_dp(self, delta)


def account_step(ledger, q, sigma):
    """A new ledger with one more (q, sigma) step."""
    return ledger.copy().step(q, sigma)


def to_dp(ledger, delta):
    """Tightest (eps, delta) over the order grid: min_a eps_rdp(a) + ln(1/delta)/(a - 1)."""
    if not 0 < delta < 1:
        raise InputError(f"delta must lie in (0, 1), got {delta}")
    orders = np.asarray(_check_orders(ledger.orders))
    eps = ledger.eps_rdp + math.log(1.0 / delta) / (orders - 1.0)
    i = int(np.argmin(eps))  # first minimum = smallest order on ties
    return PrivacyReport(float(eps[i]), float(delta), float(orders[i]), ledger.steps)


def epsilon_for(q, sigma, steps, delta, orders=DEFAULT_ORDERS):
    return RdpLedger(orders).step(q, sigma, steps).to_dp(delta)


def basic_composition(epsilons):
    """Total budget of sequentially composed pure-DP mechanisms."""
    eps = [float(e) for e in epsilons]
    if any(e < 0 for e in eps):
        raise InputError("privacy budgets must be nonnegative")
    return math.fsum(eps)


def privacy_loss_sample(p_x, p_y):
    """Privacy loss ln(p_x / p_y) of one observed outcome."""
    if not (p_x > 0 and p_y > 0):
        raise InputError("densities must be positive")
    return math.log(p_x) - math.log(p_y)
