"""Special functions and closed-form outage probabilities.

Everything here is a pure function of its arguments. The special functions
are implemented locally (no scipy.special) so that tests can check them
against an independent library; the hot scalar kernels are numba-compiled.

Conventions
-----------
``w`` is bandwidth in Hz and ``slot_duration`` turns it into bits per slot:
a transmission of ``D`` bits succeeds when ``w * T * log2(1 + g P) >= D``.
``power`` is the transmit power spectral density (W/Hz) and ``noise_psd`` the
noise spectral density, so ``C_pl * power / noise_psd`` is the mean SNR at
1 km.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit, vectorize

_EPS = np.finfo(float).eps
# 2**1020 is close to the largest finite double
_MAX_EXP2 = 1020.0


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _j0_series(x: float) -> float:
    q = -0.25 * x * x
    term = 1.0
    total = 1.0
    k = 0
    while abs(term) > 1e-17 * max(1.0, abs(total)):
        k += 1
        term *= q / (k * k)
        total += term
    return total


def _j0_miller(x: float) -> float:
    # backward recurrence J_{k-1} = (2k/x) J_k - J_{k+1}, normalised with
    # 1 = J_0 + 2 * sum_{k>=1} J_{2k}
    start = int(x + 20 + 10 * math.sqrt(x))
    start += start % 2
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    j0 = 0.0
    for k in range(start, 0, -1):
        j_prev = (2.0 * k / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > 1e250:
            j_cur *= 1e-250
            j_next *= 1e-250
            norm *= 1e-250
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        if k - 1 == 0:
            j0 = j_cur
    norm += j0
    return j0 / norm


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind.

    Power series for ``|x| < 8``; backward (Miller) recurrence beyond, where
    the alternating series loses too many digits.
    """
    def scalar(v: float) -> float:
        v = abs(float(v))
        if v < 8.0:
            return _j0_series(v)
        return _j0_miller(v)

    if np.ndim(x) == 0:
        return scalar(x)
    return np.vectorize(scalar, otypes=[float])(x)


# Scalar kernels are compiled with numba: the Frank-Wolfe benchmark evaluates
# them on small arrays thousands of times per slot, where numpy's per-call
# overhead would dominate.

@njit(cache=True)
def _gamma_pair(s, x):
    """``(gamma(s, x), Gamma(s, x))`` for ``s > 0``, ``x >= 0``."""
    full = math.gamma(s)
    if x == 0.0:
        return 0.0, full
    if math.isinf(x):
        return full, 0.0
    if x < s + 4.0:
        # gamma(s, x) = x^s e^-x sum_n x^n / (s (s+1) ... (s+n))
        term = 1.0 / s
        total = term
        n = 0
        while n < 2000:
            n += 1
            term *= x / (s + n)
            total += term
            if abs(term) <= 1e-17 * abs(total):
                break
        lo = math.exp(s * math.log(x) - x) * total
        return lo, full - lo
    if x - s * math.log(x) > 745.0:
        # x^s e^-x underflows
        return full, 0.0
    # modified Lentz evaluation of the continued fraction for Gamma(s, x)
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 4e-16:
            break
    up = math.exp(s * math.log(x) - x) * h
    return full - up, up


@vectorize(["float64(float64, float64)"], cache=True)
def _lower_gamma_ufunc(s, x):
    return _gamma_pair(s, x)[0]


@vectorize(["float64(float64, float64)"], cache=True)
def _upper_gamma_ufunc(s, x):
    return _gamma_pair(s, x)[1]


def _check_gamma_args(s, x):
    s = np.asarray(s, float)
    x = np.asarray(x, float)
    if np.any(x < 0) or np.any(s <= 0):
        raise ValueError("incomplete gamma requires s > 0 and x >= 0")
    return s, x


def upper_inc_gamma(s, x):
    """Upper incomplete gamma ``Gamma(s, x) = int_x^inf t^(s-1) e^-t dt``.

    Series for ``x < s + 4``, continued fraction beyond.
    """
    out = _upper_gamma_ufunc(*_check_gamma_args(s, x))
    return out if np.ndim(out) else float(out)


def lower_inc_gamma(s, x):
    """Lower incomplete gamma ``gamma(s, x) = int_0^x t^(s-1) e^-t dt``."""
    out = _lower_gamma_ufunc(*_check_gamma_args(s, x))
    return out if np.ndim(out) else float(out)


@njit(cache=True)
def _marcum_q1_scalar(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0
    if a == 0.0:
        return math.exp(-0.5 * b * b)
    lam = 0.5 * a * a
    mu = 0.5 * b * b
    # Q1(a, b) = sum_k Pois(k; a^2/2) * P(Pois(b^2/2) <= k); outside
    # mean +- 40 sd both Poisson laws carry less than 1e-300 of mass
    r_lam = 40.0 * math.sqrt(lam) + 40.0
    r_mu = 40.0 * math.sqrt(mu) + 40.0
    if lam + r_lam < mu - r_mu:
        return 0.0
    if lam - r_lam > mu + r_mu:
        return 1.0
    lo = max(0.0, math.floor(min(lam - r_lam, mu - r_mu)))
    hi = math.ceil(max(lam + r_lam, mu + r_mu))
    # width from the radii: lam +- r_lam may round back to lam for huge lam
    if abs(lam - mu) + r_lam + r_mu > 5e6:
        # a b > 1e10: leading term of the large-argument expansion,
        # relative error O(1 / sqrt(a b))
        return 0.5 * math.erfc((b - a) / math.sqrt(2.0))
    k_lo = int(lo)
    k_hi = int(hi)
    log_lam = math.log(lam)
    log_mu = math.log(mu)
    cdf = 0.0
    total = 0.0
    for k in range(k_lo, k_hi + 1):
        lg = math.lgamma(k + 1.0)
        cdf += math.exp(-mu + k * log_mu - lg)
        total += math.exp(-lam + k * log_lam - lg) * min(cdf, 1.0)
    return min(total, 1.0)


def marcum_q1(a, b):
    """First-order Marcum Q-function.

    Evaluated through its Poisson-mixture form, which is the generalised
    Bessel series ``exp(-(a^2+b^2)/2) sum_k (a/b)^k I_k(ab)`` with every term
    rearranged to be non-negative.
    """
    if np.any(np.asarray(a) < 0) or np.any(np.asarray(b) < 0):
        raise ValueError("Marcum Q requires a, b >= 0")
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return _marcum_q1_scalar(float(a), float(b))
    return np.vectorize(_marcum_q1_scalar, otypes=[float])(a, b)


# ---------------------------------------------------------------------------
# outage probabilities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutageQuery:
    """Inputs of an outage-probability evaluation.

    ``d`` is the user distance in km; leave it ``None`` for a user whose
    position is only known to be uniform over the ring ``[d_min, d_max]``.
    """

    w: float
    D: float
    power: float
    C_pl: float
    n_pl: float
    noise_psd: float
    d: Optional[float] = None
    d_min: float = 0.05
    d_max: float = 1.0
    slot_duration: float = 1.0


def _bits_ratio(w, D, slot_duration):
    w = np.asarray(w, float)
    D = np.asarray(D, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(D > 0, D / (w * slot_duration), 0.0)
    return np.where(np.isnan(ratio), np.inf, ratio)


def zeta_value(w, D, power, C_pl, noise_psd, slot_duration=1.0):
    """Vectorised ``noise (2^(D/wT) - 1) / (C_pl P)``; ``inf`` for certain failure."""
    ratio = _bits_ratio(w, D, slot_duration)
    with np.errstate(over="ignore"):
        expm1 = np.where(ratio > _MAX_EXP2, np.inf, np.expm1(ratio * math.log(2.0)))
    return noise_psd * expm1 / (C_pl * power)


def dzeta_dw_value(w, D, power, C_pl, noise_psd, slot_duration=1.0):
    ratio = _bits_ratio(w, D, slot_duration)
    w = np.asarray(w, float)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        grow = np.where(ratio > _MAX_EXP2, np.inf, np.exp2(np.minimum(ratio, _MAX_EXP2)))
        val = -noise_psd * math.log(2.0) * ratio / w * grow / (C_pl * power)
    return np.where(ratio > 0, val, 0.0)


def zeta(q: OutageQuery) -> float:
    """Outage threshold on ``|h|^2 d^-n`` for the query.

    ``inf`` is the certain-failure sentinel (``w <= 0`` with ``D > 0``).
    """
    return float(zeta_value(q.w, q.D, q.power, q.C_pl, q.noise_psd, q.slot_duration))


def pfail_given_d_value(w, D, d, power, C_pl, n_pl, noise_psd, slot_duration=1.0):
    z = zeta_value(w, D, power, C_pl, noise_psd, slot_duration)
    x = z * np.asarray(d, float) ** n_pl
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(x), 1.0, -np.expm1(-x))


def dpfail_given_d_dw_value(w, D, d, power, C_pl, n_pl, noise_psd, slot_duration=1.0):
    z = zeta_value(w, D, power, C_pl, noise_psd, slot_duration)
    dn = np.asarray(d, float) ** n_pl
    dz = dzeta_dw_value(w, D, power, C_pl, noise_psd, slot_duration)
    x = z * dn
    with np.errstate(invalid="ignore", over="ignore"):
        val = np.exp(-x) * dn * dz
    return np.where(np.isfinite(x) & np.isfinite(val), val, 0.0)


def p_fail_given_d(q: OutageQuery) -> float:
    """Failure probability for a user at known distance, ``1 - exp(-zeta d^n)``."""
    if q.d is None:
        raise ValueError("p_fail_given_d needs a distance")
    return float(pfail_given_d_value(q.w, q.D, q.d, q.power, q.C_pl, q.n_pl,
                                     q.noise_psd, q.slot_duration))


@njit(cache=True)
def _excess(s, x):
    # int_0^x t^(s-1) (1 - e^-t) dt = x^s/s - gamma(s, x), accurate for small x
    if math.isinf(x):
        return math.inf
    if x < 1.0:
        # alternating series sum_k (-1)^(k+1) x^(s+k) / (k! (s+k))
        term = -1.0
        total = 0.0
        for k in range(1, 30):
            term = -term * x / k
            total += term / (s + k)
            if abs(term) < 1e-18 * abs(total):
                break
        return x ** s * total
    return x ** s / s - _gamma_pair(s, x)[0]


# 5-point Gauss-Legendre rule on [-1, 1], for rings too thin for the closed
# form (d_max^2 - d_min^2 cancels)
_GL_X = np.array([-0.9061798459386640, -0.5384693101056831, 0.0,
                  0.5384693101056831, 0.9061798459386640])
_GL_W = np.array([0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                  0.4786286704993665, 0.2369268850561891])
_THIN_RING = 1e-4


@njit(cache=True)
def _thin_ring(z, n_pl, d_min, d_max, deriv):
    # integral of (1 - e^{-z d^n}) (or e^{-z d^n} d^n) against 2d / (d_max^2 - d_min^2)
    mid = 0.5 * (d_max + d_min)
    half = 0.5 * (d_max - d_min)
    num = 0.0
    den = 0.0
    for i in range(5):
        d = mid + half * _GL_X[i]
        x = z * d ** n_pl
        f = math.exp(-x) * d ** n_pl if deriv else -math.expm1(-x)
        num += _GL_W[i] * f * d
        den += _GL_W[i] * d
    return num / den


@vectorize(["float64(float64, float64, float64, float64)"], cache=True)
def _pfail_avg_kernel(z, n_pl, d_min, d_max):
    if z == 0.0:
        return 0.0
    if math.isinf(z) or math.isnan(z):
        return 1.0
    if d_max - d_min < _THIN_RING * d_max:
        return _thin_ring(z, n_pl, d_min, d_max, False)
    s = 2.0 / n_pl
    span = 0.5 * n_pl * (d_max ** 2 - d_min ** 2)
    a = z * d_min ** n_pl
    b = z * d_max ** n_pl
    # P_fail = int (1 - e^{-z d^n}) f(d) dd, rewritten via the excess integral
    val = (_excess(s, b) - _excess(s, a)) / (z ** s * span)
    return min(max(val, 0.0), 1.0)


@vectorize(["float64(float64, float64, float64, float64, float64)"], cache=True)
def _dpfail_avg_kernel(z, dz, n_pl, d_min, d_max):
    # saturated region first: there dz may overflow to -inf and must not be touched
    if not (z > 0.0) or math.isinf(z) or z * d_min ** n_pl >= 700.0:
        return 0.0
    if dz != dz or dz == math.inf or dz == -math.inf:
        return 0.0
    if d_max - d_min < _THIN_RING * d_max:
        return _thin_ring(z, n_pl, d_min, d_max, True) * dz
    s1 = 1.0 + 2.0 / n_pl
    span = 0.5 * n_pl * (d_max ** 2 - d_min ** 2)
    b = z * d_max ** n_pl
    if b < 1e-10:
        # gamma(s1, x) = x^s1 / s1 (1 + O(x)); avoids 0/0 when z^s1 underflows
        return (d_max ** (n_pl * s1) - d_min ** (n_pl * s1)) / (s1 * span) * dz
    lo_b = _gamma_pair(s1, b)[0]
    lo_a = _gamma_pair(s1, z * d_min ** n_pl)[0]
    return (lo_b - lo_a) / (z ** s1 * span) * dz


def _shape_out(out, w, D):
    if np.ndim(w) == 0 and np.ndim(D) == 0:
        return np.asarray(out, float).reshape(())
    return out


def pfail_avg_value(w, D, power, C_pl, n_pl, noise_psd, d_min, d_max, slot_duration=1.0):
    z = zeta_value(w, D, power, C_pl, noise_psd, slot_duration)
    return _shape_out(_pfail_avg_kernel(z, float(n_pl), float(d_min), float(d_max)), w, D)


def dpfail_avg_dw_value(w, D, power, C_pl, n_pl, noise_psd, d_min, d_max, slot_duration=1.0):
    z = zeta_value(w, D, power, C_pl, noise_psd, slot_duration)
    dz = dzeta_dw_value(w, D, power, C_pl, noise_psd, slot_duration)
    return _shape_out(_dpfail_avg_kernel(z, dz, float(n_pl), float(d_min), float(d_max)), w, D)


def p_fail_avg_d(q: OutageQuery) -> float:
    """Failure probability averaged over a uniform position in the ring.

    Equal to ``1 - [Gamma(2/n, z dmin^n) - Gamma(2/n, z dmax^n)] /
    [n z^(2/n) (dmax^2 - dmin^2) / 2]``; evaluated through the lower gamma
    function so that tiny failure probabilities keep their relative accuracy.
    """
    return float(pfail_avg_value(q.w, q.D, q.power, q.C_pl, q.n_pl, q.noise_psd,
                                 q.d_min, q.d_max, q.slot_duration))


def dp_fail_avg_dw(q: OutageQuery) -> float:
    """Bandwidth derivative of :func:`p_fail_avg_d` (per Hz, always <= 0)."""
    return float(dpfail_avg_dw_value(q.w, q.D, q.power, q.C_pl, q.n_pl, q.noise_psd,
                                     q.d_min, q.d_max, q.slot_duration))


def phi_markov_one_step(w_prev: float, w_now: float, rho: float, d: float,
                        D: float, power: float, C_pl: float, n_pl: float,
                        noise_psd: float, slot_duration: float = 1.0) -> float:
    """Probability of failing at ``t0 + 1`` given a failure at ``t0``.

    Correlated Rayleigh fading ``h1 = rho h0 + Z``; ``w_prev`` is the
    bandwidth used in the failed slot, ``w_now`` the one used now.
    """
    if rho <= 0.0:
        return float(pfail_given_d_value(w_now, D, d, power, C_pl, n_pl, noise_psd,
                                         slot_duration))
    kw = dict(D=D, power=power, C_pl=C_pl, noise_psd=noise_psd, slot_duration=slot_duration)
    z0 = float(zeta_value(w_prev, **kw))
    z1 = float(zeta_value(w_now, **kw))
    if rho >= 1.0:
        p0 = float(pfail_given_d_value(w_prev, D, d, power, C_pl, n_pl, noise_psd, slot_duration))
        p1 = float(pfail_given_d_value(max(w_prev, w_now), D, d, power, C_pl, n_pl,
                                       noise_psd, slot_duration))
        return 1.0 if p0 == 0.0 else p1 / p0
    scale = d ** (0.5 * n_pl)
    x0 = math.sqrt(z0) * scale if math.isfinite(z0) else math.inf
    x1 = math.sqrt(z1) * scale if math.isfinite(z1) else math.inf
    if x1 * x1 > 745.0:
        # success at t0 + 1 has probability below the smallest double
        return 1.0
    if x0 == 0.0:
        # conditioning event has probability zero; fall back to the marginal
        return float(-math.expm1(-x1 * x1))
    if x0 * x0 > 745.0:
        # the failure at t0 is certain in double precision: conditioning on nothing
        return float(-math.expm1(-x1 * x1))
    sigma = math.sqrt(0.5 * (1.0 - rho * rho))
    num = (math.exp(-x1 * x1) * marcum_q1(x0 / sigma, rho * x1 / sigma)
           - math.exp(-x0 * x0) * marcum_q1(rho * x0 / sigma, x1 / sigma))
    val = 1.0 - num / (-math.expm1(-x0 * x0))
    return min(max(val, 0.0), 1.0)
