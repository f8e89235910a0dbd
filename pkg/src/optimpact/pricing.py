"""European option pricing on the forward (Black-76), vega and implied vol.

Prices are discounted expectations of the payoff under a lognormal
forward. Time is in ACT/365 years. The vectorised kernels
(:func:`black_price`, :func:`black_vega`, :func:`implied_vol_array`) work
on numpy arrays and back the scalar API used elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from ._validation import check_positive
from .exceptions import ArbitrageError, ConvergenceError, DomainError

SQRT_2PI = math.sqrt(2.0 * math.pi)
MAX_ITER = 100
PRICE_TOL = 1e-10  # relative to the forward


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    expiry: int  # epoch milliseconds
    kind: str = "call"

    def __post_init__(self):
        check_positive(self.strike, "strike")
        kind = str(self.kind).strip().lower()
        kind = {"c": "call", "p": "put"}.get(kind, kind)
        if kind not in ("call", "put"):
            raise DomainError(f"option kind must be call or put, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    @property
    def is_call(self) -> bool:
        return self.kind == "call"


@dataclass(frozen=True)
class PricingInputs:
    forward: float
    time_to_expiry: float
    vol: float
    discount: float = 1.0

    def __post_init__(self):
        check_positive(self.forward, "forward")
        check_positive(self.time_to_expiry, "time_to_expiry")
        check_positive(self.vol, "vol", strict=False)
        d = float(self.discount)
        if not 0.0 < d <= 1.0:
            raise DomainError(f"discount must lie in (0, 1], got {d!r}")


def _check_arrays(forward, strike, tau):
    if np.any(~(np.asarray(forward) > 0)):
        raise DomainError("forward must be > 0")
    if np.any(~(np.asarray(strike) > 0)):
        raise DomainError("strike must be > 0")
    if np.any(~(np.asarray(tau) > 0)):
        raise DomainError("time to expiry must be > 0")


def black_price(forward, strike, tau, vol, discount=1.0, is_call=True):
    """Discounted Black-76 price; ``vol == 0`` gives the discounted intrinsic value."""
    _check_arrays(forward, strike, tau)
    F, K, tau, vol, D, call = np.broadcast_arrays(
        np.asarray(forward, float), np.asarray(strike, float), np.asarray(tau, float),
        np.asarray(vol, float), np.asarray(discount, float), np.asarray(is_call, bool))
    if np.any(~(vol >= 0)):
        raise DomainError("vol must be >= 0")
    sd = vol * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1 = (np.log(F / K) + 0.5 * sd * sd) / sd
        d2 = d1 - sd
        c = F * ndtr(d1) - K * ndtr(d2)
        p = K * ndtr(-d2) - F * ndtr(-d1)
    value = np.where(call, c, p)
    intrinsic = np.where(call, np.maximum(F - K, 0.0), np.maximum(K - F, 0.0))
    value = np.where(sd > 0, value, intrinsic)
    out = D * value
    return out if out.ndim else float(out)


def black_vega(forward, strike, tau, vol, discount=1.0):
    """dPrice/dvol, identical for calls and puts."""
    _check_arrays(forward, strike, tau)
    F, K, tau, vol, D = np.broadcast_arrays(
        np.asarray(forward, float), np.asarray(strike, float), np.asarray(tau, float),
        np.asarray(vol, float), np.asarray(discount, float))
    sd = vol * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1 = (np.log(F / K) + 0.5 * sd * sd) / sd
    # zero-vol limit: only the at-the-money point keeps a finite vega
    d1 = np.where(sd > 0, d1, np.where(F == K, 0.0, np.inf))
    out = D * F * np.sqrt(tau) * np.exp(-0.5 * d1 * d1) / SQRT_2PI
    return out if out.ndim else float(out)


def price(spec: OptionSpec, inputs: PricingInputs) -> float:
    return black_price(inputs.forward, spec.strike, inputs.time_to_expiry, inputs.vol,
                       inputs.discount, spec.is_call)


def vega(spec: OptionSpec, inputs: PricingInputs) -> float:
    return black_vega(inputs.forward, spec.strike, inputs.time_to_expiry, inputs.vol,
                      inputs.discount)


def _otm_equivalent(p, F, K, is_call):
    """Undiscounted price of the out-of-the-money option at the same strike.

    Inverting the OTM price keeps all significant digits in the time value.
    """
    otm_call = K >= F
    q = np.where(is_call & ~otm_call, p - (F - K), p)
    q = np.where(~is_call & otm_call, p + (F - K), q)
    return q, otm_call


def implied_vol(spec: OptionSpec, observed_price: float, forward: float,
                time_to_expiry: float, discount: float = 1.0) -> float:
    """Black-76 implied volatility by a bracketed Brent solve.

    Raises :class:`ArbitrageError` outside the no-arbitrage bounds and
    :class:`ConvergenceError` if the root cannot be pinned down.
    """
    F = check_positive(forward, "forward")
    tau = check_positive(time_to_expiry, "time_to_expiry")
    D = float(discount)
    if not 0.0 < D <= 1.0:
        raise DomainError(f"discount must lie in (0, 1], got {D!r}")
    K = spec.strike
    p = float(observed_price) / D
    intrinsic = max(F - K, 0.0) if spec.is_call else max(K - F, 0.0)
    upper = F if spec.is_call else K
    slack = 1e-14 * F
    if not math.isfinite(p) or p < intrinsic - slack or p >= upper:
        raise ArbitrageError(
            f"price {observed_price!r} outside no-arbitrage bounds "
            f"[{D * intrinsic!r}, {D * upper!r}) for {spec.kind} K={K}")
    q, otm_call = _otm_equivalent(np.float64(p), F, K, np.bool_(spec.is_call))
    q = float(q)
    if q <= 0.0:
        return 0.0

    def f(sigma):
        return black_price(F, K, tau, sigma, 1.0, bool(otm_call)) - q

    hi = 1.0
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise ConvergenceError(f"could not bracket implied vol for price {observed_price!r}")
    try:
        sigma = brentq(f, 0.0, hi, xtol=1e-15, rtol=8.9e-16, maxiter=MAX_ITER)
    except RuntimeError as exc:
        raise ConvergenceError(str(exc)) from None
    if abs(f(sigma)) * D > PRICE_TOL * F:
        raise ConvergenceError(f"implied vol residual too large at sigma={sigma!r}")
    return float(sigma)


def implied_vol_array(prices, forward, strike, tau, discount=1.0, is_call=True,
                      max_iter: int = MAX_ITER):
    """Vectorised implied vol: log-price Newton steps safeguarded by a bisection bracket.

    Entries violating the no-arbitrage bounds, or not converged after
    ``max_iter`` steps, come back as NaN.
    """
    P, F, K, tau, D, call = np.broadcast_arrays(
        np.asarray(prices, float), np.asarray(forward, float), np.asarray(strike, float),
        np.asarray(tau, float), np.asarray(discount, float), np.asarray(is_call, bool))
    shape = P.shape
    P, F, K, tau, D, call = (a.ravel().copy() for a in (P, F, K, tau, D, call))
    _check_arrays(F, K, tau)
    out = np.full(P.shape, np.nan)
    p = P / D
    intrinsic = np.where(call, np.maximum(F - K, 0.0), np.maximum(K - F, 0.0))
    upper = np.where(call, F, K)
    ok = np.isfinite(p) & (p >= intrinsic - 1e-14 * F) & (p < upper)
    q, otm_call = _otm_equivalent(p, F, K, call)
    q = np.maximum(q, 0.0)
    out[ok & (q <= 0.0)] = 0.0
    idx = np.flatnonzero(ok & (q > 0.0))
    if idx.size == 0:
        return out.reshape(shape)

    F_, K_, t_, q_, c_ = F[idx], K[idx], tau[idx], q[idx], otm_call[idx]
    lo = np.zeros(idx.size)
    hi = np.ones(idx.size)
    for _ in range(60):
        short = black_price(F_, K_, t_, hi, 1.0, c_) < q_
        if not short.any():
            break
        hi[short] *= 2.0
    k = np.abs(np.log(F_ / K_))
    # Manaster-Koehler start: the vol where vega peaks
    sigma = np.where(k > 1e-12, np.sqrt(2.0 * k / t_), q_ / F_ * SQRT_2PI / np.sqrt(t_))
    sigma = np.clip(sigma, 0.5 * hi / 2 ** 30, hi)
    sigma = np.where((sigma > lo) & (sigma < hi), sigma, 0.5 * (lo + hi))
    done = np.zeros(idx.size, bool)
    tol = 1e-14 * q_
    for _ in range(max_iter):
        act = ~done
        if not act.any():
            break
        s = sigma[act]
        P = black_price(F_[act], K_[act], t_[act], s, 1.0, c_[act])
        diff = P - q_[act]
        v = black_vega(F_[act], K_[act], t_[act], s, 1.0)
        l, h = lo[act], hi[act]
        l = np.where(diff < 0, s, l)
        h = np.where(diff > 0, s, h)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            # Newton on log price: far out of the money the price is exponential in vol
            newton = s - (np.log(P) - np.log(q_[act])) * P / v
        step = np.where(np.isfinite(newton) & (newton > l) & (newton < h), newton, 0.5 * (l + h))
        conv = (np.abs(diff) <= tol[act]) | (h - l <= 4e-16 * np.maximum(h, 1e-300))
        lo[act], hi[act] = l, h
        sigma[act] = np.where(conv, s, step)
        done[act] = conv
    res = np.where(done, sigma, np.nan)
    # accept stragglers whose residual already meets the contract tolerance
    late = ~done
    if late.any():
        diff = black_price(F_[late], K_[late], t_[late], sigma[late], 1.0, c_[late]) - q_[late]
        res[late] = np.where(np.abs(diff) * D[idx][late] <= PRICE_TOL * F_[late], sigma[late], np.nan)
    out[idx] = res
    return out.reshape(shape)
