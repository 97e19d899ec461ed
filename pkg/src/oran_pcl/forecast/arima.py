"""Multiplicative seasonal ARIMA fitted by conditional least squares.

Orders are chosen by AIC over a candidate grid. All candidates in one
search are scored on the same residual span so their AIC values are
comparable even when the differencing orders differ.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter

from ..errors import ConfigError, ContractError, FitError

# floor on the residual variance so exact fits (e.g. a pure seasonal walk) get a finite AIC
_VAR_FLOOR = 1e-300


@dataclass(frozen=True, order=True)
class ArimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 24

    def __post_init__(self):
        if min(self.p, self.d, self.q, self.P, self.D, self.Q) < 0:
            raise ConfigError(f"negative order in {self}")
        if self.s < 2:
            raise ConfigError("seasonal period s must be >= 2")
        if self.d + self.D > 3:
            raise ConfigError("d + D must not exceed 3")
        if self.p + self.q + self.P + self.Q == 0 and self.d + self.D == 0:
            raise ConfigError("an order needs at least one AR/MA term unless it is pure differencing")

    @property
    def has_mean(self) -> bool:
        return self.d + self.D == 0

    @property
    def n_coef(self) -> int:
        return self.p + self.P + self.q + self.Q + int(self.has_mean)

    @property
    def ar_lags(self) -> int:
        return self.p + self.d + self.s * (self.P + self.D)

    def as_dict(self):
        return asdict(self)


def default_grid(s: int = 24) -> list[ArimaOrder]:
    return [
        ArimaOrder(p, d, q, P, D, Q, s)
        for p, d, q, P, D, Q in itertools.product(range(3), range(2), range(3), range(2), range(2), range(2))
        if p + q + P + Q or d + D
    ]


def _seasonal(coefs, s, sign):
    poly = np.zeros(s * len(coefs) + 1)
    poly[0] = 1.0
    for k, c in enumerate(coefs, start=1):
        poly[k * s] = sign * c
    return poly


def polynomials(order: ArimaOrder, coef):
    """Expanded AR (with differencing) and MA lag polynomials, lag-0 term first."""
    coef = np.asarray(coef, dtype=float)
    p, P, q, Q = order.p, order.P, order.q, order.Q
    phi = coef[:p]
    Phi = coef[p : p + P]
    theta = coef[p + P : p + P + q]
    Theta = coef[p + P + q : p + P + q + Q]
    ar = np.concatenate([[1.0], -phi])
    ar = np.convolve(ar, _seasonal(Phi, order.s, -1.0))
    for _ in range(order.d):
        ar = np.convolve(ar, [1.0, -1.0])
    for _ in range(order.D):
        ar = np.convolve(ar, _seasonal([1.0], order.s, -1.0))
    ma = np.convolve(np.concatenate([[1.0], theta]), _seasonal(Theta, order.s, 1.0))
    return ar, ma


def residuals(order: ArimaOrder, coef, y, start: int | None = None):
    """One-step prediction errors for t >= start (pre-sample errors taken as zero)."""
    y = np.asarray(y, dtype=float)
    ar, ma = polynomials(order, coef)
    mu = coef[-1] if order.has_mean else 0.0
    lags = len(ar) - 1
    start = lags if start is None else start
    if start < lags:
        raise ContractError(f"start {start} precedes the {lags} AR lags")
    x = y - mu
    u = np.convolve(x, ar, mode="valid")[start - lags :]
    return lfilter([1.0], ma, u)


def _invertible(ma) -> bool:
    if len(ma) <= 1 or not np.any(ma[1:]):
        return True
    roots = np.roots(ma[::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-9))


@dataclass(frozen=True)
class ArimaFit:
    order: ArimaOrder
    coef: np.ndarray
    ssr: float
    n: int
    aic: float


def fit_order(y, order: ArimaOrder, start: int | None = None) -> ArimaFit:
    y = np.asarray(y, dtype=float)
    start = order.ar_lags if start is None else start
    if len(y) - start < order.n_coef + 2:
        raise FitError(f"series too short for {order}")
    k = order.n_coef
    x0 = np.zeros(k)
    lo = np.full(k, -2.5)
    hi = np.full(k, 2.5)
    if order.has_mean:
        x0[-1] = float(np.mean(y))
        spread = max(float(np.ptp(y)), 1.0) * 10.0
        lo[-1], hi[-1] = x0[-1] - spread, x0[-1] + spread
    if k:
        fun = lambda c: residuals(order, c, y, start)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = least_squares(fun, x0, bounds=(lo, hi), method="trf", x_scale="jac", max_nfev=200)
        coef = res.x
        if not np.all(np.isfinite(coef)):
            raise FitError(f"{order}: non-finite coefficients")
    else:
        coef = x0
    e = residuals(order, coef, y, start)
    if not np.all(np.isfinite(e)):
        raise FitError(f"{order}: non-finite residuals")
    _, ma = polynomials(order, coef)
    if not _invertible(ma):
        raise FitError(f"{order}: non-invertible moving-average part")
    n = len(e)
    ssr = float(e @ e)
    aic = n * math.log(max(ssr / n, _VAR_FLOOR)) + 2 * (k + 1)
    return ArimaFit(order, coef, ssr, n, aic)


def select_order(y, candidates: list[ArimaOrder]) -> tuple[ArimaFit, list[ArimaFit]]:
    """Fit every candidate on a common residual span and return the minimum-AIC fit.

    Ties are broken toward fewer coefficients, then by order.
    """
    if not candidates:
        raise ConfigError("no candidate orders")
    y = np.asarray(y, dtype=float)
    s_max = max(o.s for o in candidates)
    if len(y) < 3 * s_max:
        raise FitError(f"series length {len(y)} < 3 x seasonal period {s_max}")
    start = max(o.ar_lags for o in candidates)
    fits = []
    for order in candidates:
        try:
            fits.append(fit_order(y, order, start))
        except FitError:
            continue
    if not fits:
        raise FitError("no candidate order could be fitted")
    best = min(fits, key=lambda f: (f.aic, f.order.n_coef, f.order))
    return best, fits


def one_step(order: ArimaOrder, coef, y, start: int | None = None):
    """In-sample one-step-ahead predictions y_t - e_t for t >= start."""
    y = np.asarray(y, dtype=float)
    start = order.ar_lags if start is None else start
    return y[start:] - residuals(order, coef, y, start)


def forecast(order: ArimaOrder, coef, window, horizon: int = 1):
    """Forecast ``horizon`` steps after ``window`` with future shocks set to zero."""
    y = np.asarray(window, dtype=float)
    ar, ma = polynomials(order, coef)
    lags = len(ar) - 1
    if len(y) < lags + 1:
        raise ContractError(f"window of {len(y)} shorter than the {lags + 1} values this order needs")
    mu = coef[-1] if order.has_mean else 0.0
    e = list(residuals(order, coef, y, lags))
    x = list(y - mu)
    out = []
    for _ in range(horizon):
        nxt = -sum(ar[i] * x[-i] for i in range(1, len(ar)))
        nxt += sum(ma[j] * e[-j] for j in range(1, len(ma)) if j <= len(e))
        x.append(nxt)
        e.append(0.0)
        out.append(nxt + mu)
    return np.array(out)
