"""Spin-wave decay from radial diffusion and a longitudinal field gradient.

Both factors are normalised storage-efficiency ratios eta(t)/eta(0):

* diffusion of a Gaussian spin wave of 1/e^2 radius ``w`` with diffusion
  constant ``D = D0 * P0 / P``::

      4 w^2 w'^2 / (w^2 + w'^2)^2,   w'^2 = w^2 + 8 D t

* a linear field gradient over a uniform spin wave of length ``L``::

      sinc^2(B' E_B L t / 2),   sinc(x) = sin(x) / x   (unnormalised)

The gradient only enters through the dephasing rate ``B' E_B L`` (rad/s),
which is therefore what the calibration fit determines.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, minimize
from sklearn.base import BaseEstimator, RegressorMixin

from .core import check_finite
from .exceptions import DomainError, FitError, InvalidInputError, RangeError

logger = logging.getLogger(__name__)

E = math.e
#: 8 D T_1e / w^2 for pure diffusion.
DIFFUSION_1E_RATIO = 2.0 * ((E - 1.0) + math.sqrt((E - 1.0) ** 2 + (E - 1.0)))


@dataclass(frozen=True)
class DiffusionParams:
    w: float
    D0: float
    P: float
    P0: float = 760.0

    def __post_init__(self):
        for name in ("w", "P", "P0"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name), positive=True))
        object.__setattr__(self, "D0", check_finite("D0", self.D0, nonnegative=True))

    @property
    def D(self):
        return self.D0 * self.P0 / self.P

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class GradientParams:
    b_prime: float
    e_b: float
    cell_len: float
    b0: float = 0.0

    def __post_init__(self):
        for name in ("b_prime", "e_b", "b0"):
            object.__setattr__(self, name, check_finite(name, getattr(self, name)))
        object.__setattr__(self, "cell_len", check_finite("cell_len", self.cell_len, positive=True))

    @property
    def rate(self):
        """Dephasing rate ``|B' E_B L|`` in rad/s."""
        return abs(self.b_prime * self.e_b * self.cell_len)

    @property
    def first_zero(self):
        return math.inf if self.rate == 0 else 2.0 * math.pi / self.rate

    def replace(self, **changes):
        return replace(self, **changes)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise DomainError("storage time must be finite and >= 0")
    return t


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def diffusion_factor(d: DiffusionParams, t):
    t = _check_time(t)
    w2 = d.w ** 2
    wp2 = w2 + 8.0 * d.D * t
    return _scalar(4.0 * w2 * wp2 / (w2 + wp2) ** 2)


def diffusion_factor_alt(d: DiffusionParams, t):
    """Equivalent form ``1 - 1/(1 + w^2/(4 D t))^2`` (limit 1 at t = 0)."""
    t = _check_time(t)
    with np.errstate(divide="ignore"):
        x = np.where(t > 0, d.w ** 2 / (4.0 * d.D * t), np.inf)
    return _scalar(1.0 - 1.0 / (1.0 + x) ** 2)


def gradient_factor(g: GradientParams, t):
    t = _check_time(t)
    x = 0.5 * g.rate * t
    return _scalar(np.sinc(x / np.pi) ** 2)


def combined_decay(d: DiffusionParams, g: GradientParams, t):
    return _scalar(np.asarray(diffusion_factor(d, t)) * np.asarray(gradient_factor(g, t)))


def pure_diffusion_t1e(d: DiffusionParams):
    """Closed-form 1/e time for diffusion alone."""
    return DIFFUSION_1E_RATIO * d.w ** 2 / (8.0 * d.D) if d.D > 0 else math.inf


def sinc2_1e_argument():
    """``x`` solving ``(sin x / x)^2 = 1/e`` on (0, pi)."""
    return brentq(lambda x: (math.sin(x) / x) ** 2 - 1.0 / E, 1e-6, math.pi - 1e-12, xtol=1e-15)


_SINC2_1E_X = sinc2_1e_argument()


def pure_gradient_t1e(g: GradientParams):
    return 2.0 * _SINC2_1E_X / g.rate if g.rate > 0 else math.inf


def _decay_scalar(w2, D, rate, t):
    wp2 = w2 + 8.0 * D * t
    x = 0.5 * rate * t
    s = 1.0 if x == 0 else math.sin(x) / x
    return 4.0 * w2 * wp2 / (w2 + wp2) ** 2 * s * s


def _crossing_bracket(d, g, t_max):
    hi = min(pure_diffusion_t1e(d), pure_gradient_t1e(g))
    if t_max is not None:
        hi = min(hi, float(t_max))
    if not math.isfinite(hi):
        raise RangeError("no 1/e crossing: neither diffusion nor gradient dephasing is present")
    # at a single-mechanism crossing the decay equals 1/e up to rounding
    if _decay_scalar(d.w ** 2, d.D, g.rate, hi) > (1.0 + 1e-9) / E:
        raise RangeError(f"decay stays above 1/e up to the scan bound t={hi:.6g} s")
    return hi


def storage_time_1e(d: DiffusionParams, g: GradientParams, *, rtol=1e-6, t_max=None):
    """First time at which :func:`combined_decay` reaches 1/e.

    The product of two factors in (0, 1] crosses 1/e no later than either
    factor alone, so the earlier of the two single-mechanism crossings
    brackets the root. Both factors decrease monotonically up to the first
    gradient zero, hence the crossing inside the bracket is unique.

    Parameters
    ----------
    rtol : float
        Relative width of the final bisection bracket.
    t_max : float, optional
        Extra cap on the scan; a :class:`RangeError` is raised if the decay
        is still above 1/e there.
    """
    hi = _crossing_bracket(d, g, t_max)
    w2, D, rate = d.w ** 2, d.D, g.rate
    target = 1.0 / E
    lo = 0.0
    while hi - lo > 0.5 * rtol * hi:
        mid = 0.5 * (lo + hi)
        if _decay_scalar(w2, D, rate, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _t1e_brent(w2, D, rate):
    """Same crossing as :func:`storage_time_1e`, via Brent's method (used inside fits)."""
    hi = min(DIFFUSION_1E_RATIO * w2 / (8.0 * D) if D > 0 else math.inf,
             2.0 * _SINC2_1E_X / rate if rate > 0 else math.inf)
    if not math.isfinite(hi):
        raise RangeError("no 1/e crossing")
    f = lambda t: _decay_scalar(w2, D, rate, t) - 1.0 / E  # noqa: E731
    if f(hi) >= 0.0:
        return hi
    return brentq(f, 0.0, hi, xtol=1e-14 * hi, rtol=1e-13)


# ---------------------------------------------------------------------------
# calibration fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFitReport:
    D0: float
    gradient_rate: float
    b_prime: float
    residuals: np.ndarray
    rms_relative: float
    converged: bool
    at_lower_bound: bool
    n_starts: int
    message: str

    def to_dict(self):
        return {
            "D0": self.D0,
            "b_prime": self.b_prime,
            "b_prime_times_eb_l": self.gradient_rate,
            "residuals": [float(r) for r in self.residuals],
            "rms_relative": self.rms_relative,
            "converged": self.converged,
            "gradient_at_lower_bound": self.at_lower_bound,
        }


class SpinWaveDecayRegressor(RegressorMixin, BaseEstimator):
    """Predicts 1/e storage time from (beam radius w [m], Ne pressure P [Torr]).

    Two free parameters are fitted: the diffusion constant ``D0`` at ``P0``
    and the gradient dephasing rate ``B' E_B L``. Both are searched in log
    space with bounds, using Nelder-Mead from ``n_starts`` log-spaced starting
    points; the best local minimum wins.

    Attributes
    ----------
    D0_ : float
    gradient_rate_ : float
    report_ : DecayFitReport
    """

    def __init__(self, P0=760.0, n_starts=5, max_evals=4000, rate_bounds=(1e-2, 1e7),
                 D0_bounds=(1e-9, 1e-1), e_b=1.0, cell_len=1.0):
        self.P0 = P0
        self.n_starts = n_starts
        self.max_evals = max_evals
        self.rate_bounds = rate_bounds
        self.D0_bounds = D0_bounds
        self.e_b = e_b
        self.cell_len = cell_len

    def _predict(self, X, D0, rate):
        P0 = float(self.P0)
        return np.array([_t1e_brent(w * w, D0 * P0 / P, rate) for w, P in X])

    def _check_X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise InvalidInputError(f"X must have shape (n, 2) with columns (w, P), got {X.shape}")
        if np.any(X <= 0) or not np.all(np.isfinite(X)):
            raise InvalidInputError("w and P must be finite and > 0")
        return X

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y, dtype=float)
        if y.shape != (X.shape[0],):
            raise InvalidInputError("y must hold one storage time per row of X")
        if X.shape[0] < 2:
            raise InvalidInputError("need at least two data points")
        if np.any(y <= 0):
            raise InvalidInputError("storage times must be > 0")
        if np.unique(X, axis=0).shape[0] < 2:
            warnings.warn("all data points share the same (w, P): D0 and the gradient are not "
                          "separately identifiable", RuntimeWarning, stacklevel=2)
        scale = float(np.mean(y))
        lo = np.log([self.D0_bounds[0], self.rate_bounds[0]])
        hi = np.log([self.D0_bounds[1], self.rate_bounds[1]])

        def cost(theta):
            theta = np.clip(theta, lo, hi)
            D0, rate = np.exp(theta)
            try:
                pred = self._predict(X, D0, rate)
            except RangeError:
                return 1e6
            return float(np.sum(((pred - y) / scale) ** 2))

        # data-driven centre: diffusion-only D0 from the shortest storage time, rate from the longest
        i = int(np.argmin(y))
        w, P = X[i]
        D0_guess = DIFFUSION_1E_RATIO * w ** 2 / (8.0 * y[i]) * P / self.P0
        rate_guess = 2.0 * _SINC2_1E_X / float(np.max(y))
        spread = np.logspace(-1, 1, max(int(self.n_starts), 1)) if self.n_starts > 1 else [1.0]
        starts = [np.clip(np.log([D0_guess * s, rate_guess / s]), lo, hi) for s in spread]

        best = None
        for x0 in starts:
            res = minimize(cost, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                           options={"xatol": 1e-8, "fatol": 1e-13, "maxfev": int(self.max_evals)})
            if best is None or res.fun < best.fun:
                best = res
        D0, rate = np.exp(np.clip(best.x, lo, hi))
        pred = self._predict(X, D0, rate)
        resid = pred - y
        at_lb = bool(best.x[1] <= lo[1] + 1e-6)
        self.D0_ = float(D0)
        self.gradient_rate_ = float(rate)
        self.report_ = DecayFitReport(
            D0=float(D0), gradient_rate=float(rate),
            b_prime=float(rate / (self.e_b * self.cell_len)),
            residuals=resid, rms_relative=float(np.sqrt(np.mean((resid / y) ** 2))),
            converged=bool(best.success), at_lower_bound=at_lb, n_starts=len(starts),
            message=str(best.message))
        if not best.success:
            raise FitError(f"decay fit did not converge: {best.message}", best=self.report_)
        return self

    def predict(self, X):
        X = self._check_X(X)
        return self._predict(X, self.D0_, self.gradient_rate_)

    def predict_no_gradient(self, X):
        """Storage times with the fitted ``D0`` but no field gradient."""
        X = self._check_X(X)
        return np.array([pure_diffusion_t1e(DiffusionParams(w=w, D0=self.D0_, P=P, P0=self.P0))
                         for w, P in X])


def fit_decay_params(data, d_template: DiffusionParams, g_template: GradientParams, **kwargs):
    """Fit ``(D0, B')`` to rows of ``(w, P, T_measured)``.

    ``d_template`` supplies ``P0``, ``g_template`` supplies ``E_B`` and ``L``
    used to turn the fitted rate back into a gradient.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError("data must be rows of (w, P, T)")
    model = SpinWaveDecayRegressor(P0=d_template.P0, e_b=g_template.e_b, cell_len=g_template.cell_len,
                                   **kwargs)
    model.fit(arr[:, :2], arr[:, 2])
    rep = model.report_
    return rep.D0, rep.b_prime, rep
