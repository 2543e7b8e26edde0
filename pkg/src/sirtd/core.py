"""Domain types and parameter transforms shared across the package.

The unconstrained parameter vector always has the component order

    (beta, omega, lambda_tweets, d_I, d_T, phi_deaths, phi_tweets)

Positive parameters are log-transformed and the two probabilities
(``omega``, ``lambda_tweets``) are logit-transformed. Persisted chains
depend on this order, so it must never change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

PARAM_NAMES = ("beta", "omega", "lambda_tweets", "d_I", "d_T", "phi_deaths", "phi_tweets")
COMPARTMENTS = ("S", "I", "R", "T", "D")

_LOG_IDX = (0, 3, 4, 5, 6)
_LOGIT_IDX = (1, 2)
# largest argument for which exp() stays finite in double precision
_EXP_MAX = 709.0


class SirtdError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SirtdError, ValueError):
    """A value violates the invariants of its domain type."""


def _positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise ValidationError(f"{name} must be finite and > 0, got {value!r}")


def _unit(name, value):
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class EpidemicParams:
    """Latent ODE parameters plus the two observation precisions.

    ``phi_deaths`` and ``phi_tweets`` enter the negative binomial as
    dispersion ``1/phi``; larger values mean *more* over-dispersion.
    """

    beta: float
    omega: float
    lambda_tweets: float
    d_I: float
    d_T: float
    phi_deaths: float = 1.0
    phi_tweets: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        _positive("beta", self.beta)
        _unit("omega", self.omega)
        _unit("lambda_tweets", self.lambda_tweets)
        _positive("d_I", self.d_I)
        _positive("d_T", self.d_T)
        _positive("phi_deaths", self.phi_deaths)
        _positive("phi_tweets", self.phi_tweets)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])

    @classmethod
    def from_array(cls, values) -> EpidemicParams:
        return cls(*(float(v) for v in values))

    def replace(self, **changes) -> EpidemicParams:
        values = {name: getattr(self, name) for name in PARAM_NAMES}
        values.update(changes)
        return EpidemicParams(**values)


@dataclass(frozen=True)
class CompartmentState:
    S: float
    I: float
    R: float
    T: float
    D: float

    def __post_init__(self):
        for name in COMPARTMENTS:
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"compartment {name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def total(self) -> float:
        return self.S + self.I + self.R + self.T + self.D

    def as_array(self) -> np.ndarray:
        return np.array([self.S, self.I, self.R, self.T, self.D])

    @classmethod
    def initial(cls, N: float, I0: float) -> CompartmentState:
        """Fully susceptible population apart from ``I0`` infectious individuals."""
        return cls(N - I0, I0, 0.0, 0.0, 0.0)

    def check_total(self, N: float, tol: float = 1e-6) -> None:
        if abs(self.total - N) > tol * max(1.0, N):
            raise ValidationError(f"compartments sum to {self.total}, expected N={N}")


@dataclass(frozen=True)
class Trajectory:
    """Compartment sizes on a grid of days; ``states`` has shape (n_days, 5)."""

    days: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        days = np.asarray(self.days, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] != 5:
            raise ValidationError(f"states must have shape (n, 5), got {states.shape}")
        if days.shape != (states.shape[0],):
            raise ValidationError("days and states must have equal length")
        if days.size > 1 and np.any(np.diff(days) <= 0):
            raise ValidationError("days must be strictly increasing")
        if not np.all(np.isfinite(states)) or np.any(states < 0):
            raise ValidationError("trajectory states must be finite and non-negative")
        days.flags.writeable = False
        states.flags.writeable = False
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "states", states)

    def __len__(self):
        return self.days.size

    def __getitem__(self, i) -> CompartmentState:
        return CompartmentState(*self.states[i])

    def compartment(self, name: str) -> np.ndarray:
        return self.states[:, COMPARTMENTS.index(name)]


@dataclass(frozen=True)
class ObservedData:
    """Aligned observation series starting at day 0.

    ``require_monotone`` is on for real or agent-simulated cumulative
    counts; data sampled from the negative binomial observation model is
    not monotone and turns it off.
    """

    days: np.ndarray
    cumulative_deaths: np.ndarray
    tweet_counts: np.ndarray
    N: float
    y0: CompartmentState
    require_monotone: bool = True

    def __post_init__(self):
        days = np.asarray(self.days, dtype=float)
        deaths = np.asarray(self.cumulative_deaths)
        tweets = np.asarray(self.tweet_counts)
        if not (days.shape == deaths.shape == tweets.shape) or days.ndim != 1:
            raise ValidationError("days, cumulative_deaths and tweet_counts must share one length")
        if days.size == 0:
            raise ValidationError("observations are empty")
        if np.any(days < 0) or np.any(np.diff(days) <= 0):
            raise ValidationError("days must be non-negative and strictly increasing")
        for name, arr in (("cumulative_deaths", deaths), ("tweet_counts", tweets)):
            if np.any(arr < 0) or np.any(arr != np.round(arr)):
                raise ValidationError(f"{name} must be non-negative integers")
        deaths = deaths.astype(np.int64)
        tweets = tweets.astype(np.int64)
        if self.require_monotone and np.any(np.diff(deaths) < 0):
            raise ValidationError("cumulative_deaths must be non-decreasing")
        _positive("N", float(self.N))
        if not isinstance(self.y0, CompartmentState):
            raise ValidationError("y0 must be a CompartmentState")
        self.y0.check_total(float(self.N), tol=1e-9)
        for arr in (days, deaths, tweets):
            arr.flags.writeable = False
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "cumulative_deaths", deaths)
        object.__setattr__(self, "tweet_counts", tweets)
        object.__setattr__(self, "N", float(self.N))

    def __len__(self):
        return self.days.size


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the prior.

    ``omega_family`` selects between a half-normal truncated to [0, 1]
    (default, ``mu_omega``/``sigma_omega``) and a beta prior
    (``alpha_omega``/``beta_omega``).
    """

    mu_beta: float = 2.0
    sigma_beta: float = 1.0
    mu_omega: float = 0.4
    sigma_omega: float = 0.5
    omega_family: str = "half_normal"
    alpha_omega: float = 1.0
    beta_omega: float = 1.0
    alpha_lambda: float = 1.0
    beta_lambda: float = 2.0
    mu_dI: float = 7.0
    sigma_dI: float = 2.0
    mu_dT: float = 10.0
    sigma_dT: float = 2.0
    rate_phi: float = 5.0
    rate_phi_tweets: float = 5.0

    def __post_init__(self):
        for name in ("sigma_beta", "sigma_omega", "alpha_omega", "beta_omega", "alpha_lambda",
                     "beta_lambda", "sigma_dI", "sigma_dT", "rate_phi", "rate_phi_tweets"):
            _positive(name, float(getattr(self, name)))
        for name in ("mu_beta", "mu_omega", "mu_dI", "mu_dT"):
            if not math.isfinite(float(getattr(self, name))):
                raise ValidationError(f"{name} must be finite")
        if self.omega_family not in ("half_normal", "beta"):
            raise ValidationError(f"omega_family must be 'half_normal' or 'beta', got {self.omega_family!r}")


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def to_unconstrained(params: EpidemicParams) -> np.ndarray:
    values = params.as_array()
    out = np.empty(7)
    for i in _LOG_IDX:
        out[i] = math.log(values[i])
    for i in _LOGIT_IDX:
        out[i] = _logit(values[i])
    return out


def from_unconstrained(v) -> tuple[EpidemicParams, float]:
    """Map an unconstrained vector back to parameters.

    Returns the parameters and ``log |det d(params)/dv|``.
    """
    v = [float(x) for x in v]
    if len(v) != 7:
        raise ValidationError(f"expected 7 unconstrained components, got {len(v)}")
    values = [0.0] * 7
    log_jac = 0.0
    for i in _LOG_IDX:
        x = min(max(v[i], -_EXP_MAX), _EXP_MAX)
        values[i] = math.exp(x)
        log_jac += x
    for i in _LOGIT_IDX:
        x = v[i]
        values[i] = _logistic(x)
        # log(sigma(x) * (1 - sigma(x))), stable for large |x|
        log_jac += -abs(x) - 2.0 * math.log1p(math.exp(-abs(x)))
    return EpidemicParams(*values), log_jac
