"""Bayesian SIRTD model: priors, negative binomial likelihood, posterior.

Cumulative deaths are modelled as ``NB2(D(t), 1/phi_deaths)`` and daily
symptom tweets as ``NB2(lambda_tweets * I(t), 1/phi_tweets)``, where
``NB2(mu, r)`` has mean ``mu`` and variance ``mu + mu**2 / r``. Because the
dispersion passed is ``1/phi``, a *larger* ``phi`` means *more*
over-dispersion. Keep it that way: the stored chains and the priors on
``phi`` assume this convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import special

from .core import (
    COMPARTMENTS,
    EpidemicParams,
    ObservedData,
    PriorConfig,
    SirtdError,
    from_unconstrained,
)
from .ode import _A, _C, _E, _P, MaxStepsExceeded, NonFiniteState, SolverConfig, solve_sirtd_array
from .ode import _dopri_loop, _sirtd_rhs_nb

MEAN_FLOOR = 1e-10
CHANNELS = ("deaths", "tweets") + COMPARTMENTS

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(SirtdError, ValueError):
    pass


class LikelihoodRejection(SirtdError):
    """The ODE solve failed; the likelihood is treated as ``log_value``."""

    def __init__(self, message, log_value=-math.inf):
        super().__init__(message)
        self.log_value = log_value


def nb2_log_pmf(y, mu, disp):
    """Log-pmf of the mean/dispersion negative binomial.

    ``log Γ(y+r) - log Γ(r) - log Γ(y+1) + r log(r/(mu+r)) + y log(mu/(mu+r))``
    with ``r = disp``. The gamma-function ratio is evaluated as
    ``-log(y+r) - log B(r, y+1)``, which stays accurate for large ``r``.
    Broadcasts over array arguments.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    disp = np.asarray(disp, dtype=float)
    if np.any(~(mu > 0)) or np.any(~(disp > 0)):
        raise DomainError("mu and disp must be > 0")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError("y must be a non-negative integer")
    out = _nb2_log_pmf(y, mu, disp)
    return out[()] if out.ndim == 0 else out


def _nb2_log_pmf(y, mu, disp):
    log_mu_r = np.log(mu + disp)
    out = (
        -np.log(y + disp)
        - special.betaln(disp, y + 1.0)
        - disp * np.log1p(mu / disp)
        + special.xlogy(y, mu)
        - y * log_mu_r
    )
    return np.asarray(out)


def _half_normal_logpdf(x, mu, sigma):
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - _HALF_LOG_2PI - special.log_ndtr(mu / sigma)


def _unit_truncated_normal_logpdf(x, mu, sigma):
    mass = special.ndtr((1.0 - mu) / sigma) - special.ndtr(-mu / sigma)
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - _HALF_LOG_2PI - math.log(mass)


def _beta_logpdf(x, a, b):
    return float(special.xlogy(a - 1.0, x) + special.xlog1py(b - 1.0, -x) - special.betaln(a, b))


def _exponential_logpdf(x, rate):
    return math.log(rate) - rate * x


def log_prior(params: EpidemicParams, priors: PriorConfig) -> float:
    lp = _half_normal_logpdf(params.beta, priors.mu_beta, priors.sigma_beta)
    if priors.omega_family == "beta":
        lp += _beta_logpdf(params.omega, priors.alpha_omega, priors.beta_omega)
    else:
        lp += _unit_truncated_normal_logpdf(params.omega, priors.mu_omega, priors.sigma_omega)
    lp += _beta_logpdf(params.lambda_tweets, priors.alpha_lambda, priors.beta_lambda)
    lp += _half_normal_logpdf(params.d_I, priors.mu_dI, priors.sigma_dI)
    lp += _half_normal_logpdf(params.d_T, priors.mu_dT, priors.sigma_dT)
    lp += _exponential_logpdf(params.phi_deaths, priors.rate_phi)
    lp += _exponential_logpdf(params.phi_tweets, priors.rate_phi_tweets)
    return float(lp)


@dataclass(frozen=True)
class FitContext:
    observed: ObservedData
    priors: PriorConfig = field(default_factory=PriorConfig)
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)

    def solve(self, params: EpidemicParams, days=None) -> np.ndarray:
        """ODE states on ``days`` (default: the observation days), shape ``(n_days, 5)``."""
        obs = self.observed
        days = obs.days if days is None else days
        return solve_sirtd_array(params, obs.y0.as_array(), days, obs.N, self.solver_cfg, t0=0.0)


def observation_means(params: EpidemicParams, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Floored NB means for the death and tweet channels."""
    deaths = np.maximum(states[:, 4], MEAN_FLOOR)
    tweets = np.maximum(states[:, 1] * params.lambda_tweets, MEAN_FLOOR)
    return deaths, tweets


def log_likelihood(params: EpidemicParams, ctx: FitContext) -> float:
    """Sum of death and tweet log-pmfs along the ODE solution.

    Raises
    ------
    LikelihoodRejection
        If the ODE solver fails; ``log_value`` is ``-inf``.
    """
    try:
        states = ctx.solve(params)
    except (MaxStepsExceeded, NonFiniteState) as exc:
        raise LikelihoodRejection(f"ODE solve failed: {exc}") from exc
    mu_deaths, mu_tweets = observation_means(params, states)
    obs = ctx.observed
    ll = _nb2_log_pmf(obs.cumulative_deaths, mu_deaths, 1.0 / params.phi_deaths).sum()
    ll += _nb2_log_pmf(obs.tweet_counts, mu_tweets, 1.0 / params.phi_tweets).sum()
    return float(ll)


def log_posterior_unconstrained(v, ctx: FitContext) -> float:
    params, log_jac = from_unconstrained(v)
    try:
        ll = log_likelihood(params, ctx)
    except LikelihoodRejection as exc:
        return exc.log_value
    lp = log_prior(params, ctx.priors) + ll + log_jac
    return lp if math.isfinite(lp) else -math.inf


def _prior_constants(priors: PriorConfig) -> np.ndarray:
    """Hyperparameters plus their log-normalizers, packed for the fused kernel."""
    omega_beta = priors.omega_family == "beta"
    omega_mass = special.ndtr((1.0 - priors.mu_omega) / priors.sigma_omega) - special.ndtr(
        -priors.mu_omega / priors.sigma_omega)
    return np.array([
        priors.mu_beta, priors.sigma_beta, special.log_ndtr(priors.mu_beta / priors.sigma_beta),
        1.0 if omega_beta else 0.0,
        priors.mu_omega, priors.sigma_omega, math.log(omega_mass),
        priors.alpha_omega, priors.beta_omega, special.betaln(priors.alpha_omega, priors.beta_omega),
        priors.alpha_lambda, priors.beta_lambda, special.betaln(priors.alpha_lambda, priors.beta_lambda),
        priors.mu_dI, priors.sigma_dI, special.log_ndtr(priors.mu_dI / priors.sigma_dI),
        priors.mu_dT, priors.sigma_dT, special.log_ndtr(priors.mu_dT / priors.sigma_dT),
        priors.rate_phi, priors.rate_phi_tweets,
    ])


@numba.njit(cache=True)
def _normal_kernel(x, mu, sigma, log_norm):
    z = (x - mu) / sigma
    return -0.5 * z * z - math.log(sigma) - 0.9189385332046727 - log_norm


@numba.njit(cache=True)
def _beta_kernel(x, a, b, log_beta_fn):
    lp = -log_beta_fn
    if a != 1.0:
        if x <= 0.0:
            return -math.inf if a > 1.0 else math.inf
        lp += (a - 1.0) * math.log(x)
    if b != 1.0:
        if x >= 1.0:
            return -math.inf if b > 1.0 else math.inf
        lp += (b - 1.0) * math.log1p(-x)
    return lp


@numba.njit(cache=True)
def _nb_sum(ys, mus, r):
    total = 0.0
    lg_r = math.lgamma(r)
    for i in range(ys.size):
        y = ys[i]
        mu = max(mus[i], 1e-10)
        total += (math.lgamma(y + r) - lg_r - math.lgamma(y + 1.0)
                  - r * math.log1p(mu / r) + y * (math.log(mu) - math.log(mu + r)))
    return total


@numba.njit(cache=True)
def _fused_log_posterior(v, hyper, y0, N, ts, rtol, atol, max_steps, deaths, tweets, A, C, E, P):
    x = np.empty(7)
    log_jac = 0.0
    for i in (0, 3, 4, 5, 6):
        z = min(max(v[i], -709.0), 709.0)
        x[i] = math.exp(z)
        log_jac += z
    for i in (1, 2):
        z = v[i]
        if z >= 0:
            x[i] = 1.0 / (1.0 + math.exp(-z))
        else:
            e = math.exp(z)
            x[i] = e / (1.0 + e)
        log_jac += -abs(z) - 2.0 * math.log1p(math.exp(-abs(z)))
    beta, omega, lam, d_I, d_T, phi_d, phi_t = x[0], x[1], x[2], x[3], x[4], x[5], x[6]

    lp = _normal_kernel(beta, hyper[0], hyper[1], hyper[2])
    if hyper[3] == 1.0:
        lp += _beta_kernel(omega, hyper[7], hyper[8], hyper[9])
    else:
        lp += _normal_kernel(omega, hyper[4], hyper[5], hyper[6])
    lp += _beta_kernel(lam, hyper[10], hyper[11], hyper[12])
    lp += _normal_kernel(d_I, hyper[13], hyper[14], hyper[15])
    lp += _normal_kernel(d_T, hyper[16], hyper[17], hyper[18])
    lp += math.log(hyper[19]) - hyper[19] * phi_d
    lp += math.log(hyper[20]) - hyper[20] * phi_t

    args = np.array([beta, omega, d_I, d_T, N])
    status, out, _ = _dopri_loop(_sirtd_rhs_nb, y0, 0.0, ts, rtol, atol, max_steps, True, args, A, C, E, P)
    if status != 0:
        return -math.inf
    ll = _nb_sum(deaths, out[:, 4], 1.0 / phi_d) + _nb_sum(tweets, out[:, 1] * lam, 1.0 / phi_t)
    total = lp + ll + log_jac
    if not math.isfinite(total):
        return -math.inf
    return total


class Posterior:
    """Log-posterior on the unconstrained scale; the MCMC target.

    Evaluates the same density as :func:`log_posterior_unconstrained` in a
    single compiled call (gamma ratios via ``lgamma`` rather than
    ``betaln``, agreeing to ~1e-9 relative). Picklable.
    """

    def __init__(self, ctx: FitContext):
        self.ctx = ctx
        obs = ctx.observed
        self._hyper = _prior_constants(ctx.priors)
        self._y0 = np.ascontiguousarray(obs.y0.as_array())
        self._ts = np.ascontiguousarray(obs.days, dtype=float)
        self._deaths = obs.cumulative_deaths.astype(float)
        self._tweets = obs.tweet_counts.astype(float)
        cfg = ctx.solver_cfg
        self._solver = (cfg.rtol, cfg.atol, cfg.max_steps)

    def __call__(self, v) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (7,) or not np.all(np.isfinite(v)):
            return -math.inf
        rtol, atol, max_steps = self._solver
        return _fused_log_posterior(v, self._hyper, self._y0, self.ctx.observed.N, self._ts, rtol, atol,
                                    max_steps, self._deaths, self._tweets, _A, _C, _E, _P)


def simulate_observations(params: EpidemicParams, y0, N, days, seed=0,
                          solver_cfg: SolverConfig | None = None) -> ObservedData:
    """Draw deaths and tweets from the model itself at ``params``.

    The returned series are *not* monotone (deaths are independent NB draws
    around ``D(t)``), so ``require_monotone`` is off.
    """
    solver_cfg = solver_cfg or SolverConfig()
    days = np.asarray(days, dtype=float)
    rng = np.random.default_rng(seed)
    states = solve_sirtd_array(params, y0.as_array(), days, N, solver_cfg, t0=0.0)
    mu_deaths, mu_tweets = observation_means(params, states)
    deaths = _nb2_sample(rng, mu_deaths, 1.0 / params.phi_deaths)
    tweets = _nb2_sample(rng, mu_tweets, 1.0 / params.phi_tweets)
    return ObservedData(days, deaths, tweets, N, y0, require_monotone=False)


def _nb2_sample(rng, mu, disp):
    return rng.negative_binomial(disp, disp / (disp + np.asarray(mu)))


@dataclass(frozen=True)
class PredictiveTable:
    """Per-day posterior predictive summaries.

    ``mean``, ``q5`` and ``q95`` have shape ``(len(CHANNELS), n_days)``.
    For ``deaths``/``tweets`` the mean is the average ODE mean curve and
    the band comes from negative binomial replicates; for compartments both
    come from the ODE curves. Bands are widened where needed so that
    ``q5 <= mean <= q95`` holds on every day.
    """

    days: np.ndarray
    mean: np.ndarray
    q5: np.ndarray
    q95: np.ndarray
    n_draws: int
    n_skipped: int

    def channel(self, name: str) -> dict:
        i = CHANNELS.index(name)
        return {"mean": self.mean[i], "q5": self.q5[i], "q95": self.q95[i]}

    def rows(self):
        for i, name in enumerate(CHANNELS):
            for j, day in enumerate(self.days):
                yield day, name, self.mean[i, j], self.q5[i, j], self.q95[i, j]


def posterior_predictive(draws, ctx: FitContext, seed=0, replicates_per_draw: int = 1,
                         days=None) -> PredictiveTable:
    """Posterior predictive bands on the observation days.

    Parameters
    ----------
    draws : ChainDraws or array_like
        Posterior draws in constrained space, ``(n, 7)`` in parameter order.
    ctx : FitContext
    seed : int
        Seed for the negative binomial replicates.
    replicates_per_draw : int
        Observation replicates sampled per retained draw.
    days : array_like, optional
        Output grid, measured from the initial state at day 0; defaults to
        the observation days. May extend past the data for forecasting.
    """
    values = draws.pooled() if hasattr(draws, "pooled") else np.asarray(draws, dtype=float)
    values = np.atleast_2d(values)
    if values.shape[0] == 0:
        raise DomainError("posterior_predictive needs at least one draw")
    days = np.asarray(ctx.observed.days if days is None else days, dtype=float)
    rng = np.random.default_rng(seed)
    curves, reps = [], []
    skipped = 0
    for row in values:
        params = EpidemicParams.from_array(row)
        try:
            states = ctx.solve(params, days)
        except (MaxStepsExceeded, NonFiniteState):
            skipped += 1
            continue
        mu_deaths, mu_tweets = observation_means(params, states)
        for _ in range(replicates_per_draw):
            reps.append(np.stack([
                _nb2_sample(rng, mu_deaths, 1.0 / params.phi_deaths),
                _nb2_sample(rng, mu_tweets, 1.0 / params.phi_tweets),
            ]))
        curves.append(np.vstack([states[:, 4], states[:, 1] * params.lambda_tweets, states.T]))
    if not curves:
        raise LikelihoodRejection(f"all {skipped} draws failed to solve")
    curves = np.asarray(curves)  # (n_ok, 7, n_days)
    reps = np.asarray(reps, dtype=float)  # (n_ok * replicates, 2, n_days)

    mean = curves.mean(axis=0)
    q5 = np.empty_like(mean)
    q95 = np.empty_like(mean)
    q5[:2], q95[:2] = np.quantile(reps, [0.05, 0.95], axis=0)
    q5[2:], q95[2:] = np.quantile(curves[:, 2:], [0.05, 0.95], axis=0)
    q5 = np.minimum(q5, mean)
    q95 = np.maximum(q95, mean)
    return PredictiveTable(days, mean, q5, q95, len(curves), skipped)
