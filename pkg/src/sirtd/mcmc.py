"""Adaptive random-walk Metropolis over the 7-d unconstrained posterior.

One sampler *iteration* is a sweep of ``steps_per_iteration`` Metropolis
moves; the state at the end of the sweep is what gets stored. During
warmup every move updates

* a global log proposal scale by Robbins-Monro towards ``target_accept``,
* running estimates of the mean and (co)variance of the chain,

both with learning rate ``(1 + k) ** -0.6`` where ``k`` counts moves.
After warmup the proposal is frozen. Chains are independent; chain ``c``
draws all its randomness from ``numpy.random.default_rng(chain_seeds[c])``.

Other transition kernels plug in through the ``runner`` argument of
:func:`sample`: a picklable ``runner(target, cfg, x0, seed, transform)``
returning the same dict as :func:`run_metropolis_chain`. A gradient-based
kernel (MALA, HMC) can get gradients of the ODE posterior from
:func:`finite_difference_gradient`, since the solver provides no
sensitivities.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import PARAM_NAMES, PriorConfig, SirtdError, ValidationError, from_unconstrained, to_unconstrained
from .core import EpidemicParams

DIM = len(PARAM_NAMES)
LEARNING_RATE_EXPONENT = 0.6
MAX_INIT_TRIES = 100


class InitializationError(SirtdError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_iterations: int = 2000
    n_warmup: int = 1000
    target_accept: float = 0.234
    seed: int = 0
    steps_per_iteration: int = 100
    full_covariance: bool = False

    def __post_init__(self):
        for name in ("n_chains", "n_iterations", "n_warmup", "seed", "steps_per_iteration"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValidationError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        if self.n_chains < 1:
            raise ValidationError("n_chains must be >= 1")
        if not 0 <= self.n_warmup < self.n_iterations:
            raise ValidationError("need 0 <= n_warmup < n_iterations")
        if self.steps_per_iteration < 1:
            raise ValidationError("steps_per_iteration must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")

    @property
    def n_draws(self) -> int:
        return self.n_iterations - self.n_warmup


def chain_seeds(seed: int, n_chains: int) -> list[int]:
    """Per-chain sampler seeds derived from ``(seed, chain_index)``."""
    return [int(np.random.SeedSequence([seed, c, 1]).generate_state(1, np.uint64)[0]) for c in range(n_chains)]


@dataclass(frozen=True)
class ChainDraws:
    """Post-warmup draws.

    ``draws`` is ``(n_chains, n_draws, 7)`` in constrained space (columns
    in ``PARAM_NAMES`` order); ``unconstrained`` holds the same states
    before the transform. ``scale_warmup_end``/``scale_final`` record the
    proposal standard deviations (or Cholesky factor with full covariance)
    when warmup ended and after the last iteration.
    """

    draws: np.ndarray
    unconstrained: np.ndarray | None = None
    accept_rate: np.ndarray | None = None
    warmup_accept_rate: np.ndarray | None = None
    chain_seeds: tuple = ()
    scale_warmup_end: np.ndarray | None = None
    scale_final: np.ndarray | None = None
    names: tuple = field(default=PARAM_NAMES)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim != 3 or draws.shape[2] != len(self.names) or draws.shape[1] == 0:
            raise ValidationError(f"draws must have shape (n_chains, n_draws, {len(self.names)}), got {draws.shape}")
        draws.flags.writeable = False
        object.__setattr__(self, "draws", draws)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    def param(self, name: str) -> np.ndarray:
        """``(n_chains, n_draws)`` draws of one parameter."""
        return self.draws[:, :, self.names.index(name)]


def constrain(v) -> np.ndarray:
    params, _ = from_unconstrained(v)
    return params.as_array()


def _proposal_factor(log_scale, cov, full):
    if full:
        return math.exp(log_scale) * np.linalg.cholesky(cov)
    return math.exp(log_scale) * np.sqrt(np.diag(cov) if cov.ndim == 2 else cov)


def finite_difference_gradient(target, v, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``target`` at ``v``.

    Costs ``2 * len(v)`` target evaluations. ``h`` is scaled by
    ``max(1, |v_i|)`` per coordinate.
    """
    v = np.asarray(v, dtype=float)
    grad = np.empty_like(v)
    for i in range(v.size):
        step = h * max(1.0, abs(v[i]))
        up, down = v.copy(), v.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (target(up) - target(down)) / (2.0 * step)
    return grad


def run_metropolis_chain(target, cfg: SamplerConfig, x0, seed, transform):
    """One adaptive random-walk Metropolis chain (the default runner).

    Returns a dict with ``raw`` and ``kept`` ``(n_draws, 7)`` arrays,
    ``accept_rate``, ``warmup_accept_rate``, ``scale_warmup_end`` and
    ``scale_final``.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=float)
    lp = target(x)
    if not math.isfinite(lp):
        raise InitializationError(f"target is not finite at the initial point {x0}")

    full = cfg.full_covariance
    log_scale = math.log(2.38 / math.sqrt(DIM))
    mean = x.copy()
    cov = np.eye(DIM) * 0.1 if full else np.full(DIM, 0.1)
    factor = _proposal_factor(log_scale, cov, full)

    n_keep = cfg.n_draws
    raw = np.empty((n_keep, DIM))
    kept = np.empty((n_keep, DIM))
    accepted_warm = accepted_post = 0
    k = 0
    scale_warmup_end = factor.copy()
    for it in range(cfg.n_iterations):
        warmup = it < cfg.n_warmup
        for _ in range(cfg.steps_per_iteration):
            z = rng.standard_normal(DIM)
            prop = x + (factor @ z if full else factor * z)
            lp_prop = target(prop)
            log_ratio = lp_prop - lp
            accept = math.log(rng.random()) < log_ratio
            if accept:
                x, lp = prop, lp_prop
            if warmup:
                accepted_warm += accept
                k += 1
                gamma = (1.0 + k) ** -LEARNING_RATE_EXPONENT
                alpha = math.exp(min(0.0, log_ratio)) if math.isfinite(log_ratio) else 0.0
                log_scale += gamma * (alpha - cfg.target_accept)
                delta = x - mean
                mean = mean + gamma * delta
                if full:
                    cov = cov + gamma * (np.outer(delta, delta) - cov)
                    cov = 0.5 * (cov + cov.T) + 1e-10 * np.eye(DIM)
                else:
                    cov = cov + gamma * (delta * delta - cov) + 0.0
                    cov = np.maximum(cov, 1e-12)
                factor = _proposal_factor(log_scale, cov, full)
            else:
                accepted_post += accept
        if it == cfg.n_warmup - 1:
            scale_warmup_end = factor.copy()
        if not warmup:
            j = it - cfg.n_warmup
            raw[j] = x
            kept[j] = transform(x)
    n_warm_moves = max(1, cfg.n_warmup * cfg.steps_per_iteration)
    n_post_moves = n_keep * cfg.steps_per_iteration
    return {
        "raw": raw,
        "kept": kept,
        "accept_rate": accepted_post / n_post_moves,
        "warmup_accept_rate": accepted_warm / n_warm_moves if cfg.n_warmup else float("nan"),
        "scale_warmup_end": scale_warmup_end,
        "scale_final": factor.copy(),
    }


def _run_chain_star(job):
    runner, *args = job
    return runner(*args)


def sample(target, cfg: SamplerConfig, init, redraw=None, seeds=None, transform=constrain,
           n_jobs: int = 1, runner=None) -> ChainDraws:
    """Run ``cfg.n_chains`` independent adaptive Metropolis chains.

    Parameters
    ----------
    target : callable
        Log-density on the 7-d unconstrained space; ``-inf`` rejects.
    cfg : SamplerConfig
    init : array_like
        ``(n_chains, 7)`` starting points.
    redraw : callable, optional
        ``redraw(rng) -> vector`` replacing an initial point at which the
        target is not finite; tried up to 100 times per chain.
    seeds : sequence of int, optional
        Per-chain seeds; defaults to ``chain_seeds(cfg.seed, n_chains)``.
    transform : callable
        Maps a stored unconstrained state to the reported draw.
    n_jobs : int
        Worker processes; results do not depend on it.
    runner : callable, optional
        Per-chain transition kernel, default :func:`run_metropolis_chain`.

    Raises
    ------
    InitializationError
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape != (cfg.n_chains, DIM):
        raise ValidationError(f"init must have shape ({cfg.n_chains}, {DIM}), got {init.shape}")
    seeds = list(seeds) if seeds is not None else chain_seeds(cfg.seed, cfg.n_chains)
    if len(seeds) != cfg.n_chains:
        raise ValidationError("need one seed per chain")

    starts = []
    for c in range(cfg.n_chains):
        x0 = init[c]
        if not math.isfinite(target(x0)):
            if redraw is None:
                raise InitializationError(f"chain {c}: target is -inf at the initial point")
            rng = np.random.default_rng([seeds[c], 0])
            for _ in range(MAX_INIT_TRIES):
                x0 = np.asarray(redraw(rng), dtype=float)
                if math.isfinite(target(x0)):
                    break
            else:
                raise InitializationError(f"chain {c}: no finite initial point after {MAX_INIT_TRIES} draws")
        starts.append(x0)

    runner = run_metropolis_chain if runner is None else runner
    jobs = [(runner, target, cfg, starts[c], seeds[c], transform) for c in range(cfg.n_chains)]
    if n_jobs > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, cfg.n_chains)) as pool:
            results = list(pool.map(_run_chain_star, jobs))
    else:
        results = [_run_chain_star(job) for job in jobs]

    return ChainDraws(
        draws=np.stack([r["kept"] for r in results]),
        unconstrained=np.stack([r["raw"] for r in results]),
        accept_rate=np.array([r["accept_rate"] for r in results]),
        warmup_accept_rate=np.array([r["warmup_accept_rate"] for r in results]),
        chain_seeds=tuple(seeds),
        scale_warmup_end=np.stack([r["scale_warmup_end"] for r in results]),
        scale_final=np.stack([r["scale_final"] for r in results]),
    )


def _draw_prior(priors: PriorConfig, rng) -> EpidemicParams:
    def half_normal(mu, sigma, upper=np.inf):
        a, b = (0.0 - mu) / sigma, (upper - mu) / sigma
        return float(stats.truncnorm.rvs(a, b, loc=mu, scale=sigma, random_state=rng))

    beta = half_normal(priors.mu_beta, priors.sigma_beta)
    if priors.omega_family == "beta":
        omega = rng.beta(priors.alpha_omega, priors.beta_omega)
    else:
        omega = half_normal(priors.mu_omega, priors.sigma_omega, upper=1.0)
    lam = rng.beta(priors.alpha_lambda, priors.beta_lambda)
    d_I = half_normal(priors.mu_dI, priors.sigma_dI)
    d_T = half_normal(priors.mu_dT, priors.sigma_dT)
    phi = rng.exponential(1.0 / priors.rate_phi)
    phi_t = rng.exponential(1.0 / priors.rate_phi_tweets)
    return EpidemicParams(beta, omega, lam, d_I, d_T, phi, phi_t)


def prior_redraw(priors: PriorConfig):
    """``redraw(rng)`` callable for :func:`sample` drawing from the prior."""
    def redraw(rng):
        return to_unconstrained(_draw_prior(priors, rng))
    return redraw


def init_from_prior(priors: PriorConfig, n_chains: int, seed: int, target=None) -> np.ndarray:
    """One unconstrained starting point per chain, drawn from the prior.

    With ``target`` given, draws where it is not finite are rejected and
    redrawn, at most 100 times per chain.
    """
    out = np.empty((n_chains, DIM))
    for c in range(n_chains):
        rng = np.random.default_rng([seed, c])
        for _ in range(MAX_INIT_TRIES):
            try:
                v = to_unconstrained(_draw_prior(priors, rng))
            except (ValidationError, ValueError):
                continue
            if np.all(np.isfinite(v)) and (target is None or math.isfinite(target(v))):
                out[c] = v
                break
        else:
            raise InitializationError(f"chain {c}: no valid prior draw after {MAX_INIT_TRIES} attempts")
    return out
