"""Convergence diagnostics and posterior summary tables.

R-hat and bulk ESS are computed on rank-normalized split chains; tail ESS
is the smaller of the ESS of the 5% and 95% quantile indicators. See
Vehtari, Gelman, Simpson, Carpenter & Bürkner (2021), "Rank-normalization,
folding, and localization: an improved R-hat", Bayesian Analysis 16(2).
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import special, stats

from .core import SirtdError, ValidationError

MAD_SCALE = 1.4826
SUMMARY_COLUMNS = ("mean", "median", "sd", "mad", "q5", "q95", "rhat", "ess_bulk", "ess_tail")


class DegenerateChains(SirtdError):
    """All draws are identical, so the diagnostic is undefined."""


def _as_chains(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValidationError("chains must be a (n_chains, n_draws) array")
    if x.shape[1] < 4:
        raise ValidationError("need at least 4 draws per chain")
    if not np.all(np.isfinite(x)):
        raise ValidationError("draws must be finite")
    if np.ptp(x) == 0:
        raise DegenerateChains("all draws are identical")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, -half:]])


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Normal scores of the pooled ranks (average ranks for ties)."""
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((ranks - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    n = x.shape[1]
    within = x.var(axis=1, ddof=1).mean()
    between = x.mean(axis=1).var(ddof=1) if x.shape[0] > 1 else 0.0
    if within == 0:
        return math.inf
    var_plus = (n - 1) / n * within + between
    return math.sqrt(var_plus / within)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row, via FFT."""
    n = x.shape[1]
    centred = x - x.mean(axis=1, keepdims=True)
    size = 2 ** math.ceil(math.log2(2 * n))
    f = np.fft.rfft(centred, n=size, axis=1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return math.nan
    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = rho_odd

    # Geyer's initial positive sequence over pairs of lags
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even

    # ... made monotone
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def split_rhat(chains) -> float:
    """Rank-normalized split R-hat of one parameter.

    Parameters
    ----------
    chains : array_like
        ``(n_chains, n_draws)`` draws, at least 4 per chain.

    Raises
    ------
    DegenerateChains
        If every draw has the same value.
    """
    x = _as_chains(chains)
    return _rhat(rank_normalize(_split(x)))


def ess_bulk(chains) -> float:
    x = _as_chains(chains)
    return _ess(rank_normalize(_split(x)))


def ess_tail(chains) -> float:
    """Minimum of the ESS of the 5% and 95% quantile indicators."""
    x = _as_chains(chains)
    q5, q95 = np.quantile(x, [0.05, 0.95])
    values = [_ess(_split((x <= q).astype(float))) for q in (q5, q95)]
    return min(values)


@dataclass(frozen=True)
class SummaryRow:
    variable: str
    mean: float
    median: float
    sd: float
    mad: float
    q5: float
    q95: float
    rhat: float
    ess_bulk: float
    ess_tail: float


@dataclass(frozen=True)
class PosteriorSummary:
    rows: tuple

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name: str) -> SummaryRow:
        for row in self.rows:
            if row.variable == name:
                return row
        raise KeyError(name)

    @property
    def columns(self) -> tuple:
        return tuple(f.name for f in fields(SummaryRow))

    def to_text(self) -> str:
        header = ("variable",) + SUMMARY_COLUMNS
        body = [[row.variable] + [_fmt(v) for v in astuple(row)[1:]] for row in self.rows]
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    if not math.isfinite(v):
        return "nan" if math.isnan(v) else str(v)
    return f"{v:.2f}" if abs(v) >= 100 else f"{v:.4g}" if abs(v) < 0.01 and v != 0 else f"{v:.3f}"


def _diagnostic(fn, chains) -> float:
    try:
        return float(fn(chains))
    except (DegenerateChains, ValidationError):
        return math.nan


def summarize(draws) -> PosteriorSummary:
    """Table-style summary per parameter, in the draws' parameter order.

    Location and spread statistics use the pooled draws; quantiles use
    linear interpolation of order statistics and ``mad`` is scaled by
    1.4826. R-hat/ESS are ``nan`` when undefined (constant draws or fewer
    than four draws per chain).
    """
    rows = []
    for i, name in enumerate(draws.names):
        chains = draws.draws[:, :, i]
        pooled = chains.reshape(-1)
        median = float(np.median(pooled))
        q5, q95 = np.quantile(pooled, [0.05, 0.95])
        rows.append(SummaryRow(
            variable=name,
            mean=float(pooled.mean()),
            median=median,
            sd=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
            mad=float(MAD_SCALE * np.median(np.abs(pooled - median))),
            q5=float(q5),
            q95=float(q95),
            rhat=_diagnostic(split_rhat, chains),
            ess_bulk=_diagnostic(ess_bulk, chains),
            ess_tail=_diagnostic(ess_tail, chains),
        ))
    return PosteriorSummary(tuple(rows))
