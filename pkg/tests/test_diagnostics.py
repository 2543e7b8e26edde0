import math

import numpy as np
import pytest

from sirtd.core import PARAM_NAMES, ValidationError
from sirtd.diagnostics import (MAD_SCALE, SUMMARY_COLUMNS, DegenerateChains, ess_bulk, ess_tail, split_rhat,
                               summarize)
from sirtd.mcmc import ChainDraws


def _ar1(rng, rho, n_chains, n):
    x = np.empty((n_chains, n))
    x[:, 0] = rng.normal(size=n_chains) / math.sqrt(1 - rho ** 2)
    eps = rng.normal(size=(n_chains, n))
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + eps[:, t]
    return x


@pytest.mark.parametrize("seed", range(5))
def test_iid_chains(seed):
    x = np.random.default_rng(seed).normal(size=(4, 1000))
    assert 0.99 <= split_rhat(x) <= 1.01
    assert 3200 <= ess_bulk(x) <= 4800
    assert 3000 <= ess_tail(x) <= 5000


def test_separated_chains_flagged():
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
    assert split_rhat(x) > 2


def test_separated_chains_reach_rank_normalised_ceiling():
    # With complete separation the rank-normalised draws are the two halves of a normal
    # distribution: within-chain variance 1 - 2/pi, half-chain means +-sqrt(2/pi).
    rng = np.random.default_rng(0)
    x = np.vstack([rng.normal(0, 1, 1000), rng.normal(10, 1, 1000)])
    within = 1 - 2 / math.pi
    between = 4 * (2 / math.pi) / 3
    ceiling = math.sqrt((within + between) / within)
    assert split_rhat(x) == pytest.approx(ceiling, abs=0.01)
    assert split_rhat(x) > 1.5


@pytest.mark.parametrize("seed", range(3))
def test_ar1_ess(seed):
    rho, m, n = 0.9, 4, 1000
    x = _ar1(np.random.default_rng(seed), rho, m, n)
    expected = m * n * (1 - rho) / (1 + rho)
    assert ess_bulk(x) == pytest.approx(expected, rel=0.3)


def test_degenerate_chains():
    x = np.full((4, 100), 3.0)
    for fn in (split_rhat, ess_bulk, ess_tail):
        with pytest.raises(DegenerateChains):
            fn(x)


def test_input_validation():
    with pytest.raises(ValidationError):
        split_rhat(np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        ess_bulk(np.array([[0.0, 1.0, np.nan, 2.0]]))
    with pytest.raises(ValidationError):
        split_rhat(np.zeros((2, 2, 5)))


def test_monotone_transform_invariance():
    x = _ar1(np.random.default_rng(1), 0.5, 4, 500)
    for f in (np.exp, lambda v: v ** 3, lambda v: np.arctan(v) * 7 + 2):
        assert split_rhat(f(x)) == pytest.approx(split_rhat(x), abs=1e-12)
        assert ess_bulk(f(x)) == pytest.approx(ess_bulk(x), rel=1e-12)


def test_single_chain_allowed():
    x = np.random.default_rng(2).normal(size=(1, 1000))
    assert 0.99 <= split_rhat(x) <= 1.01


def test_diagnostics_do_not_mutate():
    x = np.random.default_rng(3).normal(size=(4, 100))
    before = x.copy()
    split_rhat(x), ess_bulk(x), ess_tail(x)
    assert np.array_equal(x, before)


# -- summaries -----------------------------------------------------------------------

def test_summary_columns_and_order():
    draws = ChainDraws(np.random.default_rng(0).uniform(0.1, 0.9, size=(4, 100, 7)))
    summary = summarize(draws)
    assert SUMMARY_COLUMNS == ("mean", "median", "sd", "mad", "q5", "q95", "rhat", "ess_bulk", "ess_tail")
    assert summary.columns == ("variable",) + SUMMARY_COLUMNS
    assert [row.variable for row in summary] == list(PARAM_NAMES)
    assert summary.to_text().splitlines()[0].split() == ["variable", *SUMMARY_COLUMNS]
    for row in summary:
        assert row.q5 <= row.median <= row.q95
        assert row.sd >= 0 and row.mad >= 0 and row.ess_bulk > 0 and row.ess_tail > 0


def test_summary_statistics_match_numpy():
    rng = np.random.default_rng(4)
    values = rng.gamma(2.0, size=(4, 250, 7))
    draws = ChainDraws(values)
    before = draws.draws.copy()
    row = summarize(draws)["d_I"]
    pooled = values[:, :, 3].ravel()
    assert row.mean == pytest.approx(pooled.mean(), abs=1e-12)
    assert row.median == np.median(pooled)
    assert row.sd == pytest.approx(pooled.std(ddof=1), rel=1e-12)
    assert row.mad == pytest.approx(MAD_SCALE * np.median(np.abs(pooled - np.median(pooled))), rel=1e-12)
    # linear interpolation between order statistics
    s = np.sort(pooled)
    h = 0.05 * (s.size - 1)
    assert row.q5 == pytest.approx(s[int(h)] + (h - int(h)) * (s[int(h) + 1] - s[int(h)]), rel=1e-12)
    assert np.array_equal(draws.draws, before)


def test_summary_of_single_point():
    point = np.arange(1.0, 8.0) / 10
    row = summarize(ChainDraws(point.reshape(1, 1, 7)))["omega"]
    assert row.mean == row.median == 0.2
    assert row.sd == 0 and row.mad == 0
    assert math.isnan(row.rhat) and math.isnan(row.ess_bulk)


def test_summary_uniform_quantiles():
    u = np.random.default_rng(5).uniform(size=(4, 2500, 7))
    row = summarize(ChainDraws(u))["beta"]
    assert row.q5 == pytest.approx(0.05, abs=0.01)
    assert row.q95 == pytest.approx(0.95, abs=0.01)


def test_summary_lookup():
    summary = summarize(ChainDraws(np.random.default_rng(6).normal(size=(2, 50, 7))))
    assert summary["beta"] is summary.rows[0]
    assert len(summary) == 7
    with pytest.raises(KeyError):
        summary["gamma"]
