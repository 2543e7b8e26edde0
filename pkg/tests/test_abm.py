import dataclasses
import time

import numpy as np
import pytest

from sirtd.abm import SIM_COLUMNS, InvalidConfig, InvariantViolation, SimConfig, SimOutput, simulate

BASE = SimConfig(N=10_000, t=70, C=10, beta=0.3, omega=0.1, lambda_=0.2, d_I=7, d_T=10, I0=10)


@pytest.fixture(scope="module")
def runs():
    """200 replicate runs of the simulated-data configuration."""
    return [simulate(dataclasses.replace(BASE, seed=s)).table for s in range(200)]


def _flows(table):
    """Per-day transition counts recovered from consecutive rows."""
    prev, cur = table[:-1], table[1:]
    deaths = cur[:, 5] - prev[:, 5]
    new_T = cur[:, 4] - prev[:, 4] + deaths
    new_R = cur[:, 3] - prev[:, 3]
    return {"infections": prev[:, 1] - cur[:, 1], "exits": new_T + new_R, "new_T": new_T, "deaths": deaths,
            "S_prev": prev[:, 1], "I_prev": prev[:, 2], "T_prev": prev[:, 4], "tweets": cur[:, 6]}


def _zscore(observed, mean, var):
    return (observed.sum() - mean.sum()) / np.sqrt(var.sum())


def test_simulated_data_run_conserves_population():
    start = time.perf_counter()
    out = simulate(BASE)
    elapsed = time.perf_counter() - start
    assert out.table.shape == (70, 7)
    assert np.all(out.table[:, 1:6].sum(axis=1) == 10_000)
    assert out.column("day").tolist() == list(range(70))
    assert elapsed < 5.0


def test_row_zero_is_initial_state():
    out = simulate(BASE)
    assert out.table[0].tolist() == [0, 9990, 10, 0, 0, 0, 0]


def test_invariants_hold(runs):
    for table in runs[:20]:
        assert np.all(np.diff(table[:, 5]) >= 0)
        assert np.all(table[1:, 6] <= table[:-1, 2])
        assert np.all(table >= 0)


def test_same_seed_same_output():
    assert simulate(BASE) == simulate(BASE)
    assert simulate(BASE) != simulate(dataclasses.replace(BASE, seed=1))


def test_no_transmission_when_beta_zero():
    out = simulate(dataclasses.replace(BASE, beta=0.0))
    assert np.all(out.column("S") == 9990)


def test_omega_extremes():
    none = simulate(dataclasses.replace(BASE, omega=0.0))
    assert np.all(none.column("T") == 0) and np.all(none.column("D") == 0)
    all_ = simulate(dataclasses.replace(BASE, omega=1.0))
    assert np.all(all_.column("R") == 0)


def test_lambda_extremes():
    assert np.all(simulate(dataclasses.replace(BASE, lambda_=0.0)).column("tweets") == 0)
    out = simulate(dataclasses.replace(BASE, lambda_=1.0))
    assert np.array_equal(out.column("tweets")[1:], out.column("I")[:-1])


def test_everyone_infected_initially():
    out = simulate(dataclasses.replace(BASE, N=50, I0=50, t=5))
    assert np.all(out.column("S") == 0)


def test_unit_dwell_times_empty_compartments_each_day():
    out = simulate(dataclasses.replace(BASE, d_I=1.0, d_T=1.0, beta=0.0, omega=0.5, t=3))
    # everyone infectious at day 0 leaves on day 1; everyone terminal on day 1 dies on day 2
    assert out.column("I")[1] == 0
    assert out.column("T")[2] == 0
    assert out.column("D")[2] == out.column("T")[1]


@pytest.mark.parametrize("changes", [
    {"I0": 0}, {"I0": 10_001}, {"C": 0}, {"beta": 11.0}, {"beta": -0.1}, {"omega": 1.1},
    {"lambda_": -0.2}, {"d_I": 0.5}, {"d_T": 0.0}, {"t": 0}, {"seed": -1}, {"N": 2.5},
    {"infection_mode": "other"}, {"infection_mode": "literal", "beta": 1.5},
])
def test_config_validation(changes):
    with pytest.raises(InvalidConfig):
        dataclasses.replace(BASE, **changes)


def test_infection_modes():
    assert BASE.contact_probability == pytest.approx(0.03)
    literal = dataclasses.replace(BASE, infection_mode="literal")
    assert literal.contact_probability == pytest.approx(0.3)
    # literal mode transmits ten times as readily per contact: the epidemic is much faster
    fast = simulate(literal)
    assert fast.column("S")[20] < simulate(BASE).column("S")[20]


def test_tweets_match_binomial_expectation(runs):
    flows = [_flows(t) for t in runs]
    tweets = np.concatenate([f["tweets"] for f in flows])
    I_prev = np.concatenate([f["I_prev"] for f in flows])
    lam = BASE.lambda_
    assert abs(_zscore(tweets, lam * I_prev, lam * (1 - lam) * I_prev)) < 3


def test_daily_tweets_per_day(runs):
    # the same check day by day, pooling seeds: at most a few days may exceed 3 standard errors
    flows = [_flows(t) for t in runs]
    tweets = np.stack([f["tweets"] for f in flows])
    I_prev = np.stack([f["I_prev"] for f in flows])
    lam = BASE.lambda_
    se = np.sqrt((lam * (1 - lam) * I_prev).sum(axis=0))
    z = (tweets.sum(axis=0) - lam * I_prev.sum(axis=0)) / np.where(se > 0, se, 1)
    assert np.mean(np.abs(z) > 3) <= 0.05


def test_omega_routing_matches_binomial_expectation(runs):
    flows = [_flows(t) for t in runs]
    exits = np.concatenate([f["exits"] for f in flows])
    new_T = np.concatenate([f["new_T"] for f in flows])
    w = BASE.omega
    assert abs(_zscore(new_T, w * exits, w * (1 - w) * exits)) < 3


def test_exit_and_death_rates(runs):
    flows = [_flows(t) for t in runs]
    I_prev = np.concatenate([f["I_prev"] for f in flows])
    exits = np.concatenate([f["exits"] for f in flows])
    p = 1 / BASE.d_I
    assert abs(_zscore(exits, p * I_prev, p * (1 - p) * I_prev)) < 3
    T_prev = np.concatenate([f["T_prev"] for f in flows])
    deaths = np.concatenate([f["deaths"] for f in flows])
    q = 1 / BASE.d_T
    assert abs(_zscore(deaths, q * T_prev, q * (1 - q) * T_prev)) < 3


def test_infections_match_contact_process(runs):
    # a susceptible escapes all C*I contacts, each hitting it with probability (beta/C)/N
    flows = [_flows(t) for t in runs]
    S_prev = np.concatenate([f["S_prev"] for f in flows]).astype(float)
    I_prev = np.concatenate([f["I_prev"] for f in flows]).astype(float)
    infections = np.concatenate([f["infections"] for f in flows])
    q = 1 - (1 - BASE.contact_probability / BASE.N) ** (BASE.C * I_prev)
    assert abs(_zscore(infections, S_prev * q, S_prev * q * (1 - q))) < 3


def test_sim_output_validation():
    good = np.array([[0, 9, 1, 0, 0, 0, 0], [1, 8, 2, 0, 0, 0, 1]])
    assert SimOutput(good).N == 10
    bad_sum = good.copy()
    bad_sum[1, 1] = 9
    with pytest.raises(InvariantViolation):
        SimOutput(bad_sum)
    bad_d = np.array([[0, 9, 0, 0, 0, 1, 0], [1, 10, 0, 0, 0, 0, 0]])
    with pytest.raises(InvariantViolation):
        SimOutput(bad_d)
    too_many_tweets = good.copy()
    too_many_tweets[1, 6] = 2
    with pytest.raises(InvariantViolation):
        SimOutput(too_many_tweets)
    with pytest.raises(InvariantViolation):
        SimOutput(np.zeros((2, 6)))


def test_columns():
    out = simulate(dataclasses.replace(BASE, t=5))
    assert SIM_COLUMNS == ("day", "S", "I", "R", "T", "D", "tweets")
    assert out.column("tweets").tolist() == out.table[:, 6].tolist()
    with pytest.raises(ValueError):
        out.column("X")
