"""Agent-based SIRTD-with-tweets data-generating process.

Each agent carries a one-byte compartment code. A simulated day is a
synchronous update: every draw is made against the state at the start of
the day and all transitions are applied together at the end, so agents
infected today start transmitting tomorrow.

Per day, for every agent infectious at day start:

* it tweets with probability ``lambda_``;
* it leaves ``I`` with probability ``1/d_I``, going to ``T`` with
  probability ``omega`` and to ``R`` otherwise;
* it contacts ``C`` agents drawn uniformly with replacement from the whole
  population, and each susceptible contact is infected with probability
  ``beta / C`` (or ``beta`` with ``infection_mode="literal"``).

Every agent terminally ill at day start dies with probability ``1/d_T``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import SirtdError

S, I, R, T, D = range(5)
SIM_COLUMNS = ("day", "S", "I", "R", "T", "D", "tweets")


class InvalidConfig(SirtdError, ValueError):
    pass


class InvariantViolation(SirtdError, ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    N: int = 10_000
    t: int = 70
    C: int = 10
    beta: float = 0.3
    omega: float = 0.1
    lambda_: float = 0.2
    d_I: float = 7.0
    d_T: float = 10.0
    I0: int = 10
    seed: int = 0
    infection_mode: str = "per_contact"

    def __post_init__(self):
        for name in ("N", "t", "C", "I0", "seed"):
            value = getattr(self, name)
            if int(value) != value:
                raise InvalidConfig(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.N < 1 or self.t < 1:
            raise InvalidConfig("N and t must be >= 1")
        if not 0 < self.I0 <= self.N:
            raise InvalidConfig(f"I0 must satisfy 0 < I0 <= N, got I0={self.I0}, N={self.N}")
        if self.C < 1:
            raise InvalidConfig("C must be >= 1")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")
        if self.infection_mode not in ("per_contact", "literal"):
            raise InvalidConfig(f"infection_mode must be 'per_contact' or 'literal', got {self.infection_mode!r}")
        beta_max = float(self.C) if self.infection_mode == "per_contact" else 1.0
        if not 0.0 <= self.beta <= beta_max:
            raise InvalidConfig(f"beta must lie in [0, {beta_max:g}] for infection_mode={self.infection_mode!r}")
        for name in ("omega", "lambda_"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        for name in ("d_I", "d_T"):
            if not getattr(self, name) >= 1.0:
                raise InvalidConfig(f"{name} must be >= 1")

    @property
    def contact_probability(self) -> float:
        if self.infection_mode == "per_contact":
            return self.beta / self.C
        return self.beta

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimOutput:
    """Daily integer table with columns ``day, S, I, R, T, D, tweets``."""

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table)
        if table.ndim != 2 or table.shape[1] != 7 or table.shape[0] == 0:
            raise InvariantViolation(f"simulation table must have shape (n, 7), got {table.shape}")
        if not np.issubdtype(table.dtype, np.integer):
            if np.any(table != np.round(table)):
                raise InvariantViolation("simulation table must hold integers")
        table = table.astype(np.int64)
        if np.any(table < 0):
            raise InvariantViolation("simulation counts must be non-negative")
        if np.any(np.diff(table[:, 0]) <= 0):
            raise InvariantViolation("day column must be strictly increasing")
        totals = table[:, 1:6].sum(axis=1)
        bad = np.flatnonzero(totals != totals[0])
        if bad.size:
            row = int(bad[0])
            raise InvariantViolation(
                f"row for day {table[row, 0]} sums to {totals[row]}, expected {totals[0]}")
        if np.any(np.diff(table[:, 5]) < 0):
            raise InvariantViolation("D column must be non-decreasing")
        if np.any(table[1:, 6] > table[:-1, 2]):
            raise InvariantViolation("tweets exceed the infectious count at day start")
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    def __len__(self):
        return self.table.shape[0]

    def __eq__(self, other):
        return isinstance(other, SimOutput) and np.array_equal(self.table, other.table)

    @property
    def N(self) -> int:
        return int(self.table[0, 1:6].sum())

    def column(self, name: str) -> np.ndarray:
        return self.table[:, SIM_COLUMNS.index(name)]


def simulate(cfg: SimConfig) -> SimOutput:
    """Run the agent-based simulation; row 0 is the initial state."""
    rng = np.random.default_rng(cfg.seed)
    state = np.zeros(cfg.N, dtype=np.int8)
    state[rng.choice(cfg.N, size=cfg.I0, replace=False)] = I

    p_exit = 1.0 / cfg.d_I
    p_death = 1.0 / cfg.d_T
    p_contact = cfg.contact_probability

    table = np.zeros((cfg.t, 7), dtype=np.int64)
    table[0] = (0, cfg.N - cfg.I0, cfg.I0, 0, 0, 0, 0)
    for day in range(1, cfg.t):
        infectious = np.flatnonzero(state == I)
        terminal = np.flatnonzero(state == T)
        n_inf = infectious.size

        tweets = int(np.count_nonzero(rng.random(n_inf) < cfg.lambda_))

        leaving = infectious[rng.random(n_inf) < p_exit]
        to_terminal = rng.random(leaving.size) < cfg.omega

        targets = rng.integers(0, cfg.N, size=(n_inf, cfg.C))
        hits = targets[rng.random((n_inf, cfg.C)) < p_contact]
        newly_infected = hits[state[hits] == S]

        dying = terminal[rng.random(terminal.size) < p_death]

        state[newly_infected] = I
        state[leaving[to_terminal]] = T
        state[leaving[~to_terminal]] = R
        state[dying] = D

        counts = np.bincount(state, minlength=5)
        table[day, 0] = day
        table[day, 1:6] = counts
        table[day, 6] = tweets
    return SimOutput(table)
