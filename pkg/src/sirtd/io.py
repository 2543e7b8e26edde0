"""CSV formats, run configuration and atomic file output.

File formats (headers are exact):

* observed deaths   ``date,cumulative_deaths``
* observed tweets   ``date,symptom_tweet_count``
* confirmed cases   ``date,confirmed_cases`` (only used to build ``y0``)
* simulation        ``day,S,I,R,T,D,tweets``
* draws             ``chain,iteration,beta,omega,lambda_tweets,d_I,d_T,phi_deaths,phi_tweets``
* summary           ``variable,mean,median,sd,mad,q5,q95,rhat,ess_bulk,ess_tail``
* predictive        ``day,channel,mean,q5,q95``
* overlay           ``day,channel,observed,predicted_mean``

The configuration file is TOML; nested tables are flattened to dotted
keys, so ``[sim]\\nN = 10000`` and ``sim.N = 10000`` are equivalent.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .abm import SIM_COLUMNS, SimConfig, SimOutput
from .core import PARAM_NAMES, CompartmentState, ObservedData, PriorConfig, SirtdError, ValidationError
from .diagnostics import SUMMARY_COLUMNS, PosteriorSummary
from .mcmc import ChainDraws, SamplerConfig
from .ode import SolverConfig

DEATHS_HEADER = ("date", "cumulative_deaths")
TWEETS_HEADER = ("date", "symptom_tweet_count")
CONFIRMED_HEADER = ("date", "confirmed_cases")
DRAWS_HEADER = ("chain", "iteration") + PARAM_NAMES
SUMMARY_HEADER = ("variable",) + SUMMARY_COLUMNS
PREDICTIVE_HEADER = ("day", "channel", "mean", "q5", "q95")
OVERLAY_HEADER = ("day", "channel", "observed", "predicted_mean")


class DataError(SirtdError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class NonMonotoneDeaths(DataError):
    pass


class DateGap(DataError):
    pass


class EmptyJoin(DataError):
    pass


class ConfigError(DataError):
    pass


# -- atomic output -------------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> Path:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    """Shortest round-trip representation; integers without a decimal point."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(x)


# -- reading -------------------------------------------------------------------

def _read_rows(path, header):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        text = path.read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(path, 0, f"not UTF-8: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ParseError(path, 1, "file is empty")
    got = tuple(c.strip() for c in rows[0])
    if got != tuple(header):
        raise ParseError(path, 1, f"expected header {','.join(header)!r}, got {','.join(got)!r}")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        yield lineno, [c.strip() for c in row]


def _parse_int(path, lineno, value, name):
    try:
        out = int(value)
    except ValueError:
        raise ParseError(path, lineno, f"{name} is not an integer: {value!r}") from None
    if out < 0:
        raise ParseError(path, lineno, f"{name} is negative: {out}")
    return out


def _parse_float(path, lineno, value, name):
    try:
        return float(value)
    except ValueError:
        raise ParseError(path, lineno, f"{name} is not a number: {value!r}") from None


def read_dated_series(path, header) -> dict:
    """``{date: count}`` from a two-column dated CSV."""
    series = {}
    for lineno, (date_s, value_s) in _read_rows(path, header):
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError:
            raise ParseError(path, lineno, f"invalid ISO-8601 date: {date_s!r}") from None
        if date in series:
            raise ParseError(path, lineno, f"duplicate date {date}")
        series[date] = _parse_int(path, lineno, value_s, header[1])
    return series


def _join(deaths: dict, tweets: dict):
    if not deaths or not tweets:
        raise EmptyJoin("an observation file has no rows")
    start = max(min(deaths), min(tweets))
    end = min(max(deaths), max(tweets))
    if start > end:
        raise EmptyJoin(f"deaths and tweets do not overlap in time")
    n = (end - start).days + 1
    dates = [start + dt.timedelta(days=i) for i in range(n)]
    for name, series in (("deaths", deaths), ("tweets", tweets)):
        missing = [d for d in dates if d not in series]
        if missing:
            raise DateGap(f"{name} series is missing {missing[0].isoformat()} within the joint window "
                          f"{start.isoformat()}..{end.isoformat()}")
    d = np.array([deaths[x] for x in dates], dtype=np.int64)
    t = np.array([tweets[x] for x in dates], dtype=np.int64)
    drops = np.flatnonzero(np.diff(d) < 0)
    if drops.size:
        bad = dates[drops[0] + 1]
        raise NonMonotoneDeaths(f"cumulative deaths decrease on {bad.isoformat()} "
                                f"({d[drops[0]]} -> {d[drops[0] + 1]})")
    return dates, d, t


def initial_state_from_confirmed(N, start: dt.date, confirmed: dict, deaths_at_start: int) -> CompartmentState:
    """Initial compartments from confirmed-case counts.

    ``I`` is the number of cases confirmed on the start date, ``R`` the
    cumulative confirmed total up to and including it, ``D`` the cumulative
    deaths on the start date, ``T = 0`` and ``S`` the remainder of ``N``.
    """
    if start not in confirmed:
        raise DateGap(f"confirmed-cases series has no row for the start date {start.isoformat()}")
    I0 = confirmed[start]
    R0 = sum(v for d, v in confirmed.items() if d <= start)
    S0 = N - I0 - R0 - deaths_at_start
    if S0 < 0:
        raise ValidationError(f"initial compartments exceed N={N}")
    return CompartmentState(S0, I0, R0, 0.0, deaths_at_start)


def read_observed_csv(deaths_path, tweets_path, N, y0: CompartmentState | None = None, I0=None,
                      confirmed_path=None) -> ObservedData:
    """Join the death and tweet files on date into :class:`ObservedData`.

    Day 0 is the earliest date present in both files. The initial state is
    ``y0`` if given, else built from ``confirmed_path``, else
    ``(N - I0, I0, 0, 0, 0)``.

    Raises
    ------
    ParseError, NonMonotoneDeaths, DateGap, EmptyJoin, FileNotFoundError
    """
    deaths = read_dated_series(deaths_path, DEATHS_HEADER)
    tweets = read_dated_series(tweets_path, TWEETS_HEADER)
    dates, d, t = _join(deaths, tweets)
    if y0 is None:
        if confirmed_path is not None:
            confirmed = read_dated_series(confirmed_path, CONFIRMED_HEADER)
            y0 = initial_state_from_confirmed(N, dates[0], confirmed, int(d[0]))
        elif I0 is not None:
            y0 = CompartmentState.initial(N, I0)
        else:
            raise ConfigError("need y0, I0 or a confirmed-cases file to set the initial state")
    return ObservedData(np.arange(len(dates), dtype=float), d, t, N, y0)


def write_observed_csv(obs: ObservedData, deaths_path, tweets_path, start_date=dt.date(2020, 1, 1)):
    dates = [start_date + dt.timedelta(days=int(day)) for day in obs.days]
    atomic_write_text(deaths_path, _csv_text(DEATHS_HEADER, [
        (d.isoformat(), int(v)) for d, v in zip(dates, obs.cumulative_deaths)]))
    atomic_write_text(tweets_path, _csv_text(TWEETS_HEADER, [
        (d.isoformat(), int(v)) for d, v in zip(dates, obs.tweet_counts)]))


def write_sim_csv(out: SimOutput, path) -> Path:
    return atomic_write_text(path, _csv_text(SIM_COLUMNS, out.table.tolist()))


def read_sim_csv(path) -> SimOutput:
    rows = [[_parse_int(path, lineno, v, name) for v, name in zip(row, SIM_COLUMNS)]
            for lineno, row in _read_rows(path, SIM_COLUMNS)]
    if not rows:
        raise ParseError(path, 2, "no data rows")
    return SimOutput(np.array(rows, dtype=np.int64))


def sim_to_observed_csv(sim: SimOutput, deaths_path, tweets_path, start_date=dt.date(2020, 1, 1)):
    """Write the ``D`` and ``tweets`` columns of a simulation as observation files."""
    dates = [start_date + dt.timedelta(days=int(day)) for day in sim.column("day")]
    atomic_write_text(deaths_path, _csv_text(DEATHS_HEADER, [
        (d.isoformat(), int(v)) for d, v in zip(dates, sim.column("D"))]))
    atomic_write_text(tweets_path, _csv_text(TWEETS_HEADER, [
        (d.isoformat(), int(v)) for d, v in zip(dates, sim.column("tweets"))]))


def write_draws_csv(draws: ChainDraws, path) -> Path:
    rows = []
    for c in range(draws.n_chains):
        for i in range(draws.n_draws):
            rows.append([c, i] + [_num(v) for v in draws.draws[c, i]])
    return atomic_write_text(path, _csv_text(DRAWS_HEADER, rows))


def read_draws_csv(path) -> ChainDraws:
    chains: dict[int, list] = {}
    for lineno, row in _read_rows(path, DRAWS_HEADER):
        c = _parse_int(path, lineno, row[0], "chain")
        _parse_int(path, lineno, row[1], "iteration")
        chains.setdefault(c, []).append([_parse_float(path, lineno, v, n) for v, n in zip(row[2:], PARAM_NAMES)])
    if not chains:
        raise ParseError(path, 2, "no draws")
    lengths = {len(v) for v in chains.values()}
    if len(lengths) != 1:
        raise DataError(f"{path}: chains have unequal lengths {sorted(lengths)}")
    return ChainDraws(np.array([chains[c] for c in sorted(chains)]))


def write_summary_csv(summary: PosteriorSummary, path) -> Path:
    rows = [[row.variable] + [_num(getattr(row, col)) for col in SUMMARY_COLUMNS] for row in summary]
    return atomic_write_text(path, _csv_text(SUMMARY_HEADER, rows))


def read_summary_csv(path) -> list[dict]:
    out = []
    for lineno, row in _read_rows(path, SUMMARY_HEADER):
        out.append({"variable": row[0], **{c: _parse_float(path, lineno, v, c)
                                           for c, v in zip(SUMMARY_COLUMNS, row[1:])}})
    return out


def write_predictive_csv(table, path) -> Path:
    rows = [(_num(day), ch, _num(m), _num(lo), _num(hi)) for day, ch, m, lo, hi in table.rows()]
    return atomic_write_text(path, _csv_text(PREDICTIVE_HEADER, rows))


def read_predictive_csv(path) -> list[tuple]:
    return [(_parse_float(path, n, r[0], "day"), r[1], *(_parse_float(path, n, v, c) for v, c in
                                                         zip(r[2:], PREDICTIVE_HEADER[2:])))
            for n, r in _read_rows(path, PREDICTIVE_HEADER)]


def overlay_rows(obs: ObservedData, table):
    """Observed series next to the posterior mean curve, per channel."""
    rows = []
    for name, observed in (("deaths", obs.cumulative_deaths), ("tweets", obs.tweet_counts)):
        mean = table.channel(name)["mean"]
        rows += [(_num(day), name, int(o), _num(m)) for day, o, m in zip(obs.days, observed, mean)]
    return rows


def write_overlay_csv(obs: ObservedData, table, path) -> Path:
    return atomic_write_text(path, _csv_text(OVERLAY_HEADER, overlay_rows(obs, table)))


# -- configuration -------------------------------------------------------------

def _flatten(tree, prefix=""):
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


_SIM_KEYS = {"N": "N", "t": "t", "C": "C", "beta": "beta", "omega": "omega", "lambda": "lambda_",
             "d_I": "d_I", "d_T": "d_T", "I0": "I0", "infection_mode": "infection_mode"}
_DATA_KEYS = {"N", "I0", "deaths", "tweets", "confirmed",
              "y0.S", "y0.I", "y0.R", "y0.T", "y0.D"}
_PRIOR_KEYS = {f.name for f in fields(PriorConfig) if not f.name.startswith("_")}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
_SAMPLER_KEYS = {f.name for f in fields(SamplerConfig) if f.name != "seed"} | {"n_jobs"}
_OTHER_KEYS = {"seed", "sim.start_date", "predict.replicates_per_draw", "predict.n_days", "output.figures"}


@dataclass
class RunConfig:
    """Parsed configuration file; ``flat`` keeps the dotted keys as read."""

    flat: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, key, default=None):
        return self.flat.get(key, default)

    def section(self, name) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.flat.items() if k.startswith(prefix)}

    def path(self, key):
        value = self.flat.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self) -> int | None:
        return self.flat.get("seed")

    def sim_config(self, seed: int) -> SimConfig:
        sim = self.section("sim")
        kwargs = {_SIM_KEYS[k]: v for k, v in sim.items() if k in _SIM_KEYS}
        return SimConfig(seed=seed, **kwargs)

    def start_date(self, section="sim") -> dt.date:
        value = self.flat.get(f"{section}.start_date", "2020-01-01")
        if isinstance(value, dt.date):
            return value
        try:
            return dt.date.fromisoformat(str(value))
        except ValueError:
            raise ConfigError(f"{section}.start_date is not an ISO-8601 date: {value!r}") from None

    def priors(self) -> PriorConfig:
        return PriorConfig(**self.section("priors"))

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.section("solver"))

    def sampler(self, seed: int) -> SamplerConfig:
        kwargs = {k: v for k, v in self.section("sampler").items() if k != "n_jobs"}
        return SamplerConfig(seed=seed, **kwargs)

    @property
    def n_jobs(self) -> int:
        return int(self.flat.get("sampler.n_jobs", 1))

    @property
    def figures(self) -> bool:
        return bool(self.flat.get("output.figures", True))

    def population(self) -> float:
        if "data.N" in self.flat:
            return float(self.flat["data.N"])
        if "sim.N" in self.flat:
            return float(self.flat["sim.N"])
        raise ConfigError("data.N (population size) is required")

    def initial_state(self):
        """Explicit ``data.y0.*`` state, if configured."""
        y0 = self.section("data.y0")
        if not y0:
            return None
        missing = {"S", "I", "R", "T", "D"} - set(y0)
        if missing:
            raise ConfigError(f"data.y0 is missing {sorted(missing)}")
        return CompartmentState(y0["S"], y0["I"], y0["R"], y0["T"], y0["D"])

    def initial_infected(self):
        if "data.I0" in self.flat:
            return self.flat["data.I0"]
        return self.flat.get("sim.I0")


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Unknown keys and wrongly typed values are rejected before any
    computation starts.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        tree = tomllib.loads(path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = _flatten(tree)
    for key in flat:
        head, _, rest = key.partition(".")
        ok = (
            key in _OTHER_KEYS
            or (head == "sim" and rest in _SIM_KEYS)
            or (head == "data" and rest in _DATA_KEYS)
            or (head == "priors" and rest in _PRIOR_KEYS)
            or (head == "solver" and rest in _SOLVER_KEYS)
            or (head == "sampler" and rest in _SAMPLER_KEYS)
        )
        if not ok:
            raise ConfigError(f"{path}: unknown configuration key {key!r}")
    cfg = RunConfig(flat=flat, base_dir=path.parent.resolve())
    seed = cfg.seed
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer")
    # construct everything once so invalid values fail early
    try:
        cfg.priors()
        cfg.solver()
        cfg.sampler(seed or 0)
        if cfg.section("sim"):
            cfg.sim_config(seed or 0)
            cfg.start_date("sim")
        for key in ("data.deaths", "data.tweets", "data.confirmed"):
            p = cfg.path(key)
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"{key}: no such file: {p}")
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
