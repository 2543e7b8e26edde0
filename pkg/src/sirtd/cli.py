"""Command-line entry point: ``sirtd {simulate,fit,summarize,predict}``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .abm import simulate as run_abm
from .core import CompartmentState, ObservedData, SirtdError
from .diagnostics import summarize as summarize_draws
from .io import (ConfigError, RunConfig, atomic_write_text, load_config, read_draws_csv, read_observed_csv,
                 sim_to_observed_csv, write_draws_csv, write_overlay_csv, write_predictive_csv, write_sim_csv,
                 write_summary_csv)
from .mcmc import InitializationError, init_from_prior, prior_redraw, sample
from .model import FitContext, LikelihoodRejection, Posterior, posterior_predictive
from .ode import MaxStepsExceeded, NonFiniteState

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SEED_ENV = "SIRTD_SEED"

_NUMERICAL = (InitializationError, LikelihoodRejection, MaxStepsExceeded, NonFiniteState)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def resolve_seed(cli_seed, config_seed, environ=None) -> tuple[int, str]:
    """Pick the run seed: ``SIRTD_SEED`` beats ``--seed`` beats the config."""
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw not in (None, ""):
        try:
            seed = int(raw)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be a non-negative integer, got {raw!r}") from None
        source = "env"
    elif cli_seed is not None:
        seed, source = cli_seed, "cli"
    elif config_seed is not None:
        seed, source = config_seed, "config"
    else:
        seed, source = 0, "default"
    if seed < 0:
        raise UsageError(f"seed must be non-negative, got {seed}")
    return int(seed), source


def _versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"sirtd": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__}


def _jsonable(value):
    if isinstance(value, (dt.date, dt.datetime, dt.time, Path)):
        return str(value)
    return value


def write_manifest(out_dir: Path, command: str, argv, seed, seed_source, cfg: RunConfig | None,
                   inputs: dict, outputs: list) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "seed_source": seed_source,
        "config": {k: _jsonable(v) for k, v in cfg.flat.items()} if cfg is not None else None,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": sorted(outputs),
        "versions": _versions(),
    }
    return atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _observed_from_config(cfg: RunConfig, deaths, tweets) -> ObservedData:
    deaths = deaths or cfg.path("data.deaths")
    tweets = tweets or cfg.path("data.tweets")
    if deaths is None or tweets is None:
        raise UsageError("fit needs --deaths and --tweets (or data.deaths and data.tweets in the config)")
    return read_observed_csv(deaths, tweets, cfg.population(), y0=cfg.initial_state(),
                             I0=cfg.initial_infected(), confirmed_path=cfg.path("data.confirmed"))


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    cfg = load_config(args.config)
    if not cfg.section("sim"):
        raise ConfigError(f"{args.config}: no [sim] section")
    seed, source = resolve_seed(args.seed, cfg.seed)
    sim = run_abm(cfg.sim_config(seed))
    out = Path(args.out)
    outputs = ["sim.csv", "deaths.csv", "tweets.csv"]
    write_sim_csv(sim, out / "sim.csv")
    sim_to_observed_csv(sim, out / "deaths.csv", out / "tweets.csv", cfg.start_date("sim"))
    if cfg.figures:
        from .plots import plot_simulation
        plot_simulation(sim, out / "simulation.png")
        outputs.append("simulation.png")
    write_manifest(out, "simulate", argv, seed, source, cfg, {"config": args.config}, outputs)
    print(f"wrote {len(sim)} days to {out / 'sim.csv'}")
    return EXIT_OK


def cmd_fit(args, argv) -> int:
    cfg = load_config(args.config)
    seed, source = resolve_seed(args.seed, cfg.seed)
    obs = _observed_from_config(cfg, args.deaths, args.tweets)
    priors = cfg.priors()
    ctx = FitContext(obs, priors, cfg.solver())
    target = Posterior(ctx)
    scfg = cfg.sampler(seed)
    init = init_from_prior(priors, scfg.n_chains, seed, target=target)
    draws = sample(target, scfg, init, redraw=prior_redraw(priors), n_jobs=cfg.n_jobs)
    summary = summarize_draws(draws)
    table = posterior_predictive(draws, ctx, seed=seed,
                                 replicates_per_draw=int(cfg.get("predict.replicates_per_draw", 1)))

    out = Path(args.out)
    outputs = ["draws.csv", "summary.csv", "summary.txt", "overlay.csv"]
    write_draws_csv(draws, out / "draws.csv")
    write_summary_csv(summary, out / "summary.csv")
    atomic_write_text(out / "summary.txt", summary.to_text())
    write_overlay_csv(obs, table, out / "overlay.csv")
    if cfg.figures:
        from .plots import plot_overlay
        plot_overlay(obs, table, out / "fit_overlay.png")
        outputs.append("fit_overlay.png")
    write_manifest(out, "fit", argv, seed, source, cfg,
                   {"config": args.config, "deaths": args.deaths or cfg.path("data.deaths"),
                    "tweets": args.tweets or cfg.path("data.tweets")}, outputs)
    print(summary.to_text(), end="")
    print(f"acceptance rate per chain: {', '.join(f'{a:.3f}' for a in draws.accept_rate)}")
    return EXIT_OK


def cmd_summarize(args, argv) -> int:
    draws = read_draws_csv(args.draws)
    summary = summarize_draws(draws)
    print(summary.to_text(), end="")
    if args.out:
        out = Path(args.out)
        write_summary_csv(summary, out / "summary.csv")
        atomic_write_text(out / "summary.txt", summary.to_text())
    return EXIT_OK


def _prediction_context(cfg: RunConfig, n_days) -> tuple[FitContext, np.ndarray]:
    if cfg.path("data.deaths") is not None and cfg.path("data.tweets") is not None:
        obs = _observed_from_config(cfg, None, None)
    else:
        N = cfg.population()
        y0 = cfg.initial_state()
        if y0 is None:
            I0 = cfg.initial_infected()
            if I0 is None:
                raise ConfigError("predict needs data.deaths/data.tweets, data.y0.* or an I0 in the config")
            y0 = CompartmentState.initial(N, I0)
        zeros = np.zeros(1, dtype=np.int64)
        obs = ObservedData(np.zeros(1), zeros, zeros, N, y0)
    if n_days is None:
        n_days = cfg.get("predict.n_days") or (len(obs) if len(obs) > 1 else cfg.get("sim.t"))
    if n_days is None or int(n_days) < 1:
        raise ConfigError("set predict.n_days (or pass --days) to choose the prediction horizon")
    return FitContext(obs, cfg.priors(), cfg.solver()), np.arange(int(n_days), dtype=float)


def cmd_predict(args, argv) -> int:
    cfg = load_config(args.config)
    seed, source = resolve_seed(args.seed, cfg.seed)
    draws = read_draws_csv(args.draws)
    ctx, days = _prediction_context(cfg, args.days)
    table = posterior_predictive(draws, ctx, seed=seed,
                                 replicates_per_draw=int(cfg.get("predict.replicates_per_draw", 1)),
                                 days=days)
    out = Path(args.out)
    outputs = ["predictive.csv"]
    write_predictive_csv(table, out / "predictive.csv")
    if cfg.figures:
        from .plots import plot_predictive
        plot_predictive(table, out / "predictive.png")
        outputs.append("predictive.png")
    write_manifest(out, "predict", argv, seed, source, cfg, {"config": args.config, "draws": args.draws}, outputs)
    if table.n_skipped:
        print(f"warning: {table.n_skipped} draws failed to solve and were skipped", file=sys.stderr)
    print(f"wrote {len(days)} days x 7 channels to {out / 'predictive.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sirtd", description="SIRTD-with-tweets simulation and Bayesian fitting.")
    parser.add_argument("--version", action="version", version=f"sirtd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run the agent-based simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the ODE model by MCMC")
    p.add_argument("--config", required=True)
    p.add_argument("--deaths")
    p.add_argument("--tweets")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="diagnostics table for a draws file")
    p.add_argument("--draws", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("predict", help="posterior predictive bands")
    p.add_argument("--draws", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--days", type=int, help="horizon in days (default: data length or predict.n_days)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SirtdError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
