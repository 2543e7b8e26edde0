"""PNG renderings of the CSV outputs.

Figures are drawn on a bare :class:`matplotlib.figure.Figure` with the Agg
canvas, so no display or global pyplot state is involved. The CSV files
remain the machine-readable contract; these images are for people.
"""
from __future__ import annotations

import io

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import COMPARTMENTS
from .io import atomic_write_bytes

# drop the "Software" tag so reruns produce identical bytes
_PNG_METADATA = {"Software": None}
_COLOURS = {"S": "tab:blue", "I": "tab:red", "R": "tab:green", "T": "tab:orange", "D": "black",
            "deaths": "black", "tweets": "tab:purple"}


def _save(fig: Figure, path):
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_METADATA)
    return atomic_write_bytes(path, buf.getvalue())


def plot_simulation(sim, path):
    """Compartment counts and daily tweets of an agent-based run."""
    fig = Figure(figsize=(10, 4), layout="constrained")
    ax_c, ax_t = fig.subplots(1, 2)
    day = sim.column("day")
    for name in COMPARTMENTS:
        ax_c.plot(day, sim.column(name), label=name, color=_COLOURS[name])
    ax_c.set(xlabel="day", ylabel="individuals", title="Compartments")
    ax_c.legend()
    ax_t.bar(day, sim.column("tweets"), color=_COLOURS["tweets"], width=0.8)
    ax_t.set(xlabel="day", ylabel="tweets", title="Daily symptom tweets")
    return _save(fig, path)


def plot_overlay(observed, table, path):
    """Observed deaths/tweets against the posterior-mean curves and bands."""
    fig = Figure(figsize=(10, 4), layout="constrained")
    axes = fig.subplots(1, 2)
    series = {"deaths": observed.cumulative_deaths, "tweets": observed.tweet_counts}
    for ax, (name, obs) in zip(axes, series.items()):
        band = table.channel(name)
        ax.fill_between(table.days, band["q5"], band["q95"], color=_COLOURS[name], alpha=0.2,
                        label="90% predictive")
        ax.plot(table.days, band["mean"], color=_COLOURS[name], label="posterior mean")
        ax.plot(observed.days, obs, "o", ms=3, color="tab:gray", label="observed")
        ax.set(xlabel="day", title="Cumulative deaths" if name == "deaths" else "Daily tweets")
        ax.legend()
    return _save(fig, path)


def plot_predictive(table, path):
    """Predictive bands for every channel, one panel each."""
    names = ("deaths", "tweets") + COMPARTMENTS
    fig = Figure(figsize=(14, 6), layout="constrained")
    axes = np.asarray(fig.subplots(2, 4)).ravel()
    for ax, name in zip(axes, names):
        band = table.channel(name)
        ax.fill_between(table.days, band["q5"], band["q95"], color=_COLOURS[name], alpha=0.25)
        ax.plot(table.days, band["mean"], color=_COLOURS[name])
        ax.set(title=name, xlabel="day")
    axes[-1].axis("off")
    return _save(fig, path)
