import numpy as np

from sirtd.abm import SimConfig, simulate
from sirtd.core import CompartmentState
from sirtd.model import FitContext, posterior_predictive, simulate_observations
from sirtd.plots import plot_overlay, plot_predictive, plot_simulation

from conftest import N, TRUTH

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def test_simulation_png_is_deterministic(tmp_path):
    sim = simulate(SimConfig(t=30))
    a = plot_simulation(sim, tmp_path / "a.png").read_bytes()
    b = plot_simulation(sim, tmp_path / "b.png").read_bytes()
    assert a.startswith(PNG_MAGIC) and a == b


def test_overlay_and_predictive_pngs(tmp_path):
    obs = simulate_observations(TRUTH, CompartmentState.initial(N, 10), N, np.arange(40.0), seed=0)
    ctx = FitContext(obs)
    draws = np.tile(TRUTH.as_array(), (20, 1)) * np.random.default_rng(0).uniform(0.95, 1.05, (20, 7))
    table = posterior_predictive(draws, ctx)
    assert plot_overlay(obs, table, tmp_path / "o.png").read_bytes().startswith(PNG_MAGIC)
    assert plot_predictive(table, tmp_path / "p.png").read_bytes().startswith(PNG_MAGIC)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["o.png", "p.png"]
