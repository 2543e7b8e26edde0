import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from sirtd.core import CompartmentState, EpidemicParams, ValidationError
from sirtd.ode import (MaxStepsExceeded, NonFiniteState, SolverConfig, integrate, sirtd_rhs, solve_sirtd,
                       solve_sirtd_array)

P = EpidemicParams(0.3, 0.1, 0.2, 7, 10, 1, 1)


def _decay(t, y):
    return -y


def _rhs_oracle(y, beta, omega, d_I, d_T, N):
    """Exact rational evaluation of the SIRTD field."""
    S, I, R, T, D = (Fraction(v) for v in y)
    beta, omega, d_I, d_T, N = (Fraction(v) for v in (beta, omega, d_I, d_T, N))
    inf = beta * S * I / N
    return [-inf, inf - I / d_I, I / d_I * (1 - omega), I / d_I * omega - T / d_T, T / d_T]


def _scipy_sirtd(p, y0, days, N):
    def f(t, y):
        S, I, R, T, D = y
        inf = p.beta * S * I / N
        return [-inf, inf - I / p.d_I, I / p.d_I * (1 - p.omega), I / p.d_I * p.omega - T / p.d_T, T / p.d_T]
    sol = solve_ivp(f, (days[0], days[-1]), y0, method="DOP853", t_eval=days, rtol=1e-13, atol=1e-12)
    return sol.y.T


# -- right-hand side ---------------------------------------------------------------

def test_rhs_simulated_data_example():
    y = CompartmentState(9990, 10, 0, 0, 0)
    got = sirtd_rhs(y, P, 10_000)
    expected = [float(v) for v in _rhs_oracle([9990, 10, 0, 0, 0], "0.3", "0.1", 7, 10, 10_000)]
    np.testing.assert_allclose(got, expected, rtol=1e-14, atol=1e-15)
    # dI = 2.997 - 10/7; the hand-written 1.568571... in some references is an arithmetic slip
    np.testing.assert_allclose(got, [-2.997, 1.568428571429, 1.285714285714, 0.142857142857, 0], atol=1e-11)


def test_rhs_no_infection_is_zero():
    assert np.array_equal(sirtd_rhs([9000, 0, 500, 0, 500], P, 10_000), np.zeros(5))


def test_rhs_pure_terminal_outflow():
    got = sirtd_rhs([9990, 0, 0, 10, 0], P, 10_000)
    np.testing.assert_allclose(got, [0, 0, 0, -1, 1], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=5, max_size=5), st.floats(0.01, 5), st.floats(0, 1),
       st.floats(1, 30), st.floats(1, 30))
def test_rhs_sums_to_zero(y, beta, omega, d_I, d_T):
    N = max(sum(y), 1.0)
    p = EpidemicParams(beta, omega, 0.5, d_I, d_T, 1, 1)
    got = sirtd_rhs(y, p, N)
    assert abs(got.sum()) <= 1e-12 * max(1.0, np.abs(got).max())
    assert got[0] <= 0 and got[4] >= 0


def test_rhs_rejects_nonpositive_N():
    with pytest.raises(ValidationError):
        sirtd_rhs([1, 0, 0, 0, 0], P, 0)


# -- generic integrator -----------------------------------------------------------

def test_decay_matches_closed_form():
    y = integrate(_decay, 1.0, 0.0, [1.0])
    assert y.shape == (1,)
    assert abs(y[0] - math.exp(-1)) < 1e-6


def test_decay_dense_output_in_order():
    ts = np.linspace(0.1, 5.0, 50)
    y = integrate(_decay, 1.0, 0.0, ts, SolverConfig(rtol=1e-10, atol=1e-12))
    np.testing.assert_allclose(y, np.exp(-ts), rtol=1e-8)


def test_output_at_t0_returns_initial_value():
    y = integrate(_decay, [2.0, 3.0], 0.0, [0.0, 1.0])
    assert y.shape == (2, 2)
    assert y[0].tolist() == [2.0, 3.0]


def test_vector_system_with_args():
    # harmonic oscillator, y = (cos wt, -w sin wt)
    def osc(t, y, w):
        return [y[1], -w * w * y[0]]
    ts = np.linspace(0.5, 10, 20)
    y = integrate(osc, [1.0, 0.0], 0.0, ts, SolverConfig(rtol=1e-10, atol=1e-10), args=(2.0,))
    np.testing.assert_allclose(y[:, 0], np.cos(2 * ts), atol=1e-7)


def test_error_falls_as_tolerance_halves():
    tight = integrate(_decay, 1.0, 0.0, [10.0], SolverConfig(rtol=1e-12, atol=1e-12))[0]
    errors = []
    for tol in 1e-4 / 2.0 ** np.arange(0, 12, 2):
        y = integrate(_decay, 1.0, 0.0, [10.0], SolverConfig(rtol=tol, atol=tol))[0]
        errors.append(abs(y - tight))
    assert all(b < a for a, b in zip(errors, errors[1:])), errors
    assert errors[-1] < errors[0] / 10


def test_max_steps_exceeded():
    with pytest.raises(MaxStepsExceeded):
        integrate(_decay, 1.0, 0.0, [100.0], SolverConfig(max_steps=3))


def test_non_finite_state():
    with pytest.raises(NonFiniteState):
        integrate(lambda t, y: np.full_like(y, np.nan) if t > 0.5 else -y, 1.0, 0.0, [2.0])


def test_finite_time_blowup_is_reported():
    # y' = y^2 blows up at t = 1: the step size collapses before the state overflows
    with pytest.raises((MaxStepsExceeded, NonFiniteState)):
        integrate(lambda t, y: y * y, 1.0, 0.0, [2.0])


def test_negative_guard():
    # y' = -1 crosses zero at t = 1; the guard must not return a silently clamped answer
    with pytest.raises((NonFiniteState, MaxStepsExceeded)):
        integrate(lambda t, y: -np.ones_like(y), 1.0, 0.0, [2.0], nonnegative=True)
    y = integrate(lambda t, y: -np.ones_like(y), 1.0, 0.0, [2.0])
    assert y[0] == pytest.approx(-1.0)
    # a genuine dip far below zero in one step is an error, not a clamp
    with pytest.raises((NonFiniteState, MaxStepsExceeded)):
        integrate(lambda t, y: -1e6 * np.ones_like(y), 1e-3, 0.0, [1.0], nonnegative=True)


def test_tiny_undershoot_is_clamped():
    # fast decay to an exact zero of the field: no error, result stays >= 0
    y = integrate(lambda t, y: -50.0 * y, 1.0, 0.0, np.linspace(0.5, 20, 40), nonnegative=True)
    assert np.all(y >= 0.0)
    assert y[-1] < 1e-6


@pytest.mark.parametrize("times", [[], [1.0, 1.0], [2.0, 1.0], [-1.0, 1.0], [0.0, math.nan]])
def test_bad_output_times(times):
    with pytest.raises(ValidationError):
        integrate(_decay, 1.0, 0.0, times)


def test_solver_config_validation():
    for kwargs in ({"rtol": 0}, {"atol": -1}, {"max_steps": 0}):
        with pytest.raises(ValidationError):
            SolverConfig(**kwargs)


# -- SIRTD trajectories -------------------------------------------------------------

def test_equilibrium_without_infection(days):
    y0 = CompartmentState(9000, 0, 1000, 0, 0)
    traj = solve_sirtd(P, y0, days, 10_000)
    assert np.array_equal(traj.states, np.tile(y0.as_array(), (len(days), 1)))


def test_conservation_simulated_data_params(y0, days):
    traj = solve_sirtd(P, y0, days, 10_000)
    assert np.max(np.abs(traj.states.sum(axis=1) - 10_000)) < 1e-6 * 10_000


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0, 1), st.floats(1, 20), st.floats(1, 20), st.integers(1, 500))
def test_conservation_and_monotonicity(beta, omega, d_I, d_T, I0):
    p = EpidemicParams(beta, omega, 0.5, d_I, d_T, 1, 1)
    cfg = SolverConfig()
    N = 10_000
    days = np.linspace(0, 100, 401)
    states = solve_sirtd_array(p, CompartmentState.initial(N, I0).as_array(), days, N, cfg)
    assert np.max(np.abs(states.sum(axis=1) - N)) < 10 * (cfg.atol + cfg.rtol * N)
    # exact solutions are monotone; the numerical one may wiggle at the absolute-tolerance scale
    assert np.all(np.diff(states[:, 4]) >= -cfg.atol)
    assert np.all(np.diff(states[:, 0]) <= cfg.atol)
    assert np.all(states >= -10 * cfg.atol)


def test_default_tolerance_vs_tight_reference(y0, days):
    start = time.perf_counter()
    default = solve_sirtd_array(P, y0.as_array(), days, 10_000)
    elapsed = time.perf_counter() - start
    tight = solve_sirtd_array(P, y0.as_array(), days, 10_000, SolverConfig(rtol=1e-12, atol=1e-12))
    rel = np.abs(default - tight) / np.maximum(np.abs(tight), 1.0)
    assert rel.max() < 1e-4
    assert elapsed < 1.0


def test_tight_solution_matches_scipy_dop853(y0, days):
    ours = solve_sirtd_array(P, y0.as_array(), days, 10_000, SolverConfig(rtol=1e-12, atol=1e-12))
    ref = _scipy_sirtd(P, y0.as_array(), days, 10_000)
    np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-7)


def test_python_and_compiled_paths_agree(y0, days):
    fast = solve_sirtd_array(P, y0.as_array(), days, 10_000)
    slow = integrate(lambda t, y: sirtd_rhs(y, P, 10_000), y0.as_array(), 0.0, days, nonnegative=True)
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-9)


def test_stiff_parameters_surface_max_steps(y0, days):
    p = EpidemicParams(1000.0, 0.1, 0.2, 7, 10, 1, 1)
    with pytest.raises(MaxStepsExceeded):
        solve_sirtd_array(p, y0.as_array(), days, 10_000, SolverConfig(max_steps=50))
