"""SIRTD vector field and an adaptive Dormand-Prince 5(4) integrator.

The stepping loop is written once (``_dopri_loop``) and used in two
ways: as plain Python for arbitrary callables passed to :func:`integrate`,
and compiled with numba around the SIRTD right-hand side for
:func:`solve_sirtd`, which sits on the MCMC hot path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from numba.extending import register_jitable

from .core import CompartmentState, EpidemicParams, SirtdError, Trajectory, ValidationError

__all__ = [
    "SolverConfig",
    "MaxStepsExceeded",
    "NonFiniteState",
    "sirtd_rhs",
    "integrate",
    "solve_sirtd",
]


class MaxStepsExceeded(SirtdError):
    """The step budget ran out; usually a stiff or pathological parameter set."""


class NonFiniteState(SirtdError):
    """NaN/Inf in the state, or a compartment went clearly negative."""


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1e-6
    atol: float = 1e-6
    max_steps: int = 10_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("rtol and atol must be > 0")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValidationError("max_steps must be an integer >= 1")
        object.__setattr__(self, "max_steps", int(self.max_steps))


# Dormand & Prince (1980), "A family of embedded Runge-Kutta formulae",
# J. Comput. Appl. Math. 6(1); coefficients as tabulated in Hairer, Norsett &
# Wanner, Solving ODEs I (2nd ed.), Table 5.2.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
# fifth-order minus embedded fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic continuous extension (Shampine 1986), columns multiply theta**1..4
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_PI_BETA = 0.04
_PI_ALPHA = 0.2 - 0.75 * _PI_BETA

OK, MAX_STEPS, NON_FINITE, NEGATIVE, UNDERFLOW = 0, 1, 2, 3, 4


@register_jitable
def _dopri_loop(rhs, y0, t0, ts, rtol, atol, max_steps, nonneg, args, A, C, E, P):
    """Adaptive stepping loop shared by the Python and numba paths.

    ``rhs(t, y, args)`` returns a new float array. Returns
    ``(status, out, n_steps)`` with ``out[i]`` the state at ``ts[i]``.
    Written with explicit loops over preallocated buffers so the compiled
    version does not allocate per stage. The tableau is passed in rather
    than read from globals so numba can cache the compiled code.
    """
    dim = y0.size
    n_out = ts.size
    out = np.empty((n_out, dim))
    y = y0.copy()
    t = t0
    i_out = 0
    while i_out < n_out and ts[i_out] <= t0:
        out[i_out] = y
        i_out += 1
    if i_out == n_out:
        return OK, out, 0
    t_end = ts[n_out - 1]

    K = np.empty((7, dim))
    ytmp = np.empty(dim)
    y_new = np.empty(dim)
    K[0] = rhs(t, y, args)
    for j in range(dim):
        if not math.isfinite(K[0, j]):
            return NON_FINITE, out, 0

    # initial step, Hairer-Norsett-Wanner automatic selection
    d0 = 0.0
    d1 = 0.0
    for j in range(dim):
        sc = atol + rtol * abs(y[j])
        d0 += (y[j] / sc) ** 2
        d1 += (K[0, j] / sc) ** 2
    d0 = math.sqrt(d0 / dim)
    d1 = math.sqrt(d1 / dim)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, t_end - t)
    for j in range(dim):
        ytmp[j] = y[j] + h0 * K[0, j]
    f1 = rhs(t + h0, ytmp, args)
    d2 = 0.0
    for j in range(dim):
        d2 += ((f1[j] - K[0, j]) / (atol + rtol * abs(y[j]))) ** 2
    d2 = math.sqrt(d2 / dim) / h0
    dmax = max(d1, d2)
    if dmax <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dmax) ** 0.2
    h = min(100.0 * h0, h1)

    err_old = 1e-4
    rejected = False
    negative_retry = False
    n_steps = 0
    while i_out < n_out:
        if n_steps >= max_steps:
            return MAX_STEPS, out, n_steps
        if h <= 1e-14 * max(1.0, abs(t)):
            return NEGATIVE if negative_retry else UNDERFLOW, out, n_steps
        if t + h > t_end:
            h = t_end - t
        n_steps += 1

        for s in range(1, 7):
            for j in range(dim):
                acc = 0.0
                for i in range(s):
                    acc += A[s, i] * K[i, j]
                ytmp[j] = y[j] + h * acc
            K[s] = rhs(t + C[s] * h, ytmp, args)
        # stage 7 is evaluated at the fifth-order solution (FSAL)
        finite = True
        err = 0.0
        for j in range(dim):
            y_new[j] = ytmp[j]
            e = 0.0
            for i in range(7):
                e += E[i] * K[i, j]
            sc = atol + rtol * max(abs(y[j]), abs(y_new[j]))
            err += (h * e / sc) ** 2
            if not (math.isfinite(y_new[j]) and math.isfinite(K[6, j])):
                finite = False
        if not finite:
            return NON_FINITE, out, n_steps
        err = math.sqrt(err / dim)

        # a trial step that dips below -atol is rejected and retried with a
        # smaller step; a true sign change then ends in NEGATIVE via underflow
        dipped = False
        if nonneg and err <= 1.0:
            for j in range(dim):
                if y_new[j] <= -atol:
                    dipped = True
        if dipped:
            negative_retry = True
            h = 0.5 * h
            rejected = True
            continue
        negative_retry = False

        if err <= 1.0:
            err = max(err, 1e-10)
            fac = err ** _PI_ALPHA / err_old ** _PI_BETA / _SAFETY
            fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac))
            h_new = h / fac
            if rejected:
                h_new = min(h_new, h)
            rejected = False
            err_old = max(err, 1e-4)

            if nonneg:
                for j in range(dim):
                    if y_new[j] < 0.0:
                        y_new[j] = 0.0

            t_new = t + h
            while i_out < n_out and ts[i_out] <= t_new:
                if ts[i_out] == t_new:
                    for j in range(dim):
                        out[i_out, j] = y_new[j]
                else:
                    theta = (ts[i_out] - t) / h
                    for j in range(dim):
                        acc = 0.0
                        for i in range(7):
                            acc += K[i, j] * theta * (
                                P[i, 0] + theta * (P[i, 1] + theta * (P[i, 2] + theta * P[i, 3])))
                        val = y[j] + h * acc
                        if nonneg and val < 0.0 and val > -atol:
                            val = 0.0
                        out[i_out, j] = val
                i_out += 1
            t = t_new
            for j in range(dim):
                y[j] = y_new[j]
                K[0, j] = K[6, j]
            h = h_new
        else:
            fac = min(1.0 / _FAC_MIN, err ** _PI_ALPHA / _SAFETY)
            h = h / fac
            rejected = True
    return OK, out, n_steps


def _raise_for_status(status, n_steps):
    if status == MAX_STEPS:
        raise MaxStepsExceeded(f"exceeded {n_steps} integration steps")
    if status == UNDERFLOW:
        raise MaxStepsExceeded(f"step size underflow after {n_steps} steps")
    if status == NON_FINITE:
        raise NonFiniteState(f"non-finite state after {n_steps} steps")
    if status == NEGATIVE:
        raise NonFiniteState(f"state went negative beyond atol after {n_steps} steps")


def _check_times(t0, output_times):
    ts = np.asarray(output_times, dtype=float).reshape(-1)
    if ts.size == 0:
        raise ValidationError("output_times is empty")
    if not np.all(np.isfinite(ts)) or np.any(np.diff(ts) <= 0):
        raise ValidationError("output_times must be finite and strictly increasing")
    if ts[0] < t0:
        raise ValidationError("output_times must be >= t0")
    return ts


def integrate(rhs, y0, t0, output_times, cfg: SolverConfig | None = None, args=(), nonnegative=False):
    """Integrate ``dy/dt = rhs(t, y, *args)`` and return ``y`` at each output time.

    Parameters
    ----------
    rhs : callable
        Vector field ``rhs(t, y, *args) -> array_like``.
    y0 : float or array_like
        Initial state at ``t0``.
    t0 : float
        Initial time.
    output_times : array_like
        Strictly increasing times, all ``>= t0``.
    cfg : SolverConfig, optional
        Tolerances and step budget; defaults to ``SolverConfig()``.
    nonnegative : bool
        Clamp components in ``(-atol, 0)`` to zero. A step landing further
        below zero is retried with a smaller step; if that cannot avoid it
        the integration fails with :class:`NonFiniteState`.

    Returns
    -------
    numpy.ndarray
        Shape ``(len(output_times),)`` for scalar ``y0``, else
        ``(len(output_times), len(y0))``.

    Raises
    ------
    MaxStepsExceeded, NonFiniteState
    """
    cfg = cfg or SolverConfig()
    scalar = np.ndim(y0) == 0
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    ts = _check_times(float(t0), output_times)

    def f(t, yy, a):
        return np.asarray(rhs(t, yy, *a), dtype=float).reshape(y.shape).copy()

    status, out, n_steps = _dopri_loop(f, y, float(t0), ts, cfg.rtol, cfg.atol, cfg.max_steps, nonnegative,
                                      tuple(args), _A, _C, _E, _P)
    _raise_for_status(status, n_steps)
    return out[:, 0] if scalar else out


def sirtd_rhs(y, p: EpidemicParams, N: float) -> np.ndarray:
    """Derivatives ``(dS, dI, dR, dT, dD)`` of the SIRTD system."""
    if not N > 0:
        raise ValidationError("N must be > 0")
    if isinstance(y, CompartmentState):
        y = y.as_array()
    S, I, R, T, D = (float(v) for v in y)
    infection = p.beta * S * I / N
    exits = I / p.d_I
    deaths = T / p.d_T
    return np.array([
        -infection,
        infection - exits,
        exits * (1.0 - p.omega),
        exits * p.omega - deaths,
        deaths,
    ])


@register_jitable
def _sirtd_rhs_nb(t, y, args):
    beta, omega, d_I, d_T, N = args[0], args[1], args[2], args[3], args[4]
    out = np.empty(5)
    infection = beta * y[0] * y[1] / N
    exits = y[1] / d_I
    deaths = y[3] / d_T
    out[0] = -infection
    out[1] = infection - exits
    out[2] = exits * (1.0 - omega)
    out[3] = exits * omega - deaths
    out[4] = deaths
    return out


@numba.njit(cache=True)
def _solve_sirtd_nb(y0, t0, ts, rtol, atol, max_steps, args, A, C, E, P):
    return _dopri_loop(_sirtd_rhs_nb, y0, t0, ts, rtol, atol, max_steps, True, args, A, C, E, P)


def solve_sirtd_array(params: EpidemicParams, y0, days, N: float, cfg: SolverConfig | None = None,
                      t0: float | None = None) -> np.ndarray:
    """Fast path used by the likelihood; returns an ``(n_days, 5)`` array.

    ``y0`` is the state at ``t0`` (default ``days[0]``). Raises the solver
    errors.
    """
    cfg = cfg or SolverConfig()
    ts = np.ascontiguousarray(days, dtype=float)
    y = np.ascontiguousarray(y0, dtype=float)
    t0 = ts[0] if t0 is None else float(t0)
    args = np.array([params.beta, params.omega, params.d_I, params.d_T, float(N)])
    status, out, n_steps = _solve_sirtd_nb(y, t0, ts, cfg.rtol, cfg.atol, cfg.max_steps, args, _A, _C, _E, _P)
    _raise_for_status(status, n_steps)
    return out


def solve_sirtd(params: EpidemicParams, y0: CompartmentState, days, N: float,
                cfg: SolverConfig | None = None, t0: float | None = None) -> Trajectory:
    """Integrate SIRTD from ``y0`` at ``t0`` (default ``days[0]``) onto ``days``."""
    if not N > 0:
        raise ValidationError("N must be > 0")
    days = np.asarray(days, dtype=float)
    t0 = float(days[0]) if t0 is None else float(t0)
    ts = _check_times(t0, days)
    out = solve_sirtd_array(params, y0.as_array(), ts, N, cfg, t0=t0)
    return Trajectory(ts, out)
