"""Method-of-steps integration of delay differential equations.

Every system is advanced with classical RK4 on a fixed grid whose step
divides all discrete delays, so delayed arguments needed by the stages
fall either on stored grid points or on interval midpoints.  Midpoint
values come from the cubic Hermite interpolant built from the stored
states and their derivatives.

The right-hand side of a :class:`DelaySystem` has the signature
``rhs(t, x, xd, xi, p) -> ndarray`` where ``x`` is the current state,
``xd`` holds one delayed state per row (discrete delays in declaration
order, followed by the held sample of a zero-order-hold loop if the
system has one), ``xi`` is the distributed-delay integral and ``p`` the
parameter vector.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from ._accel import jit

BLOWUP = 1e8


class DDEError(Exception):
    """Base class for simulation failures."""


class ConfigurationError(DDEError):
    """Raised when a step size, period or history cannot be made consistent."""


class DivergenceError(DDEError):
    def __init__(self, t_blowup, trajectory=None):
        super().__init__(f"solution left |x| <= {BLOWUP:g} at t = {t_blowup:.6g}")
        self.t_blowup = t_blowup
        self.trajectory = trajectory


# --------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled solution; row ``i`` is the state at ``t0 + i*dt``."""

    t0: float
    dt: float
    samples: np.ndarray
    derivs: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        object.__setattr__(self, "samples", s)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if s.shape[0] < 2:
            raise ValueError("a trajectory needs at least two samples")
        if not np.all(np.isfinite(s)):
            raise ValueError("trajectory contains non-finite samples")

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def __len__(self):
        return self.samples.shape[0]

    def window(self, t_start=None, t_stop=None) -> "Trajectory":
        """Rows with ``t_start <= t <= t_stop`` (grid-aligned, inclusive)."""
        i0 = 0 if t_start is None else max(0, int(math.ceil((t_start - self.t0) / self.dt - 1e-9)))
        i1 = len(self) if t_stop is None else min(len(self), int(math.floor((t_stop - self.t0) / self.dt + 1e-9)) + 1)
        d = None if self.derivs is None else self.derivs[i0:i1]
        return Trajectory(self.t0 + i0 * self.dt, self.dt, self.samples[i0:i1], d)

    def tail_history(self, tau: float) -> "HistorySpec":
        """The final history segment of length ``tau``, usable to restart a run."""
        m = int(round(tau / self.dt))
        if m >= len(self):
            raise ConfigurationError("trajectory shorter than requested history")
        d = None if self.derivs is None else self.derivs[-m - 1:]
        return HistorySpec.sampled(self.samples[-m - 1:], d)

    def to_csv(self, path):
        write_trajectory_csv(self, path)


@dataclass(frozen=True)
class HistorySpec:
    """Initial datum on ``[-tau, 0]``: a constant, samples on the solver grid, or a function of theta."""

    values: np.ndarray
    derivs: Optional[np.ndarray] = None
    kind: str = "constant"
    func: Optional[Callable] = field(default=None, repr=False, compare=False)

    @classmethod
    def constant(cls, value) -> "HistorySpec":
        return cls(np.atleast_1d(np.asarray(value, dtype=float)), None, "constant")

    @classmethod
    def sampled(cls, values, derivs=None) -> "HistorySpec":
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        d = None if derivs is None else np.asarray(derivs, dtype=float).reshape(v.shape)
        return cls(v, d, "sampled")

    @classmethod
    def from_function(cls, func) -> "HistorySpec":
        """``func(theta)`` for scalar ``theta <= 0``, sampled lazily on whatever grid the solver uses."""
        x0 = np.atleast_1d(np.asarray(func(0.0), dtype=float))
        return cls(x0, None, "function", func)

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    def grid(self, m: int, dt: float):
        """Values and derivatives on ``m + 1`` grid points covering ``[-m*dt, 0]``."""
        if self.kind == "constant":
            x = np.repeat(self.values[None, :], m + 1, axis=0)
            return x, np.zeros_like(x)
        if self.kind == "function":
            theta = dt * (np.arange(m + 1) - m)
            x = np.array([np.atleast_1d(self.func(th)) for th in theta], dtype=float)
            # central differences of the function itself, not of the samples
            h = 1e-6
            d = np.array([(np.atleast_1d(self.func(th + h)) - np.atleast_1d(self.func(th - h))) / (2 * h)
                          for th in theta], dtype=float)
            return x, d
        if self.values.shape[0] != m + 1:
            raise ConfigurationError(
                f"sampled history has {self.values.shape[0]} rows, solver grid needs {m + 1}"
            )
        if self.derivs is not None:
            return self.values.copy(), self.derivs.copy()
        if m >= 2:
            d = np.gradient(self.values, dt, axis=0, edge_order=2)
        else:
            d = np.zeros_like(self.values)
        return self.values.copy(), d


@dataclass(frozen=True)
class DelaySystem:
    """A DDE ``x'(t) = f(t, x(t), x(t - tau_1), ..., int k(s) x(t - s) ds)``.

    ``kernel`` (optional) is a scalar weight function on ``[0, kernel_support]``
    applied componentwise.  ``periodic_delay = (sample_period, r)`` declares a
    zero-order-hold feedback with delay ``t - floor(t/h)*h + r*h``.
    """

    name: str
    n: int
    rhs: Callable
    params: dict
    discrete_delays: tuple = ()
    kernel: Optional[Callable] = None
    kernel_support: float = 0.0
    periodic_delay: Optional[tuple] = None

    @property
    def tau_max(self) -> float:
        taus = list(self.discrete_delays)
        if self.kernel is not None:
            taus.append(self.kernel_support)
        if self.periodic_delay is not None:
            h, r = self.periodic_delay
            taus.append((r + 1) * h)
        return max(taus) if taus else 0.0

    @property
    def param_vector(self) -> np.ndarray:
        return np.array([float(v) for v in self.params.values()], dtype=float)

    def evaluate(self, x, delayed=None, integral=None, t=0.0) -> np.ndarray:
        """Evaluate the right-hand side for explicit arguments."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        rows = len(self.discrete_delays) + (1 if self.periodic_delay is not None else 0)
        if delayed is None:
            xd = np.zeros((max(rows, 1), self.n))
        else:
            xd = np.asarray(delayed, dtype=float).reshape(-1, self.n)
            if rows == 0:
                xd = np.zeros((1, self.n))
        xi = np.zeros(self.n) if integral is None else np.atleast_1d(np.asarray(integral, dtype=float))
        return np.asarray(self.rhs(float(t), x, xd, xi, self.param_vector))

    def evaluate_at_constant(self, x, t=0.0) -> np.ndarray:
        """Right-hand side for the constant history ``x`` (all delays see ``x``)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        rows = len(self.discrete_delays) + (1 if self.periodic_delay is not None else 0)
        xd = np.repeat(x[None, :], max(rows, 1), axis=0)
        xi = x * self.kernel_mass() if self.kernel is not None else np.zeros(self.n)
        return np.asarray(self.rhs(float(t), x, xd, xi, self.param_vector))

    def kernel_mass(self) -> float:
        if self.kernel is None:
            return 0.0
        from scipy.integrate import quad

        return quad(self.kernel, 0.0, self.kernel_support)[0]

    def with_params(self, **kw) -> "DelaySystem":
        p = dict(self.params)
        p.update(kw)
        return replace(self, params=p)


# --------------------------------------------------------------------------
# step-size bookkeeping


def snap_step(dt: float, periods: Sequence[float], max_refine: int = 100000) -> float:
    """Largest step ``<= dt`` that divides every entry of ``periods``."""
    periods = [float(p) for p in periods if p > 0]
    if not periods:
        return float(dt)
    ref = min(periods)
    n0 = max(1, int(math.ceil(ref / dt - 1e-12)))
    for n in range(n0, n0 + max_refine):
        h = ref / n
        if all(abs(p / h - round(p / h)) <= 1e-9 * max(1.0, p / h) for p in periods):
            return h
    raise ConfigurationError(f"no step <= {dt} divides the delays {periods}")


# --------------------------------------------------------------------------
# kernels


@jit
def _delayed_value(X, F, k, half, lag, dt, M, FM_left, out):
    # state at grid position (k + 0.5*half - lag); Hermite midpoint when half.
    # Row M (t = t0) has a derivative jump: intervals ending there use the
    # history's own derivative FM_left.
    a = k - lag
    if half == 0:
        for c in range(X.shape[1]):
            out[c] = X[a, c]
    elif a + 1 == M:
        for c in range(X.shape[1]):
            out[c] = 0.5 * (X[a, c] + X[a + 1, c]) + 0.125 * dt * (F[a, c] - FM_left[c])
    else:
        for c in range(X.shape[1]):
            out[c] = 0.5 * (X[a, c] + X[a + 1, c]) + 0.125 * dt * (F[a, c] - F[a + 1, c])


@jit
def _fill_args(X, F, k, half, state, lags, zoh_idx, quant, qw, dt, M, FM_left, xd, xi, tmp):
    # k: index of the left end of the current step; half in {0, 1, 2}
    # meaning stage position k, k + 1/2, k + 1.
    kk = k + half // 2
    hh = half % 2
    for j in range(lags.shape[0]):
        _delayed_value(X, F, kk, hh, lags[j], dt, M, FM_left, tmp)
        for c in range(X.shape[1]):
            xd[j, c] = tmp[c]
    if zoh_idx >= 0:
        j = lags.shape[0]
        for c in range(X.shape[1]):
            v = X[zoh_idx, c]
            if quant > 0.0:
                v = quant * np.floor(v / quant + 0.5)
            xd[j, c] = v
    if qw.shape[0] > 0:
        _quadrature(X, F, kk, hh, state, qw, dt, M, FM_left, xi)


@jit
def _quadrature(X, F, k, half, state, qw, dt, M, FM_left, xi):
    # sum_i qw[i] x(k + half/2 - i), node 0 taken from the stage state
    n = X.shape[1]
    for c in range(n):
        acc = qw[0] * state[c]
        if half == 0:
            for i in range(1, qw.shape[0]):
                acc += qw[i] * X[k - i, c]
        else:
            for i in range(1, qw.shape[0]):
                a = k - i
                fr = FM_left[c] if a + 1 == M else F[a + 1, c]
                acc += qw[i] * (0.5 * (X[a, c] + X[a + 1, c]) + 0.125 * dt * (F[a, c] - fr))
        xi[c] = acc


@jit
def _integrate(rhs, p, X, F, M, nsteps, dt, t0, i0, lags, qw, zoh_period, zoh_r, quant, blowup):
    """Advance ``nsteps`` RK4 steps in place; returns the number completed."""
    n = X.shape[1]
    nrows = lags.shape[0] + (1 if zoh_period > 0 else 0)
    if nrows == 0:
        nrows = 1
    xd = np.zeros((nrows, n))
    xi = np.zeros(n)
    tmp = np.zeros(n)
    stage = np.zeros(n)
    FM_left = F[M].copy()

    def zoh_index(step):
        if zoh_period <= 0:
            return -1
        j = (i0 + step) // zoh_period
        return M + (j - zoh_r) * zoh_period - i0

    zi = zoh_index(0)
    _fill_args(X, F, M, 0, X[M], lags, zi, quant, qw, dt, M, FM_left, xd, xi, tmp)
    k1 = rhs(t0, X[M], xd, xi, p)
    for c in range(n):
        F[M, c] = k1[c]

    for i in range(nsteps):
        k = M + i
        t = t0 + i * dt
        zi = zoh_index(i)
        x = X[k]
        k1 = F[k].copy()
        for c in range(n):
            stage[c] = x[c] + 0.5 * dt * k1[c]
        _fill_args(X, F, k, 1, stage, lags, zi, quant, qw, dt, M, FM_left, xd, xi, tmp)
        k2 = rhs(t + 0.5 * dt, stage, xd, xi, p)
        for c in range(n):
            stage[c] = x[c] + 0.5 * dt * k2[c]
        _fill_args(X, F, k, 1, stage, lags, zi, quant, qw, dt, M, FM_left, xd, xi, tmp)
        k3 = rhs(t + 0.5 * dt, stage, xd, xi, p)
        for c in range(n):
            stage[c] = x[c] + dt * k3[c]
        _fill_args(X, F, k, 2, stage, lags, zi, quant, qw, dt, M, FM_left, xd, xi, tmp)
        k4 = rhs(t + dt, stage, xd, xi, p)
        bad = False
        for c in range(n):
            v = x[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
            X[k + 1, c] = v
            if not (abs(v) <= blowup):
                bad = True
        if bad:
            return i
        zi = zoh_index(i + 1)
        _fill_args(X, F, k + 1, 0, X[k + 1], lags, zi, quant, qw, dt, M, FM_left, xd, xi, tmp)
        f = rhs(t + dt, X[k + 1], xd, xi, p)
        for c in range(n):
            F[k + 1, c] = f[c]
    return nsteps


# --------------------------------------------------------------------------
# public drivers


def _run(system, history, t_end, dt, qw, zoh_period, zoh_r, quant, t0, save_every, snapped_periods):
    if t_end <= 0:
        raise ConfigurationError("t_end must be positive")
    dt = snap_step(dt, snapped_periods)
    lags = np.array([int(round(tau / dt)) for tau in system.discrete_delays], dtype=np.int64)
    m_hist = int(round(system.tau_max / dt)) if system.tau_max > 0 else 1
    m_hist = max(m_hist, 1, len(qw) - 1)
    if isinstance(history, (int, float, np.ndarray, list, tuple)):
        history = HistorySpec.constant(history)
    if history.n != system.n:
        raise ConfigurationError(f"history has dimension {history.n}, system has {system.n}")
    hx, hf = history.grid(m_hist, dt)
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        nsteps = int(math.ceil(t_end / dt))
    X = np.empty((m_hist + nsteps + 1, system.n))
    F = np.zeros_like(X)
    X[: m_hist + 1] = hx
    F[: m_hist + 1] = hf
    i0 = int(round(t0 / dt))
    done = _integrate(
        system.rhs, system.param_vector, X, F, m_hist, nsteps, dt, float(t0), i0,
        lags, np.asarray(qw, dtype=float), int(zoh_period), int(zoh_r), float(quant), BLOWUP,
    )
    if done < nsteps:
        keep = m_hist + done + 1
        partial = None
        if done >= 1:
            partial = Trajectory(t0, dt, X[m_hist:keep:save_every], F[m_hist:keep:save_every])
        raise DivergenceError(t0 + (done + 1) * dt, partial)
    sl = slice(m_hist, None, save_every)
    return Trajectory(float(t0), dt * save_every, X[sl].copy(), F[sl].copy())


def _trapezoid_weights(kernel, support, dt):
    m = int(round(support / dt))
    theta = dt * np.arange(m + 1)
    w = np.full(m + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w * np.asarray(kernel(theta), dtype=float)


def simulate(system: DelaySystem, history, t_end: float, dt: float, t0: float = 0.0,
             save_every: int = 1) -> Trajectory:
    """Integrate a system with discrete (and, if declared, distributed) delays.

    ``dt`` is snapped down so that it divides every delay; the step actually
    used is ``trajectory.dt / save_every``.
    """
    if system.periodic_delay is not None:
        raise ConfigurationError("system has a periodic delay; use simulate_digital")
    if system.kernel is not None:
        return simulate_distributed(system, history, t_end, dt, t0=t0, save_every=save_every)
    return _run(system, history, t_end, dt, np.zeros(0), 0, 0, 0.0, t0, save_every,
                list(system.discrete_delays))


def simulate_distributed(system: DelaySystem, history, t_end: float, dt: float, t0: float = 0.0,
                         save_every: int = 1) -> Trajectory:
    """Integrate a system whose right-hand side uses a distributed-delay integral.

    The integral is evaluated with the composite trapezoid rule on the solver
    grid, reading delayed values from the dense history.
    """
    if system.kernel is None:
        raise ConfigurationError("system has no distributed kernel")
    periods = list(system.discrete_delays) + [system.kernel_support]
    h = snap_step(dt, periods)
    qw = _trapezoid_weights(system.kernel, system.kernel_support, h)
    return _run(system, history, t_end, h, qw, 0, 0, 0.0, t0, save_every, periods)


def simulate_digital(system: DelaySystem, quantizer_resolution: float, history, t_end: float,
                     dt: float, t0: float = 0.0, save_every: int = 1) -> Trajectory:
    """Integrate a zero-order-hold feedback loop.

    The held sample ``x(j*h - r*h)`` (quantized to ``quantizer_resolution``
    when positive) is passed as the last row of ``xd`` and stays constant on
    each sampling interval ``[j*h, (j+1)*h)``.
    """
    if system.periodic_delay is None:
        raise ConfigurationError("system has no periodic delay")
    if quantizer_resolution < 0:
        raise ConfigurationError("quantizer resolution must be >= 0")
    hs, r = system.periodic_delay
    periods = list(system.discrete_delays) + [hs]
    step = snap_step(dt, periods)
    per = int(round(hs / step))
    return _run(system, history, t_end, step, np.zeros(0), per, int(r), quantizer_resolution,
                t0, save_every, periods)


def stroboscopic_sample(traj: Trajectory, period: float, phase: float = 0.0) -> Trajectory:
    """Samples at ``t = phase + j*period`` (the Poincare map of a periodic system)."""
    stride = period / traj.dt
    if abs(stride - round(stride)) > 1e-9 * max(1.0, stride) or round(stride) < 1:
        raise ConfigurationError(f"period {period} is not a multiple of dt {traj.dt}")
    stride = int(round(stride))
    off = (phase - traj.t0) / traj.dt
    if abs(off - round(off)) > 1e-9 * max(1.0, abs(off)):
        raise ConfigurationError("phase is not on the sampling grid")
    off = int(round(off)) % stride
    rows = traj.samples[off::stride]
    d = None if traj.derivs is None else traj.derivs[off::stride]
    return Trajectory(traj.t0 + off * traj.dt, stride * traj.dt, rows, d)


# --------------------------------------------------------------------------
# CSV


def write_trajectory_csv(traj: Trajectory, path):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t"] + [f"x{i + 1}" for i in range(traj.n)]) + "\n")
        for t, row in zip(traj.times, traj.samples):
            fh.write(",".join("%.12e" % v for v in (t, *row)) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected header starting with 't'")
        data = np.array([[float(v) for v in row] for row in reader if row])
    if data.shape[0] < 2:
        raise ValueError(f"{path}: fewer than two samples")
    t = data[:, 0]
    dt = float(np.mean(np.diff(t)))
    return Trajectory(float(t[0]), dt, data[:, 1:])
