"""Catalog of benchmark delay systems with their published parameter values."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._accel import jit
from .dde import DelaySystem


class CatalogError(KeyError):
    pass


# --------------------------------------------------------------------------
# right-hand sides; signature (t, x, xd, xi, p)


@jit
def hutchinson_rhs(t, x, xd, xi, p):
    r, K = p[0], p[1]
    out = np.empty(1)
    out[0] = r * x[0] * (1.0 - xd[0, 0] / K)
    return out


@jit
def mackey_glass_rhs(t, x, xd, xi, p):
    beta, gamma, alpha = p[0], p[1], p[2]
    u = xd[0, 0]
    out = np.empty(1)
    out[0] = beta * u / (1.0 + abs(u) ** alpha) - gamma * x[0]
    return out


@jit
def two_neuron_rhs(t, x, xd, xi, p):
    # xd rows: x(t - tau_s), x(t - tau_1), x(t - tau_2)
    kappa, beta, a12, a21 = p[0], p[1], p[2], p[3]
    out = np.empty(2)
    out[0] = -kappa * x[0] + beta * np.tanh(xd[0, 0]) + a12 * np.tanh(xd[2, 1])
    out[1] = -kappa * x[1] + beta * np.tanh(xd[0, 1]) + a21 * np.tanh(xd[1, 0])
    return out


@jit
def rossler_delay_rhs(t, x, xd, xi, p):
    # p: a1, a2, b1, b2, gamma, tau1, tau2, s1, s2, s3 (equilibrium shift)
    a1, a2, b1, b2, g = p[0], p[1], p[2], p[3], p[4]
    s1, s2, s3 = p[7], p[8], p[9]
    x1 = x[0] + s1
    x2 = x[1] + s2
    x3 = x[2] + s3
    out = np.empty(3)
    out[0] = -x2 - x3 + a1 * (xd[0, 0] + s1) + a2 * (xd[1, 0] + s1)
    out[1] = x1 + b1 * x2
    out[2] = b2 + x3 * x1 - g * x3
    return out


@jit
def range_policy(h, h_stop, h_go, v_max):
    if h <= h_stop:
        return 0.0
    if h >= h_go:
        return v_max
    return 0.5 * v_max * (1.0 - np.cos(np.pi * (h - h_stop) / (h_go - h_stop)))


@jit
def traffic_rhs(t, x, xd, xi, p):
    # state (h~, v~_{-1}, v~); p: alpha, beta, beta_hat, beta_m1, v_ref, h_stop, h_go, v_max, tau, h_star
    alpha, beta, bhat, bm1, vref = p[0], p[1], p[2], p[3], p[4]
    hs, hg, vmax, hstar = p[5], p[6], p[7], p[9]
    hd, v1d, vd = xd[0, 0], xd[0, 1], xd[0, 2]
    out = np.empty(3)
    out[0] = x[2] - x[1]
    out[1] = alpha * (range_policy(hd + hstar, hs, hg, vmax) - (v1d + vref)) + beta * (vd - v1d)
    out[2] = bhat * (vref - (vd + vref)) + bm1 * (v1d - vd)
    return out


@jit
def cushing_rhs(t, x, xd, xi, p):
    a, b = p[0], p[1]
    out = np.empty(1)
    out[0] = b * xi[0] + a * (x[0] - np.sin(x[0]))
    return out


@jit
def cushing_lifted_rhs(t, x, xd, xi, p):
    a, b = p[0], p[1]
    out = np.empty(2)
    out[0] = b * x[1] + a * (x[0] - np.sin(x[0]))
    out[1] = x[0] - xd[0, 0]
    return out


@jit
def micro_chaos_rhs(t, x, xd, xi, p):
    # held (already quantized) sample sits in the last row of xd
    a, gain = p[0], p[1]
    out = np.empty(1)
    out[0] = a * x[0] - gain * xd[xd.shape[0] - 1, 0]
    return out


def _unit_kernel(theta):
    return np.ones_like(np.asarray(theta, dtype=float))


# --------------------------------------------------------------------------
# helpers


def traffic_h_star(v_ref, h_stop, h_go, v_max, tol=1e-12):
    """Headway with ``V(h) = v_ref`` by bisection on the monotone ramp."""
    if not 0.0 < v_ref < v_max:
        raise ValueError("v_ref must lie strictly between 0 and v_max")
    lo, hi = h_stop, h_go
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if range_policy(mid, h_stop, h_go, v_max) < v_ref:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rossler_equilibrium(a1, a2, b1, b2, gamma, x0=None, tol=1e-14):
    """Newton on the algebraic equilibrium equations, started near the origin."""
    x = np.zeros(3) if x0 is None else np.array(x0, dtype=float)

    def g(x):
        return np.array([
            -x[1] - x[2] + (a1 + a2) * x[0],
            x[0] + b1 * x[1],
            b2 + x[2] * x[0] - gamma * x[2],
        ])

    for _ in range(50):
        J = np.array([
            [a1 + a2, -1.0, -1.0],
            [1.0, b1, 0.0],
            [x[2], 0.0, x[0] - gamma],
        ])
        step = np.linalg.solve(J, -g(x))
        x = x + step
        if np.max(np.abs(step)) < tol:
            break
    return x, float(np.max(np.abs(g(x))))


# --------------------------------------------------------------------------
# builders


def _hutchinson(p):
    return DelaySystem("hutchinson", 1, hutchinson_rhs, {"r": p["r"], "K": p["K"], "tau": p["tau"]},
                       (p["tau"],))


def _mackey_glass(p):
    return DelaySystem("mackey-glass", 1, mackey_glass_rhs,
                       {k: p[k] for k in ("beta", "gamma", "alpha", "tau")}, (p["tau"],))


def _two_neuron(p):
    return DelaySystem("two-neuron", 2, two_neuron_rhs,
                       {k: p[k] for k in ("kappa", "beta", "a12", "a21", "tau_s", "tau_1", "tau_2")},
                       (p["tau_s"], p["tau_1"], p["tau_2"]))


def _rossler(p):
    eq, _ = rossler_equilibrium(p["alpha1"], p["alpha2"], p["beta1"], p["beta2"], p["gamma"])
    params = {k: p[k] for k in ("alpha1", "alpha2", "beta1", "beta2", "gamma", "tau1", "tau2")}
    params.update({"shift1": eq[0], "shift2": eq[1], "shift3": eq[2]})
    return DelaySystem("rossler-delay", 3, rossler_delay_rhs, params, (p["tau1"], p["tau2"]))


def _traffic(p):
    hstar = traffic_h_star(p["v_ref"], p["h_stop"], p["h_go"], p["v_max"])
    params = {k: p[k] for k in ("alpha", "beta", "beta_hat", "beta_m1", "v_ref", "h_stop", "h_go",
                                "v_max", "tau")}
    params["h_star"] = hstar
    return DelaySystem("traffic", 3, traffic_rhs, params, (p["tau"],))


def _cushing(p):
    tau = p["tau"]
    return DelaySystem("cushing", 1, cushing_rhs, {"a": p["a"], "b": p["b"], "tau": tau}, (),
                       kernel=_unit_kernel, kernel_support=tau)


def _cushing_lifted(p):
    return DelaySystem("cushing-lifted", 2, cushing_lifted_rhs, {"a": p["a"], "b": p["b"], "tau": p["tau"]},
                       (p["tau"],))


def _micro_chaos(p):
    return micro_chaos_toy(p["a"], p["p_gain"], p["resolution"], p["sample_period"], int(p["r"]))


def micro_chaos_toy(a: float, p_gain: float, resolution: float, sample_period: float, r: int) -> DelaySystem:
    """Scalar unstable plant under quantized, delayed, sampled P-control.

    ``x' = a*x - p_gain*q(x(t - rho(t)))`` with the zero-order-hold delay
    ``rho(t) = t - h*floor(t/h) + r*h``.  The resolution is carried in
    ``params`` so :func:`simulate_digital` callers can read it back.
    """
    if a <= 0:
        raise ValueError("the open-loop plant must be unstable (a > 0)")
    return DelaySystem("micro-chaos", 1, micro_chaos_rhs,
                       {"a": a, "p_gain": p_gain, "resolution": resolution,
                        "sample_period": sample_period, "r": float(r)},
                       (), periodic_delay=(sample_period, int(r)))


def micro_chaos_map(a, p_gain, resolution, sample_period, r, x_hist, nsteps):
    """Exact sampled dynamics of the micro-chaos loop.

    ``x_hist`` holds ``x((j - r)h), ..., x(jh)`` (``r + 1`` values) at the start.
    Between samples the plant is linear with constant input, so
    ``x_{j+1} = e^{ah} x_j - (e^{ah} - 1)/a * p_gain * q(x_{j-r})``.
    Returns the sampled orbit ``x_0, ..., x_nsteps``.
    """
    e = math.exp(a * sample_period)
    c = (e - 1.0) / a * p_gain
    buf = list(np.asarray(x_hist, dtype=float).ravel())
    if len(buf) != r + 1:
        raise ValueError("x_hist must hold r + 1 samples")
    out = [buf[-1]]
    for _ in range(nsteps):
        held = buf[-1 - r]
        if resolution > 0:
            held = resolution * math.floor(held / resolution + 0.5)
        nxt = e * buf[-1] - c * held
        buf.append(nxt)
        buf = buf[-(r + 1):]
        out.append(nxt)
    return np.array(out)


@dataclass(frozen=True)
class SystemCatalogEntry:
    name: str
    builder: Callable
    default_params: dict
    equilibrium: Callable = field(compare=False)
    description: str = ""

    def build(self, overrides=None) -> DelaySystem:
        overrides = dict(overrides or {})
        unknown = set(overrides) - set(self.default_params)
        if unknown:
            raise CatalogError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        p = dict(self.default_params)
        p.update({k: float(v) for k, v in overrides.items()})
        return self.builder(p)

    def equilibrium_for(self, overrides=None) -> np.ndarray:
        p = dict(self.default_params)
        p.update(overrides or {})
        return np.asarray(self.equilibrium(p), dtype=float)


CATALOG = {
    "hutchinson": SystemCatalogEntry(
        "hutchinson", _hutchinson, {"r": 1.8, "K": 10.0, "tau": 1.0},
        lambda p: [p["K"]], "x' = r x (1 - x(t - tau)/K)"),
    "mackey-glass": SystemCatalogEntry(
        "mackey-glass", _mackey_glass, {"beta": 4.0, "gamma": 2.0, "alpha": 9.6, "tau": 1.0},
        lambda p: [0.0], "x' = beta x(t-tau)/(1 + |x(t-tau)|^alpha) - gamma x"),
    "two-neuron": SystemCatalogEntry(
        "two-neuron", _two_neuron,
        {"kappa": 0.5, "beta": -1.0, "a12": 1.0, "a21": 2.0, "tau_s": 1.5, "tau_1": 2.0, "tau_2": 2.0},
        lambda p: [0.0, 0.0], "two neurons with self and cross delays"),
    "rossler-delay": SystemCatalogEntry(
        "rossler-delay", _rossler,
        {"alpha1": 0.2, "alpha2": 1.0, "beta1": 0.2, "beta2": 0.2, "gamma": 1.2, "tau1": 1.0, "tau2": 2.0},
        lambda p: [0.0, 0.0, 0.0], "Rossler-like system with two delays, shifted to its equilibrium"),
    "traffic": SystemCatalogEntry(
        "traffic", _traffic,
        {"alpha": 0.3, "beta": 0.4, "beta_hat": 0.6, "beta_m1": -0.4, "v_ref": 26.55,
         "h_stop": 5.0, "h_go": 55.0, "v_max": 30.0, "tau": 1.05},
        lambda p: [0.0, 0.0, 0.0], "human-driven / automated car-following pair"),
    "cushing": SystemCatalogEntry(
        "cushing", _cushing, {"a": 1.0, "b": -3.0, "tau": 1.0},
        lambda p: [0.0], "x' = b int_0^tau x(t-s) ds + a (x - sin x)"),
    "cushing-lifted": SystemCatalogEntry(
        "cushing-lifted", _cushing_lifted, {"a": 1.0, "b": -3.0, "tau": 1.0},
        lambda p: [0.0, 0.0], "Cushing equation with z = int_{t-tau}^t x"),
    "micro-chaos": SystemCatalogEntry(
        "micro-chaos", _micro_chaos,
        {"a": 1.0, "p_gain": 3.0, "resolution": 0.01, "sample_period": 0.2, "r": 0.0},
        lambda p: [0.0], "quantized sampled P-control of x' = a x"),
}


def build(name: str, overrides=None) -> DelaySystem:
    try:
        entry = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown system {name!r}; known: {sorted(CATALOG)}") from None
    return entry.build(overrides)


def equilibrium(name: str, overrides=None) -> np.ndarray:
    return CATALOG[name].equilibrium_for(overrides)


def catalog_listing() -> dict:
    return {k: {"params": dict(v.default_params), "description": v.description} for k, v in CATALOG.items()}
