"""Characteristic roots of linearized delay equations.

The linearization ``x' = L x + sum_j R_j x(t - tau_j) + B int_0^s k(u) x(t - u) du``
has characteristic matrix

    Delta(mu) = mu I - L - sum_j R_j exp(-mu tau_j) - B K(mu),

with ``K(mu) = int_0^s k(u) exp(-mu u) du``.  Roots are located by Newton
iteration on ``det Delta`` from a grid of seeds.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-7
DEDUP_TOL = 1e-6


class SpectrumError(Exception):
    pass


def _unit_kernel_transform(mu, s):
    # int_0^s exp(-mu u) du, series near mu = 0
    if abs(mu) < 1e-4:
        ms = mu * s
        return s * (1.0 - ms / 2.0 + ms * ms / 6.0 - ms ** 3 / 24.0)
    return (1.0 - np.exp(-mu * s)) / mu


@dataclass
class CharMatrix:
    L: np.ndarray
    R: list
    taus: list
    B: Optional[np.ndarray] = None
    support: float = 0.0
    transform: Optional[Callable] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def is_real(self) -> bool:
        mats = [self.L] + list(self.R) + ([self.B] if self.B is not None else [])
        return all(np.isrealobj(m) for m in mats)

    def __call__(self, mu) -> np.ndarray:
        mu = complex(mu)
        D = mu * np.eye(self.n, dtype=complex) - self.L
        for Rj, tj in zip(self.R, self.taus):
            D = D - Rj * np.exp(-mu * tj)
        if self.B is not None:
            D = D - self.B * self.transform(mu, self.support)
        return D

    def det(self, mu) -> complex:
        return complex(np.linalg.det(self(mu)))

    def ddet(self, mu, h=FD_STEP) -> complex:
        """Derivative of det by central differences, averaged over both axes."""
        dre = (self.det(mu + h) - self.det(mu - h)) / (2 * h)
        dim = (self.det(mu + 1j * h) - self.det(mu - 1j * h)) / (2j * h)
        return 0.5 * (dre + dim)

    def derivative(self, mu) -> np.ndarray:
        """d Delta / d mu (used for eigenvector normalisation)."""
        mu = complex(mu)
        D = np.eye(self.n, dtype=complex)
        for Rj, tj in zip(self.R, self.taus):
            D = D + Rj * tj * np.exp(-mu * tj)
        if self.B is not None:
            h = FD_STEP
            dK = (self.transform(mu + h, self.support) - self.transform(mu - h, self.support)) / (2 * h)
            D = D - self.B * dK
        return D


@dataclass
class Spectrum:
    roots: np.ndarray
    residuals: np.ndarray
    window: tuple

    def __len__(self):
        return len(self.roots)

    def rightmost(self, k: int) -> np.ndarray:
        return self.roots[:k]

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("re,im,residual\n")
            for z, r in zip(self.roots, self.residuals):
                fh.write("%.12e,%.12e,%.6e\n" % (z.real, z.imag, r))


def linearize(system, at, step=1e-6, tol=1e-10) -> CharMatrix:
    """Jacobians of the right-hand side at a constant equilibrium history."""
    x0 = np.atleast_1d(np.asarray(at, dtype=float))
    n = system.n
    res = system.evaluate_at_constant(x0)
    if np.max(np.abs(res)) > tol:
        raise SpectrumError(f"not an equilibrium: |f(x*)| = {np.max(np.abs(res)):.3g}")
    if system.periodic_delay is not None:
        raise SpectrumError("periodic-delay systems have no constant-coefficient linearization")
    m = len(system.discrete_delays)
    xd0 = np.repeat(x0[None, :], max(m, 1), axis=0)
    mass = system.kernel_mass() if system.kernel is not None else 0.0
    xi0 = x0 * mass

    def f(x, xd, xi):
        return system.evaluate(x, xd, xi)

    L = np.zeros((n, n))
    R = [np.zeros((n, n)) for _ in range(m)]
    B = np.zeros((n, n)) if system.kernel is not None else None
    for c in range(n):
        e = np.zeros(n)
        e[c] = step
        L[:, c] = (f(x0 + e, xd0, xi0) - f(x0 - e, xd0, xi0)) / (2 * step)
        for j in range(m):
            dp = xd0.copy()
            dm = xd0.copy()
            dp[j] += e
            dm[j] -= e
            R[j][:, c] = (f(x0, dp, xi0) - f(x0, dm, xi0)) / (2 * step)
        if B is not None:
            B[:, c] = (f(x0, xd0, xi0 + e) - f(x0, xd0, xi0 - e)) / (2 * step)
    # merge coincident delays so each tau appears once
    taus, mats = [], []
    for tj, Rj in zip(system.discrete_delays, R):
        for i, t in enumerate(taus):
            if abs(t - tj) < 1e-14:
                mats[i] = mats[i] + Rj
                break
        else:
            taus.append(float(tj))
            mats.append(Rj)
    transform = None
    if B is not None:
        transform = _kernel_transform(system.kernel, system.kernel_support)
    return CharMatrix(L, mats, taus, B, system.kernel_support, transform)


def _kernel_transform(kernel, support):
    probe = np.linspace(0.0, support, 7)
    kv = np.asarray(kernel(probe), dtype=float)
    if np.allclose(kv, kv[0]):
        c = float(kv[0])
        return lambda mu, s: c * _unit_kernel_transform(mu, s)
    nodes, weights = np.polynomial.legendre.leggauss(64)
    u = 0.5 * support * (nodes + 1.0)
    w = 0.5 * support * weights * np.asarray(kernel(u), dtype=float)
    return lambda mu, s: complex(np.sum(w * np.exp(-mu * u)))


def _newton(cm: CharMatrix, mu, maxit=80):
    for _ in range(maxit):
        f = cm.det(mu)
        df = cm.ddet(mu)
        if df == 0 or not np.isfinite(df):
            return None
        step = f / df
        # damp very long steps, the quasi-polynomial has many basins
        if abs(step) > 2.0:
            step *= 2.0 / abs(step)
        mu = mu - step
        if not np.isfinite(mu):
            return None
        if abs(step) < 1e-13 * (1.0 + abs(mu)):
            break
    return mu


def polish_root(cm: CharMatrix, mu):
    r = _newton(cm, complex(mu))
    if r is None:
        raise SpectrumError("Newton polish failed")
    return r


def residual_ok(cm: CharMatrix, mu) -> bool:
    return abs(cm.det(mu)) < 1e-9 * (1.0 + abs(mu) ** cm.n)


def roots_in_window(cm: CharMatrix, re_min: float, re_max: float, im_max: float,
                    seeds_per_axis: int = 20) -> Spectrum:
    """Roots of ``det Delta`` with ``re_min <= Re <= re_max`` and ``|Im| <= im_max``."""
    if not (re_min < re_max and im_max > 0):
        raise SpectrumError("empty search window")
    real = cm.is_real
    ims = np.linspace(0.0 if real else -im_max, im_max, seeds_per_axis)
    res_ = np.linspace(re_min, re_max, seeds_per_axis)
    found = []
    for a in res_:
        for b in ims:
            r = _newton(cm, complex(a, b))
            if r is None or not residual_ok(cm, r):
                continue
            if real and abs(r.imag) < 1e-9:
                r = complex(r.real, 0.0)
            cands = [r, r.conjugate()] if real and r.imag != 0 else [r]
            for c in cands:
                if not (re_min - 1e-9 <= c.real <= re_max + 1e-9 and abs(c.imag) <= im_max + 1e-9):
                    continue
                if all(abs(c - q) > DEDUP_TOL for q in found):
                    found.append(c)
    if not found:
        warnings.warn("no seed converged inside the window", RuntimeWarning)
    roots = np.array(sorted(found, key=lambda z: (-z.real, z.imag)), dtype=complex)
    resid = np.array([abs(cm.det(z)) for z in roots])
    return Spectrum(roots, resid, (re_min, re_max, im_max))


def smoothness_class(spec: Spectrum, sigma_size: int, k_cap: int = 50):
    """Largest ``l <= k_cap`` with ``sup Re(rest) < l * inf Re(Sigma)``.

    ``Sigma`` is the ``sigma_size`` rightmost roots, grown to include the
    partner of a conjugate pair cut at the boundary.  Returns ``math.inf``
    when ``Sigma`` is unstable and the rest is stable, 0 if no ``l >= 1``
    satisfies the gap condition.
    """
    if len(spec.roots) < sigma_size + 1:
        raise SpectrumError("spectrum must contain more roots than sigma_size")
    re = np.sort(spec.roots.real)[::-1]
    # a real SSM needs Sigma closed under conjugation: never split a pair
    while sigma_size < len(re) and abs(re[sigma_size] - re[sigma_size - 1]) < DEDUP_TOL:
        sigma_size += 1
    if sigma_size >= len(re):
        raise SpectrumError("spectrum must contain more roots than sigma_size")
    inner = re[sigma_size - 1]
    outer = re[sigma_size]
    if inner > 0 > outer:
        return math.inf
    if inner > 0:
        return k_cap
    if inner == 0:
        return 0
    ratio = outer / inner
    ell = math.ceil(ratio) - 1
    if abs(ratio - round(ratio)) < 1e-10:
        warnings.warn("spectral gap is resonant; returning conservative class", RuntimeWarning)
        ell = int(round(ratio)) - 1
    return int(max(0, min(ell, k_cap)))


def dominant_root(cm: CharMatrix, window=(-3.0, 3.0, 10.0), seeds_per_axis=15):
    spec = roots_in_window(cm, *window, seeds_per_axis=seeds_per_axis)
    if len(spec) == 0:
        raise SpectrumError("no roots found")
    return spec.roots[0]


def track_rightmost(builder, param: str, grid, at=None, window=(-3.0, 3.0, 10.0),
                    seeds_per_axis=12, bisect_tol=1e-4):
    """Follow the rightmost root along ``grid`` and locate sign changes of its real part.

    ``builder(value)`` returns ``(system, equilibrium)``.  Returns the list of
    ``(value, root)`` and the list of crossing parameters.
    """
    grid = list(grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise SpectrumError("grid must be sorted")

    def cm_at(v):
        system, eq = builder(v)
        return linearize(system, eq)

    def rightmost(v, guess):
        cm = cm_at(v)
        if guess is not None:
            r = _newton(cm, guess)
            if r is not None and residual_ok(cm, r):
                # guard against jumping to a different branch
                spec = roots_in_window(cm, r.real - 0.05, window[1], window[2], seeds_per_axis=6)
                if len(spec) == 0 or spec.roots[0].real <= r.real + 1e-9:
                    return complex(r.real, abs(r.imag))
        root = dominant_root(cm, window, seeds_per_axis)
        return complex(root.real, abs(root.imag))

    out = []
    guess = None
    for v in grid:
        guess = rightmost(v, guess)
        out.append((v, guess))
    crossings = []
    for (va, ra), (vb, rb) in zip(out, out[1:]):
        if ra.real == 0.0:
            crossings.append(va)
            continue
        if ra.real * rb.real < 0:
            lo, hi, glo = va, vb, ra
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                rm = rightmost(mid, glo)
                if (rm.real < 0) == (ra.real < 0):
                    lo, glo = mid, rm
                else:
                    hi = mid
            crossings.append(0.5 * (lo + hi))
    return out, crossings
