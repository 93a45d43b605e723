"""Parameter-dependent SSM families, Poincare maps and limit-cycle folds."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.stats import qmc

from ._accel import HAVE_NUMBA, jit
from .ssm import MultiIndexBasis, PolyField, SSMError, SSMModel, _poly_field_nb, model_eigenvalues

NODE_TOL = 1e-12
SECTION_TOL = 1e-10
DEDUP_TOL = 1e-6


class ParametricError(Exception):
    pass


class NoReturnError(ParametricError):
    pass


# --- gauge fixing -------------------------------------------------------------

def procrustes(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthogonal ``Q`` minimising ``|A Q - B|_F``."""
    U, _, Wt = np.linalg.svd(A.T @ B)
    return U @ Wt


def _refit(func, d: int, basis: MultiIndexBasis, scale: np.ndarray, rows: int) -> np.ndarray:
    """Coefficients ``C`` with ``func(eta) = basis(eta / scale) @ C.T`` (exact for polynomials)."""
    n = max(4 * len(basis), 64)
    # unscrambled Halton points are deterministic and unisolvent in practice
    g = 2.0 * qmc.Halton(d, scramble=False).random(n + 1)[1:] - 1.0
    eta = g * scale
    Phi = basis(eta / scale)
    T = func(eta)
    C, *_ = np.linalg.lstsq(Phi, T, rcond=None)
    return C.T.reshape(rows, len(basis))


def rotate_model(model: SSMModel, Q: np.ndarray, scale: np.ndarray) -> SSMModel:
    """Same manifold and dynamics in coordinates ``eta' = Q^T eta`` with a new monomial scale."""
    d = model.d
    V1 = model.V1 @ Q
    basis = model.man_basis
    if len(basis):
        def nl(e):
            return model.man_basis((e @ Q.T) / model.scale) @ model.V_nl.T
        V_nl = _refit(nl, d, basis, scale, model.k)
        V_nl = V_nl - V1 @ (V1.T @ V_nl)
    else:
        V_nl = model.V_nl.copy()
    dyn = model.dynamics
    if isinstance(dyn, PolyField):
        def fld(e):
            return dyn(e @ Q.T) @ Q
        R = _refit(fld, d, dyn.basis, scale, d)
        dyn = PolyField(R, dyn.basis, scale.copy())
    elif dyn is not None:
        raise ParametricError("only polynomial reduced dynamics can be interpolated")
    return replace(model, V1=V1, V_nl=V_nl, scale=scale.copy(), dynamics=dyn)


def _polar(V):
    U, _, Wt = np.linalg.svd(V, full_matrices=False)
    return U @ Wt


# --- parametric family -------------------------------------------------------

class ParametricSSM:
    """SSM models at sorted parameter nodes, aligned to a common gauge."""

    def __init__(self, nodes: Sequence[float], models: Sequence[SSMModel], scheme: str = "linear",
                 align: bool = True, radii: Optional[Sequence[float]] = None):
        nodes = np.asarray(nodes, dtype=float)
        if len(nodes) != len(models) or len(nodes) < 2:
            raise ParametricError("need at least two nodes, one model per node")
        order = np.argsort(nodes)
        nodes = nodes[order]
        models = [models[i] for i in order]
        if radii is not None:
            radii = np.asarray(radii, dtype=float)
            if radii.shape != nodes.shape:
                raise ParametricError("one data radius per node")
            radii = radii[order]
        if np.any(np.diff(nodes) <= 0):
            raise ParametricError("nodes must be distinct")
        if scheme not in ("linear", "spline"):
            raise ParametricError(f"unknown scheme {scheme!r}")
        ref = models[0]
        for m in models[1:]:
            same = (m.d == ref.d and m.k == ref.k and m.man_basis == ref.man_basis
                    and isinstance(m.dynamics, PolyField) and isinstance(ref.dynamics, PolyField)
                    and m.dynamics.basis == ref.dynamics.basis)
            if not same:
                raise ParametricError("node models must share d, k, manifold and dynamics orders")
        if align:
            scale = np.full(ref.d, max(float(np.max(m.scale)) for m in models))
            aligned = []
            for m in models:
                Q = procrustes(m.V1, ref.V1)
                aligned.append(rotate_model(m, Q, scale))
            models = aligned
        self.nodes = nodes
        self.radii = radii
        self.models = list(models)
        self.scheme = scheme
        self._stack = {
            "V1": np.stack([m.V1 for m in models]),
            "V_nl": np.stack([m.V_nl for m in models]),
            "R": np.stack([m.dynamics.R for m in models]),
            "anchor": np.stack([m.anchor for m in models]),
        }
        if scheme == "spline":
            self._splines = {k: CubicSpline(nodes, v, axis=0) for k, v in self._stack.items()}

    def _value(self, key, mu):
        if self.scheme == "spline":
            return self._splines[key](mu)
        arr = self._stack[key]
        i = int(np.clip(np.searchsorted(self.nodes, mu, side="right") - 1, 0, len(self.nodes) - 2))
        w = (mu - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i])
        if w == 0.0:
            return arr[i].copy()
        if w == 1.0:
            return arr[i + 1].copy()
        return (1.0 - w) * arr[i] + w * arr[i + 1]

    def radius(self, mu: float) -> float:
        """Trusted reduced-coordinate radius at ``mu`` (linear in the node radii), inf if unknown."""
        if self.radii is None:
            return math.inf
        return float(np.interp(mu, self.nodes, self.radii))

    def interpolate(self, mu: float) -> SSMModel:
        mu = float(mu)
        lo, hi = self.nodes[0], self.nodes[-1]
        if mu < lo - NODE_TOL or mu > hi + NODE_TOL:
            raise ParametricError(f"parameter {mu} outside node hull [{lo}, {hi}]")
        mu = min(max(mu, lo), hi)
        ref = self.models[0]
        V1 = _polar(self._value("V1", mu))
        V_nl = self._value("V_nl", mu)
        V_nl = V_nl - V1 @ (V1.T @ V_nl)
        R = self._value("R", mu)
        dyn = PolyField(R, ref.dynamics.basis, ref.dynamics.scale.copy())
        return replace(ref, V1=V1, V_nl=V_nl, anchor=self._value("anchor", mu), dynamics=dyn)


# --- Poincare sections ---------------------------------------------------------

@dataclass(frozen=True)
class PoincareSection:
    """Line ``n . (eta - base) = 0`` in a 2-D reduced space, crossed with ``n . eta_dot`` of sign ``orientation``."""

    base: np.ndarray = field(default_factory=lambda: np.zeros(2))
    normal: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    orientation: int = 1

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (2,):
            raise ParametricError("Poincare sections are implemented for 2-D reduced spaces")
        nrm = np.linalg.norm(n)
        if nrm == 0:
            raise ParametricError("zero section normal")
        object.__setattr__(self, "normal", n / nrm)
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        if self.orientation not in (1, -1):
            raise ParametricError("orientation must be +1 or -1")

    @property
    def tangent(self) -> np.ndarray:
        n = self.normal
        return np.array([-n[1], n[0]])

    def signed(self, eta) -> float:
        return float(self.orientation * self.normal @ (np.asarray(eta) - self.base))

    def point(self, x: float) -> np.ndarray:
        return self.base + x * self.tangent

    def coord(self, eta) -> float:
        return float(self.tangent @ (np.asarray(eta) - self.base))


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def typical_period(model: SSMModel) -> float:
    ev = model_eigenvalues(model)
    w = np.max(np.abs(ev.imag))
    return 2 * math.pi / w if w > 1e-8 else 10.0


@jit
def _rk4_poly_step(idx, R, scale, hi, y, h, pw, k1, k2, k3, k4, tmp, out):
    d = y.shape[0]
    _poly_field_nb(idx, R, scale, hi, y, pw, k1)
    for j in range(d):
        tmp[j] = y[j] + 0.5 * h * k1[j]
    _poly_field_nb(idx, R, scale, hi, tmp, pw, k2)
    for j in range(d):
        tmp[j] = y[j] + 0.5 * h * k2[j]
    _poly_field_nb(idx, R, scale, hi, tmp, pw, k3)
    for j in range(d):
        tmp[j] = y[j] + h * k3[j]
    _poly_field_nb(idx, R, scale, hi, tmp, pw, k4)
    for j in range(d):
        out[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])


@jit
def _poincare_nb(idx, R, scale, hi, y0, normal, base, orient, h, max_steps, gtol):
    d = y0.shape[0]
    pw = np.empty((d, hi + 1))
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    y = y0.copy()
    yn = np.empty(d)
    g = 0.0
    for j in range(d):
        g += orient * normal[j] * (y[j] - base[j])
    for step in range(max_steps):
        _rk4_poly_step(idx, R, scale, hi, y, h, pw, k1, k2, k3, k4, tmp, yn)
        gn = 0.0
        for j in range(d):
            if not np.isfinite(yn[j]):
                return yn, -1.0
            gn += orient * normal[j] * (yn[j] - base[j])
        if g < 0.0 <= gn:
            lo = 0.0
            hi_ = h
            for _ in range(200):
                mid = 0.5 * (lo + hi_)
                _rk4_poly_step(idx, R, scale, hi, y, mid, pw, k1, k2, k3, k4, tmp, yn)
                gm = 0.0
                for j in range(d):
                    gm += orient * normal[j] * (yn[j] - base[j])
                if gm < 0.0:
                    lo = mid
                else:
                    hi_ = mid
                if hi_ - lo < 1e-14 or abs(gm) < gtol:
                    break
            sigma = 0.5 * (lo + hi_)
            _rk4_poly_step(idx, R, scale, hi, y, sigma, pw, k1, k2, k3, k4, tmp, yn)
            return yn, step * h + sigma
        for j in range(d):
            y[j] = yn[j]
        g = gn
    return y, -2.0


def poincare_map(model, section: PoincareSection, x0: float, h: Optional[float] = None,
                 max_time: Optional[float] = None):
    """First same-orientation return of ``section.point(x0)``; returns ``(x1, return_time)``.

    ``model`` is an SSMModel with a PolyField, a bare PolyField, or any
    callable field ``f(eta)``.  The crossing is located by bisection on the
    RK4 sub-step until the signed section distance is below 1e-10.
    """
    T = 2 * math.pi
    if isinstance(model, SSMModel):
        if not isinstance(model.dynamics, PolyField):
            raise ParametricError("Poincare maps need continuous polynomial dynamics")
        T = typical_period(model)
        field_ = model.dynamics
    else:
        field_ = model
    h = T / 400.0 if h is None else h
    max_time = 10.0 * T if max_time is None else max_time
    y0 = section.point(x0)
    if isinstance(field_, PolyField) and HAVE_NUMBA:
        yc, t = _poincare_nb(field_.basis.indices, np.ascontiguousarray(field_.R), field_.scale,
                             max(field_.basis.hi, 1), y0, section.normal, section.base,
                             float(section.orientation), float(h), int(math.ceil(max_time / h)),
                             SECTION_TOL * 1e-2)
        if t == -1.0:
            raise NoReturnError("orbit diverged before returning")
        if t < 0:
            raise NoReturnError(f"no return to the section within {max_time:g}")
        return section.coord(yc), float(t)

    def f(y):
        v = field_(y)
        return v[0] if np.ndim(v) == 2 else v

    y = y0
    g = section.signed(y)
    t = 0.0
    while t < max_time:
        yn = _rk4_step(f, y, h)
        if not np.all(np.isfinite(yn)):
            raise NoReturnError("orbit diverged before returning")
        gn = section.signed(yn)
        if g < 0 <= gn:
            lo, hi = 0.0, h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                gm = section.signed(_rk4_step(f, y, mid))
                if gm < 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-14 or abs(gm) < SECTION_TOL * 1e-2:
                    break
            sigma = 0.5 * (lo + hi)
            return section.coord(_rk4_step(f, y, sigma)), t + sigma
        y, g, t = yn, gn, t + h
    raise NoReturnError(f"no return to the section within {max_time:g}")


# --- fixed points ----------------------------------------------------------------

@dataclass
class FixedPoint:
    x: float
    abs_dP: float
    stable: bool


def find_fixed_points(P: Callable, seeds, maxit: int = 50, tol: float = 1e-10,
                      exclude_zero: float = 1e-6) -> List[FixedPoint]:
    """Newton on ``P(x) - x`` from each seed with a central-difference derivative."""
    out: List[FixedPoint] = []
    for s in seeds:
        x = float(s)
        ok = False
        try:
            for _ in range(maxit):
                hstep = 1e-6 * max(1.0, abs(x))
                F = P(x) - x
                dF = (P(x + hstep) - P(x - hstep)) / (2 * hstep) - 1.0
                if dF == 0 or not np.isfinite(dF):
                    break
                step = F / dF
                x -= step
                if not np.isfinite(x):
                    break
                if abs(step) < tol * max(1.0, abs(x)):
                    ok = abs(P(x) - x) < 1e-8 * max(1.0, abs(x))
                    break
        except (NoReturnError, FloatingPointError, OverflowError):
            continue
        if not ok or abs(x) < exclude_zero:
            continue
        if any(abs(x - q.x) < DEDUP_TOL for q in out):
            continue
        try:
            hstep = 1e-6 * max(1.0, abs(x))
            dP = (P(x + hstep) - P(x - hstep)) / (2 * hstep)
        except NoReturnError:
            continue
        out.append(FixedPoint(x, abs(dP), abs(dP) < 1.0))
    return sorted(out, key=lambda q: q.x)


def default_seeds(radius: float, n: int = 20, orientation_side: Optional[int] = None) -> np.ndarray:
    """``n`` uniform points on the section within ``radius`` (zero excluded)."""
    if orientation_side is None:
        pts = np.linspace(-radius, radius, n + 1)
        return pts[np.abs(pts) > 1e-12][:n] if n % 2 == 0 else pts[:n]
    return orientation_side * np.linspace(radius / n, radius, n)


def find_limit_cycles(model, section: PoincareSection, seeds, h=None, max_time=None) -> List[FixedPoint]:
    seeds = list(seeds)
    if not seeds:
        raise ParametricError("no seeds given")
    P = lambda x: poincare_map(model, section, x, h, max_time)[0]  # noqa: E731
    return find_fixed_points(P, seeds)


def symmetry_defect(model: SSMModel, points) -> float:
    """Mean ``|R(-eta) + R(eta)|`` over ``points``; zero for an odd field."""
    if not isinstance(model.dynamics, PolyField):
        raise SSMError("symmetry defect needs polynomial dynamics")
    pts = np.atleast_2d(points)
    f = model.dynamics
    return float(np.mean(np.linalg.norm(f(pts) + f(-pts), axis=1)))


# --- bifurcation diagrams --------------------------------------------------------

@dataclass
class BifurcationDiagram:
    rows: list = field(default_factory=list)          # (mu, x, |P'|, stable)
    folds: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    gaps: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("mu,section_coord,abs_P_prime,stable\n")
            for mu, x, dp, st in self.rows:
                fh.write("%.12e,%.12e,%.12e,%d\n" % (mu, x, dp, int(st)))


def fold_scan(finder: Callable, grid, tol: float = 1e-4) -> BifurcationDiagram:
    """Fixed points along ``grid``; folds are brackets where the count changes by two.

    Other count changes are recorded as gaps, not folds.
    ``finder(mu)`` returns a list of FixedPoint.  Each bracket is refined by
    bisection on the fixed-point count until narrower than ``tol``.
    """
    grid = list(grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParametricError("grid must be strictly increasing")
    diag = BifurcationDiagram()
    counts = []
    for mu in grid:
        try:
            fps = finder(mu)
        except ParametricError as exc:
            diag.gaps.append((mu, str(exc)))
            counts.append(None)
            continue
        counts.append(len(fps))
        diag.counts[mu] = len(fps)
        for q in fps:
            diag.rows.append((mu, q.x, q.abs_dP, q.stable))
    for i in range(len(grid) - 1):
        ca, cb = counts[i], counts[i + 1]
        if ca is None or cb is None or ca == cb:
            continue
        if abs(ca - cb) != 2:
            # a branch left the search domain or two folds share a cell; not a single fold
            msg = f"fixed-point count jumps {ca} -> {cb} between {grid[i]} and {grid[i + 1]}"
            warnings.warn(msg, RuntimeWarning)
            diag.gaps.append((grid[i], msg))
            continue
        lo, hi = grid[i], grid[i + 1]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            try:
                cm = len(finder(mid))
            except ParametricError:
                break
            if cm == ca:
                lo = mid
            else:
                hi = mid
        diag.folds.append(0.5 * (lo + hi))
    return diag


def family_finder(family: ParametricSSM, section: PoincareSection, seeds=None, h=None, max_time=None,
                  n_seeds: int = 20):
    """``finder(mu)`` for fold_scan on an interpolated SSM family.

    Without explicit ``seeds`` they are spread over the trusted radius of the
    family, and fixed points outside that radius are discarded: beyond the
    data the fitted field is an extrapolation.
    """
    def finder(mu):
        r = family.radius(mu)
        sd = seeds
        if sd is None:
            if not math.isfinite(r):
                raise ParametricError("seeds are required when the family has no data radii")
            sd = default_seeds(r, n_seeds)
        fps = find_limit_cycles(family.interpolate(mu), section, sd, h, max_time)
        return [q for q in fps if abs(q.x) <= r]
    return finder
