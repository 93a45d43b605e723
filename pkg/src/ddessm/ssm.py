"""Data-driven spectral submanifolds: graph-style parametrization plus reduced dynamics.

The manifold is ``y = anchor + V1 eta + V_nl phi(eta / s)`` where ``phi`` collects
monomials of degree 2..K_man and ``s`` is a fixed per-coordinate scale that
keeps the monomial Gram matrix well conditioned.  Reduced dynamics are either a
polynomial vector field or a linear-kernel RBF map.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from typing import List, Optional

import numpy as np

from ._accel import HAVE_NUMBA, jit
from .embedding import EmbeddedData, EmbeddingConfig, embed

SCHEMA_VERSION = "ddessm.model/1"
COND_LIMIT = 1e12
RIDGE_FALLBACK = 1e-8
RBF_TIKHONOV = 1e-10
DUP_TOL = 1e-12


class SSMError(Exception):
    pass


class ConditioningError(SSMError):
    pass


class MultiIndexBasis:
    """Monomials ``eta^k`` with ``lo <= |k| <= hi`` in graded lexicographic order."""

    def __init__(self, d: int, lo: int, hi: int):
        if d < 1 or lo < 0:
            raise SSMError("invalid basis specification")
        self.d, self.lo, self.hi = d, lo, hi
        idx = []
        for deg in range(lo, hi + 1):
            block = []
            for combo in combinations_with_replacement(range(d), deg):
                k = [0] * d
                for c in combo:
                    k[c] += 1
                block.append(tuple(k))
            idx.extend(sorted(block, reverse=True))
        # hi < lo gives an empty basis (linear manifold)
        self.indices = np.array(idx, dtype=np.int64).reshape(-1, d)

    def __len__(self):
        return len(self.indices)

    def degrees(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def count(self, deg: int) -> int:
        return int(np.sum(self.degrees() == deg))

    def __call__(self, eta) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        N = eta.shape[0]
        out = np.ones((N, len(self.indices)))
        if self.hi <= 0 or not len(self.indices):
            return out
        powers = eta[:, :, None] ** np.arange(self.hi + 1)[None, None, :]
        for j in range(self.d):
            out *= powers[:, j, self.indices[:, j]]
        return out

    def to_list(self):
        return self.indices.tolist()

    def __eq__(self, other):
        return isinstance(other, MultiIndexBasis) and np.array_equal(self.indices, other.indices)


@dataclass(frozen=True)
class PolyField:
    R: np.ndarray            # d x len(basis), acts on eta / scale
    basis: MultiIndexBasis
    scale: np.ndarray

    def __call__(self, eta) -> np.ndarray:
        eta = np.atleast_2d(eta)
        return self.basis(eta / self.scale) @ self.R.T

    def linear_part(self) -> np.ndarray:
        lin = np.flatnonzero(self.basis.degrees() == 1)
        return self.R[:, lin] / self.scale[None, :]


@dataclass(frozen=True)
class RBFMap:
    centers: np.ndarray      # M x d
    weights: np.ndarray      # M x d
    dt_model: float

    def __call__(self, eta) -> np.ndarray:
        eta = np.atleast_2d(eta)
        dist = np.sqrt(((eta[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1))
        return dist @ self.weights


@dataclass(frozen=True)
class SSMModel:
    V1: np.ndarray
    V_nl: np.ndarray
    man_basis: MultiIndexBasis
    scale: np.ndarray
    anchor: np.ndarray
    cfg: Optional[EmbeddingConfig] = None
    dynamics: object = None
    residual: float = 0.0

    @property
    def d(self) -> int:
        return self.V1.shape[1]

    @property
    def k(self) -> int:
        return self.V1.shape[0]

    @property
    def dt_model(self) -> Optional[float]:
        return self.dynamics.dt_model if isinstance(self.dynamics, RBFMap) else None

    def reduce(self, Y) -> np.ndarray:
        return (np.atleast_2d(Y) - self.anchor) @ self.V1

    def lift(self, eta) -> np.ndarray:
        eta = np.atleast_2d(eta)
        Y = eta @ self.V1.T + self.anchor
        if len(self.man_basis):
            Y = Y + self.man_basis(eta / self.scale) @ self.V_nl.T
        return Y

    def with_dynamics(self, dyn) -> "SSMModel":
        return replace(self, dynamics=dyn)

    # serialization
    def to_dict(self) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "d": self.d,
            "k": self.k,
            "manifold": {
                "order": self.man_basis.hi,
                "basis": self.man_basis.to_list(),
                "scale": self.scale.tolist(),
                "V1": self.V1.tolist(),
                "V_nl": self.V_nl.tolist(),
                "residual": self.residual,
            },
            "anchor": self.anchor.tolist(),
            "embedding": None if self.cfg is None else self.cfg.to_dict(),
            "dynamics": None,
        }
        dyn = self.dynamics
        if isinstance(dyn, PolyField):
            out["dynamics"] = {"type": "polyfield", "order": dyn.basis.hi, "basis": dyn.basis.to_list(),
                               "scale": dyn.scale.tolist(), "R": dyn.R.tolist()}
        elif isinstance(dyn, RBFMap):
            out["dynamics"] = {"type": "rbf", "kernel": "linear", "dt_model": dyn.dt_model,
                               "centers": dyn.centers.tolist(), "weights": dyn.weights.tolist()}
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "SSMModel":
        if d.get("schema") != SCHEMA_VERSION:
            raise SSMError(f"unsupported model schema {d.get('schema')!r}")
        man = d["manifold"]
        dim = int(d["d"])
        V1 = np.array(man["V1"], dtype=float).reshape(-1, dim)
        basis = MultiIndexBasis(dim, 2, int(man["order"]))
        V_nl = np.array(man["V_nl"], dtype=float).reshape(V1.shape[0], len(basis))
        cfg = None if d.get("embedding") is None else EmbeddingConfig.from_dict(d["embedding"])
        dyn = None
        dd = d.get("dynamics")
        if dd is not None and dd["type"] == "polyfield":
            dyn = PolyField(np.array(dd["R"], dtype=float).reshape(dim, -1),
                            MultiIndexBasis(dim, 1, int(dd["order"])), np.array(dd["scale"], dtype=float))
        elif dd is not None and dd["type"] == "rbf":
            dyn = RBFMap(np.array(dd["centers"], dtype=float).reshape(-1, dim),
                         np.array(dd["weights"], dtype=float).reshape(-1, dim), float(dd["dt_model"]))
        return cls(V1, V_nl, basis, np.array(man["scale"], dtype=float), np.array(d["anchor"], dtype=float), cfg, dyn,
                   float(man.get("residual", 0.0)))

    @classmethod
    def from_json(cls, path) -> "SSMModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_matrix(data) -> np.ndarray:
    return data.Y if isinstance(data, EmbeddedData) else np.asarray(data, dtype=float)


def _lstsq(Phi, T, ridge=0.0):
    """Least squares via QR; ``ridge`` augments with sqrt(ridge) I."""
    if ridge > 0:
        Phi = np.vstack([Phi, math.sqrt(ridge) * np.eye(Phi.shape[1])])
        T = np.vstack([T, np.zeros((Phi.shape[1], T.shape[1]))])
    Q, Rr = np.linalg.qr(Phi)
    return np.linalg.solve(Rr, Q.T @ T)


def fit_manifold(data, d: int, order: int, anchor=None, cfg=None, maxit: int = 100,
                 tol: float = 1e-10) -> SSMModel:
    """Tangent space and polynomial graph by alternating least squares."""
    Y = _as_matrix(data)
    if cfg is None and isinstance(data, EmbeddedData):
        cfg = data.cfg
    k = Y.shape[1]
    if d < 1 or d > k:
        raise SSMError("need 1 <= d <= k")
    anchor = np.zeros(k) if anchor is None else np.broadcast_to(np.asarray(anchor, dtype=float), (k,)).copy()
    Yc = Y - anchor
    basis = MultiIndexBasis(d, 2, order)
    n_unknown = k * (d + len(basis))
    if Yc.shape[0] < 10 * n_unknown:
        warnings.warn(f"only {Yc.shape[0]} rows for {n_unknown} unknowns", RuntimeWarning)

    U, _, _ = np.linalg.svd(Yc.T, full_matrices=False)
    V1 = U[:, :d]
    eta0 = Yc @ V1
    scale = np.max(np.abs(eta0), axis=0)
    scale[scale == 0] = 1.0

    def fit_nl(V1):
        eta = Yc @ V1
        if not len(basis):
            return np.zeros((k, 0)), eta, np.zeros((Yc.shape[0], 0))
        Phi = basis(eta / scale)
        target = Yc - eta @ V1.T
        ridge = 0.0
        if np.linalg.matrix_rank(Phi) < Phi.shape[1]:
            warnings.warn("rank-deficient monomial matrix; applying ridge regularization", RuntimeWarning)
            ridge = RIDGE_FALLBACK * float(np.sum(Phi ** 2))
        W = _lstsq(Phi, target, ridge).T
        W = W - V1 @ (V1.T @ W)
        return W, eta, Phi

    def objective(V1, W, eta, Phi):
        r = Yc - eta @ V1.T - Phi @ W.T
        return float(np.sum(r ** 2))

    W, eta, Phi = fit_nl(V1)
    best = (objective(V1, W, eta, Phi), V1, W)
    if len(basis):
        prev = best[0]
        for _ in range(maxit):
            corr = Yc - Phi @ W.T
            U, _, _ = np.linalg.svd(corr.T, full_matrices=False)
            V1n = U[:, :d]
            # keep orientation stable between iterations
            V1n = V1n * np.sign(np.sum(V1n * V1, axis=0) + 1e-300)
            Wn, etan, Phin = fit_nl(V1n)
            obj = objective(V1n, Wn, etan, Phin)
            if obj < best[0]:
                best = (obj, V1n, Wn)
            if obj > prev or abs(prev - obj) <= tol * max(prev, 1e-300):
                break
            V1, W, Phi, prev = V1n, Wn, Phin, obj
    obj, V1, W = best
    V1, _ = np.linalg.qr(V1)
    V1 = V1 * np.sign(np.sum(V1 * best[1], axis=0) + 1e-300)
    W = W - V1 @ (V1.T @ W)
    rms = math.sqrt(obj / max(Yc.shape[0], 1))
    return SSMModel(V1, W, basis, scale, anchor, cfg, None, rms)


def fit_polyfield(data: EmbeddedData, model: SSMModel, order: int, ridge: float = 0.0,
                  eta=None, eta_dot=None) -> SSMModel:
    """Polynomial reduced vector field by least squares on ``eta_dot = V1^T dY``."""
    if eta is None:
        if data.dY is None:
            raise SSMError("derivative estimates missing; call estimate_derivatives first")
        eta = model.reduce(data.Y)
        eta_dot = data.dY @ model.V1
    basis = MultiIndexBasis(model.d, 1, order)
    scale = model.scale
    Phi = basis(eta / scale)
    if Phi.shape[0] < Phi.shape[1]:
        raise SSMError("fewer samples than field coefficients")
    cond = np.linalg.cond(Phi) ** 2
    if ridge == 0.0 and not cond <= COND_LIMIT:
        raise ConditioningError(f"monomial Gram condition number {cond:.3g} exceeds {COND_LIMIT:g}; "
                                "lower the order or rescale the data")
    R = _lstsq(Phi, eta_dot, ridge * Phi.shape[0] if ridge else 0.0).T
    return model.with_dynamics(PolyField(R, basis, scale))


def dedupe_centers(centers, targets, tol=DUP_TOL):
    """Drop centers closer than ``tol`` to an earlier one."""
    keep = np.ones(len(centers), dtype=bool)
    order = np.lexsort(centers.T[::-1])
    c = centers[order]
    gap = np.sqrt(np.sum(np.diff(c, axis=0) ** 2, axis=1))
    # only neighbours in sort order are checked; exact duplicates are always adjacent
    keep[order[1:][gap < tol]] = False
    return centers[keep], targets[keep], int((~keep).sum())


def fit_rbf(data: EmbeddedData, model: SSMModel, stride: int = 1, max_centers: Optional[int] = None,
            tikhonov: float = RBF_TIKHONOV) -> SSMModel:
    """Linear-kernel RBF map ``eta_{n+1} = sum_i C_i |eta - eta_i|``.

    Pairs are taken ``stride`` rows apart inside each trajectory, so the map
    advances ``stride * dt``.  ``max_centers`` thins the pair set uniformly.
    """
    src, dst = [], []
    for seg in data.segments():
        if len(seg) <= stride:
            continue
        eta = model.reduce(data.Y[seg])
        src.append(eta[:-stride])
        dst.append(eta[stride:])
    if not src:
        raise SSMError("no consecutive pairs available")
    X = np.vstack(src)
    T = np.vstack(dst)
    if max_centers is not None and len(X) > max_centers:
        pick = np.unique(np.linspace(0, len(X) - 1, max_centers).round().astype(int))
        X, T = X[pick], T[pick]
    X, T, ndup = dedupe_centers(X, T)
    if ndup:
        warnings.warn(f"removed {ndup} duplicate RBF centers", RuntimeWarning)
    K = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    K[np.diag_indices_from(K)] += tikhonov
    C = np.linalg.solve(K, T)
    return model.with_dynamics(RBFMap(X, C, stride * data.dt))


# --- reduced dynamics kernels ---------------------------------------------

@jit
def _rbf_orbit_nb(centers, weights, eta0, nsteps, bound):
    M, d = centers.shape
    out = np.empty((nsteps + 1, d))
    out[0] = eta0
    cur = eta0.copy()
    for s in range(nsteps):
        nxt = np.zeros(d)
        for i in range(M):
            acc = 0.0
            for j in range(d):
                diff = cur[j] - centers[i, j]
                acc += diff * diff
            r = math.sqrt(acc)
            for j in range(d):
                nxt[j] += weights[i, j] * r
        big = False
        for j in range(d):
            if not np.isfinite(nxt[j]) or abs(nxt[j]) > bound:
                big = True
        out[s + 1] = nxt
        cur = nxt
        if big:
            return out[: s + 2], True
    return out, False


def _rbf_orbit_np(centers, weights, eta0, nsteps, bound):
    out = np.empty((nsteps + 1, centers.shape[1]))
    out[0] = eta0
    cur = np.asarray(eta0, dtype=float)
    for s in range(nsteps):
        cur = np.sqrt(((centers - cur) ** 2).sum(1)) @ weights
        out[s + 1] = cur
        if not np.all(np.isfinite(cur)) or np.max(np.abs(cur)) > bound:
            return out[: s + 2], True
    return out, False


def rbf_orbit(rbf: RBFMap, eta0, nsteps: int, bound: float = np.inf):
    """Iterate the map; returns (orbit, diverged)."""
    eta0 = np.asarray(eta0, dtype=float).ravel()
    fn = _rbf_orbit_nb if HAVE_NUMBA else _rbf_orbit_np
    return fn(rbf.centers, rbf.weights, eta0, int(nsteps), float(bound))


@jit
def _poly_field_nb(idx, R, scale, hi, eta, pw, out):
    d = eta.shape[0]
    for j in range(d):
        v = eta[j] / scale[j]
        pw[j, 0] = 1.0
        for p in range(1, hi + 1):
            pw[j, p] = pw[j, p - 1] * v
    for i in range(d):
        out[i] = 0.0
    for m in range(idx.shape[0]):
        mono = 1.0
        for j in range(d):
            mono *= pw[j, idx[m, j]]
        for i in range(d):
            out[i] += R[i, m] * mono


@jit
def _rk4_poly_nb(idx, R, scale, hi, eta0, nsteps, h, substeps, bound):
    d = eta0.shape[0]
    out = np.empty((nsteps + 1, d))
    out[0] = eta0
    cur = eta0.copy()
    pw = np.empty((d, hi + 1))
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    hs = h / substeps
    for s in range(nsteps):
        for _ in range(substeps):
            _poly_field_nb(idx, R, scale, hi, cur, pw, k1)
            for j in range(d):
                tmp[j] = cur[j] + 0.5 * hs * k1[j]
            _poly_field_nb(idx, R, scale, hi, tmp, pw, k2)
            for j in range(d):
                tmp[j] = cur[j] + 0.5 * hs * k2[j]
            _poly_field_nb(idx, R, scale, hi, tmp, pw, k3)
            for j in range(d):
                tmp[j] = cur[j] + hs * k3[j]
            _poly_field_nb(idx, R, scale, hi, tmp, pw, k4)
            for j in range(d):
                cur[j] = cur[j] + hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        out[s + 1] = cur
        for j in range(d):
            if not np.isfinite(cur[j]) or abs(cur[j]) > bound:
                return out[: s + 2], s + 1
    return out, -1


def rk4_orbit(field: PolyField, eta0, nsteps: int, h: float, bound: float = np.inf, substeps: int = 1):
    """RK4 on the polynomial field for one or many initial conditions.

    ``eta0`` may be ``(d,)`` or ``(m, d)``; the output is ``(nsteps+1, ..., d)``.
    Returns (orbit, diverged_step or None).
    """
    cur = np.array(eta0, dtype=float)
    single = cur.ndim == 1
    if single and HAVE_NUMBA:
        out, div = _rk4_poly_nb(field.basis.indices, np.ascontiguousarray(field.R), field.scale,
                                max(field.basis.hi, 1), cur, int(nsteps), float(h), int(substeps), float(bound))
        return out, (None if div < 0 else int(div))
    cur = np.atleast_2d(cur)
    out = np.empty((nsteps + 1,) + cur.shape)
    out[0] = cur
    hs = h / substeps
    for s in range(nsteps):
        for _ in range(substeps):
            k1 = field(cur)
            k2 = field(cur + 0.5 * hs * k1)
            k3 = field(cur + 0.5 * hs * k2)
            k4 = field(cur + hs * k3)
            cur = cur + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[s + 1] = cur
        if not np.all(np.isfinite(cur)) or np.max(np.abs(cur)) > bound:
            out = out[: s + 2]
            return (out[:, 0] if single else out), s + 1
    return (out[:, 0] if single else out), None


def advect(model: SSMModel, eta0, nsteps: int, h: Optional[float] = None, bound: float = np.inf,
           substeps: int = 1):
    """Reduced orbit from ``eta0``; ``h`` is the RK4 step for polynomial fields."""
    dyn = model.dynamics
    if isinstance(dyn, PolyField):
        if h is None:
            raise SSMError("step size required for a continuous field")
        orbit, div = rk4_orbit(dyn, eta0, nsteps, h, bound, substeps)
        return orbit, div is not None
    if isinstance(dyn, RBFMap):
        return rbf_orbit(dyn, eta0, nsteps, bound)
    raise SSMError("model has no reduced dynamics")


def nmte(y_true, y_pred) -> float:
    """Mean row error normalized by the largest row norm of ``y_true``."""
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    n = min(len(y_true), len(y_pred))
    s = np.max(np.abs(y_true))
    if s == 0:
        raise SSMError("test data has zero norm")
    # rescale first so squared row norms cannot underflow or overflow
    yt, yp = y_true / s, y_pred / s
    ymax = np.max(np.linalg.norm(yt, axis=1))
    return float(np.mean(np.linalg.norm(yt[:n] - yp[:n], axis=1)) / ymax)


@dataclass
class PredictionReport:
    nmte: List[float]
    predictions: List[np.ndarray]
    reduced: List[np.ndarray]
    truth: List[np.ndarray] = field(default_factory=list)
    diverged: List[bool] = field(default_factory=list)

    @property
    def mean_nmte(self) -> float:
        return float(np.mean(self.nmte))


def predict(model: SSMModel, test, substeps: int = 1, bound_factor: float = 1e3) -> PredictionReport:
    """Project the first embedded row of each test trajectory, advect, lift, score.

    ``test`` is a Trajectory, a list of them, or EmbeddedData.  NMTE is computed
    in anchored coordinates.
    """
    if isinstance(test, EmbeddedData):
        data = test
    else:
        if model.cfg is None:
            raise SSMError("model has no embedding config; pass EmbeddedData")
        data = embed(test, model.cfg)
    dyn = model.dynamics
    if dyn is None:
        raise SSMError("model has no reduced dynamics")
    bound = bound_factor * max(float(np.max(model.scale)), 1.0)
    rep = PredictionReport([], [], [], [], [])
    for seg in data.segments():
        Y = data.Y[seg]
        eta0 = model.reduce(Y[0])[0]
        if isinstance(dyn, RBFMap):
            stride = max(int(round(dyn.dt_model / data.dt)), 1)
            Y = Y[::stride]
            orbit, div = rbf_orbit(dyn, eta0, len(Y) - 1, bound)
        else:
            orbit, div = advect(model, eta0, len(Y) - 1, data.dt, bound, substeps)
        Yp = model.lift(orbit)
        rep.nmte.append(nmte(Y - model.anchor, Yp - model.anchor) if not div else math.inf)
        rep.predictions.append(Yp)
        rep.reduced.append(orbit)
        rep.truth.append(Y)
        rep.diverged.append(bool(div))
    return rep


def model_eigenvalues(model: SSMModel, h: float = 1e-6) -> np.ndarray:
    dyn = model.dynamics
    if isinstance(dyn, PolyField):
        A = dyn.linear_part()
        ev = np.linalg.eigvals(A)
    elif isinstance(dyn, RBFMap):
        d = model.d
        J = np.zeros((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            J[:, j] = (dyn(e)[0] - dyn(-e)[0]) / (2 * h)
        ev = np.log(np.linalg.eigvals(J).astype(complex)) / dyn.dt_model
        A = J
    else:
        raise SSMError("model has no reduced dynamics")
    if np.linalg.cond(np.linalg.eig(A)[1]) > 1e8:
        warnings.warn("linear part is close to defective", RuntimeWarning)
    return ev[np.lexsort((ev.imag, -ev.real))]


def sweep_orders(train: EmbeddedData, test: EmbeddedData, d: int, man_orders, dyn_orders, anchor=None,
                 ridge: float = 0.0):
    """Grid search over (K_man, K_dyn); returns (best_model, table of (m, r, nmte))."""
    if train.dY is None:
        raise SSMError("training data needs derivative estimates")
    table, best = [], (math.inf, None)
    for m in man_orders:
        geom = fit_manifold(train, d, m, anchor)
        for r in dyn_orders:
            try:
                model = fit_polyfield(train, geom, r, ridge)
            except ConditioningError:
                table.append((m, r, math.inf))
                continue
            score = predict(model, test).mean_nmte
            table.append((m, r, score))
            if score < best[0]:
                best = (score, model)
    if best[1] is None:
        raise SSMError("no order combination produced a usable model")
    return best[1], table
