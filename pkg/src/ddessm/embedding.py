"""Delay-coordinate embedding of observed trajectories."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dde import Trajectory


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    """``observable`` is a list of state indices or a ``(p, n)`` matrix of linear functionals.

    Rows stack ``k`` values: the channels at ``t``, then at ``t + lag``,
    ``t + 2 lag``, ... interleaved and truncated to ``k`` entries.
    """

    observable: object = (0,)
    k: int = 5
    lag_steps: int = 1
    skip_time: float = 0.0
    d: Optional[int] = None
    allow_small_k: bool = False

    def __post_init__(self):
        if self.k < 1 or self.lag_steps < 1:
            raise EmbeddingError("k and lag_steps must be positive")
        if self.d is not None and self.k <= 2 * self.d and not self.allow_small_k:
            raise EmbeddingError(f"k = {self.k} violates k > 2d = {2 * self.d}; set allow_small_k to override")

    def channels(self, traj: Trajectory) -> np.ndarray:
        obs = self.observable
        if isinstance(obs, np.ndarray) and obs.ndim == 2:
            return traj.samples @ obs.T
        idx = list(np.atleast_1d(obs).astype(int))
        return traj.samples[:, idx]

    def n_channels(self) -> int:
        obs = self.observable
        if isinstance(obs, np.ndarray) and obs.ndim == 2:
            return obs.shape[0]
        return len(np.atleast_1d(obs))

    @property
    def span_steps(self) -> int:
        """Samples spanned by one row minus one."""
        p = self.n_channels()
        return ((self.k - 1) // p) * self.lag_steps

    def to_dict(self) -> dict:
        obs = self.observable
        if isinstance(obs, np.ndarray) and obs.ndim == 2:
            obs = obs.tolist()
        else:
            obs = [int(i) for i in np.atleast_1d(obs)]
        return {"observable": obs, "k": self.k, "lag_steps": self.lag_steps, "skip_time": self.skip_time,
                "d": self.d, "allow_small_k": self.allow_small_k}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingConfig":
        obs = d.get("observable", [0])
        if obs and isinstance(obs[0], list):
            obs = np.array(obs, dtype=float)
        else:
            obs = tuple(obs)
        return cls(obs, int(d["k"]), int(d.get("lag_steps", 1)), float(d.get("skip_time", 0.0)),
                   d.get("d"), bool(d.get("allow_small_k", False)))


@dataclass
class EmbeddedData:
    Y: np.ndarray
    traj_ids: np.ndarray
    times: np.ndarray
    dt: float
    dY: Optional[np.ndarray] = None
    cfg: Optional[EmbeddingConfig] = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.Y.shape[1]

    def segments(self):
        """Index arrays of the rows belonging to each trajectory, in order."""
        ids = self.traj_ids
        cuts = np.flatnonzero(np.diff(ids)) + 1
        return np.split(np.arange(len(ids)), cuts)

    def subset(self, ids) -> "EmbeddedData":
        mask = np.isin(self.traj_ids, list(ids))
        dY = None if self.dY is None else self.dY[mask]
        return EmbeddedData(self.Y[mask], self.traj_ids[mask], self.times[mask], self.dt, dY, self.cfg)

    def to_csv(self, path):
        with open(path, "w") as fh:
            cols = ["traj_id", "t"] + [f"y{i + 1}" for i in range(self.k)]
            fh.write(",".join(cols) + "\n")
            for tid, t, row in zip(self.traj_ids, self.times, self.Y):
                fh.write("%d,%.12e," % (tid, t) + ",".join("%.12e" % v for v in row) + "\n")


def embed_rows(s: np.ndarray, k: int, lag: int) -> np.ndarray:
    """Interleaved delay rows of a ``(N, p)`` channel array."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    N, p = s.shape
    nblocks = (k + p - 1) // p
    span = ((k - 1) // p) * lag
    nrows = N - span
    if nrows <= 0:
        return np.empty((0, k))
    blocks = [s[b * lag: b * lag + nrows] for b in range(nblocks)]
    return np.hstack(blocks)[:, :k]


def embed(trajs: Sequence[Trajectory], cfg: EmbeddingConfig, min_rows: int = 1) -> EmbeddedData:
    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    rows, ids, times = [], [], []
    dt = None
    for i, tr in enumerate(trajs):
        if dt is None:
            dt = tr.dt
        elif abs(tr.dt - dt) > 1e-12 * dt:
            raise EmbeddingError("all trajectories must share the sampling step")
        tr = tr.window(tr.t0 + cfg.skip_time) if cfg.skip_time > 0 else tr
        Yi = embed_rows(cfg.channels(tr), cfg.k, cfg.lag_steps)
        if Yi.shape[0] < min_rows:
            warnings.warn(f"trajectory {i} too short to embed; skipped", RuntimeWarning)
            continue
        rows.append(Yi)
        ids.append(np.full(Yi.shape[0], i))
        times.append(tr.t0 + tr.dt * np.arange(Yi.shape[0]))
    if not rows:
        raise EmbeddingError("no trajectory long enough to embed")
    return EmbeddedData(np.vstack(rows), np.concatenate(ids), np.concatenate(times), dt, None, cfg)


def _fd4(Y: np.ndarray, h: float) -> np.ndarray:
    N = Y.shape[0]
    D = np.empty_like(Y)
    D[2:-2] = (-Y[4:] + 8 * Y[3:-1] - 8 * Y[1:-3] + Y[:-4]) / (12 * h)
    D[0] = (-25 * Y[0] + 48 * Y[1] - 36 * Y[2] + 16 * Y[3] - 3 * Y[4]) / (12 * h)
    D[1] = (-3 * Y[0] - 10 * Y[1] + 18 * Y[2] - 6 * Y[3] + Y[4]) / (12 * h)
    D[N - 1] = (25 * Y[N - 1] - 48 * Y[N - 2] + 36 * Y[N - 3] - 16 * Y[N - 4] + 3 * Y[N - 5]) / (12 * h)
    D[N - 2] = (3 * Y[N - 1] + 10 * Y[N - 2] - 18 * Y[N - 3] + 6 * Y[N - 4] - Y[N - 5]) / (12 * h)
    return D


def estimate_derivatives(data: EmbeddedData) -> EmbeddedData:
    """Fourth-order finite-difference time derivatives, per trajectory."""
    dY = np.empty_like(data.Y)
    for seg in data.segments():
        if len(seg) < 5:
            raise EmbeddingError("derivative estimation needs at least 5 rows per trajectory")
        dY[seg] = _fd4(data.Y[seg], data.dt)
    return EmbeddedData(data.Y, data.traj_ids, data.times, data.dt, dY, data.cfg)


def flatten_basis(k: int, m: int) -> np.ndarray:
    """Columns ``v_l = (0^l, 1^l, ..., (k-1)^l)`` for ``l = 0..m``."""
    j = np.arange(k, dtype=float)
    return np.stack([j ** l for l in range(m + 1)], axis=1)


def flatten_order(data, m: int) -> float:
    """RMS distance of the embedded rows to ``span{v_0, ..., v_m}``."""
    Y = data.Y if isinstance(data, EmbeddedData) else np.asarray(data, dtype=float)
    k = Y.shape[1]
    if m >= k:
        raise EmbeddingError("m must be smaller than k")
    Q, _ = np.linalg.qr(flatten_basis(k, m))
    resid = Y - (Y @ Q) @ Q.T
    return float(np.sqrt(np.mean(np.sum(resid ** 2, axis=1))))
