"""Correlation dimension, leading Lyapunov exponent and PDF comparison."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._accel import HAVE_NUMBA, jit

MAX_POINTS = 8000
SLOPE_SPREAD = 0.15
MIN_WINDOW = 5


class ChaosError(Exception):
    pass


# --- correlation integral ----------------------------------------------------

@jit
def _pair_counts_nb(P, r2):
    N, k = P.shape
    nb = r2.shape[0]
    counts = np.zeros(nb + 1, dtype=np.int64)
    for i in range(N):
        for j in range(i + 1, N):
            s = 0.0
            for c in range(k):
                diff = P[i, c] - P[j, c]
                s += diff * diff
            # first radius with s < r2[b]
            lo, hi = 0, nb
            while lo < hi:
                mid = (lo + hi) // 2
                if r2[mid] > s:
                    hi = mid
                else:
                    lo = mid + 1
            counts[lo] += 1
    return counts


def _pair_counts_np(P, r2, block=512):
    nb = len(r2)
    counts = np.zeros(nb + 1, dtype=np.int64)
    sq = np.sum(P * P, axis=1)
    N = len(P)
    for a in range(0, N, block):
        B = P[a:a + block]
        D = sq[a:a + block, None] + sq[None, :] - 2.0 * B @ P.T
        rows = np.arange(a, a + len(B))[:, None]
        D = D[rows < np.arange(N)[None, :]]
        # recompute exactly near bin edges is unnecessary at the tolerance we need
        idx = np.searchsorted(r2, np.maximum(D, 0.0), side="right")
        counts += np.bincount(idx, minlength=nb + 1)
    return counts


def pair_counts(points, radii) -> np.ndarray:
    """Number of unordered pairs with distance strictly below each radius."""
    P = np.ascontiguousarray(points, dtype=float)
    r2 = np.ascontiguousarray(np.asarray(radii, dtype=float) ** 2)
    fn = _pair_counts_nb if HAVE_NUMBA else _pair_counts_np
    hist = fn(P, r2)
    return np.cumsum(hist)[:-1]


def correlation_integral(points, radii) -> np.ndarray:
    """``C(l) = #{(i, j), i != j : |x_i - x_j| < l} / N^2``."""
    N = len(points)
    return 2.0 * pair_counts(points, radii) / float(N * N)


@dataclass
class CorrDimFit:
    radii: np.ndarray
    C: np.ndarray
    window: tuple
    slope: float
    stderr: float
    stable: bool = True

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("l,C\n")
            for l, c in zip(self.radii, self.C):
                fh.write("%.12e,%.12e\n" % (l, c))


def _subsample(points, cap):
    if len(points) <= cap:
        return points
    idx = np.linspace(0, len(points) - 1, cap).round().astype(int)
    return points[idx]


def _line_fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    n = len(x)
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    else:
        se = 0.0
    return float(coef[0]), float(coef[1]), se


def scaling_window(logl, logC, spread=SLOPE_SPREAD, min_points=MIN_WINDOW):
    """Longest run of consecutive points whose local slopes vary by less than ``spread``.

    Returns ``(lo, hi, stable)`` as point indices, ``hi`` inclusive.
    """
    s = np.diff(logC) / np.diff(logl)
    n = len(s)
    best = None
    for a in range(n):
        smin = smax = s[a]
        b = a
        while b + 1 < n:
            lo_, hi_ = min(smin, s[b + 1]), max(smax, s[b + 1])
            mean = 0.5 * (lo_ + hi_)
            if mean <= 0 or (hi_ - lo_) / mean >= spread:
                break
            smin, smax, b = lo_, hi_, b + 1
        npts = b - a + 2
        mean = 0.5 * (smin + smax)
        if npts >= min_points and mean > 0:
            var = (smax - smin) / mean
            key = (npts, -var)
            if best is None or key > best[0]:
                best = (key, a, b + 1)
    if best is not None:
        return best[1], best[2], True
    # fall back to the min_points window with the smallest slope spread
    spreads = []
    for a in range(0, n - min_points + 2):
        w = s[a:a + min_points - 1]
        m = np.mean(w)
        spreads.append(np.inf if m <= 0 else (w.max() - w.min()) / m)
    if not spreads:
        raise ChaosError("too few radii for a scaling window")
    a = int(np.argmin(spreads))
    return a, a + min_points - 1, False


def correlation_dimension(points, n_radii: int = 30, window="auto", max_points: int = MAX_POINTS,
                          span_decades: float = 3.0, min_pairs: int = 50) -> CorrDimFit:
    """Grassberger-Procaccia slope of ``log C`` against ``log l``.

    ``window`` is ``"auto"`` or a ``(l_lo, l_hi)`` pair.  Radii are log-spaced
    over ``span_decades`` below the cloud diameter; radii with fewer than
    ``min_pairs`` pairs are dropped.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    P = _subsample(P, max_points)
    if len(P) < 10:
        raise ChaosError("need at least 10 points")
    diam = float(np.linalg.norm(P.max(0) - P.min(0)))
    if diam == 0:
        raise ChaosError("degenerate point cloud")
    radii = diam * np.logspace(-span_decades, 0, n_radii)
    counts = pair_counts(P, radii)
    keep = counts >= min_pairs
    radii, counts = radii[keep], counts[keep]
    C = 2.0 * counts / float(len(P) ** 2)
    logl, logC = np.log(radii), np.log(C)
    if window == "auto":
        lo, hi, stable = scaling_window(logl, logC)
    else:
        sel = np.flatnonzero((radii >= window[0]) & (radii <= window[1]))
        if len(sel) < MIN_WINDOW:
            raise ChaosError("manual window holds fewer than 5 radii")
        lo, hi, stable = int(sel[0]), int(sel[-1]), True
    slope, _, se = _line_fit(logl[lo:hi + 1], logC[lo:hi + 1])
    if not stable:
        warnings.warn("no stable scaling window; returning best candidate", RuntimeWarning)
    return CorrDimFit(radii, C, (float(radii[lo]), float(radii[hi])), slope, se, stable)


def embedding_dimension_rule(m: float) -> int:
    """Smallest even integer ``d > 2 m``."""
    if m <= 0:
        raise ChaosError("dimension must be positive")
    d = int(math.floor(2 * m)) + 1
    return d + (d % 2)


# --- Lyapunov -------------------------------------------------------------

@dataclass
class LyapunovFit:
    times: np.ndarray
    delta: np.ndarray          # mean separation normalised by its initial value
    window: tuple
    exponent: float
    r2: float

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t,delta\n")
            for t, d in zip(self.times, self.delta):
                fh.write("%.12e,%.12e\n" % (t, d))


def mean_pairwise_distance(X) -> float:
    """Mean distance over unordered pairs of rows of ``X``."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    iu = np.triu_indices(n, 1)
    D = np.sqrt(np.maximum(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1), 0.0))
    return float(np.mean(D[iu]))


def separation_curve(ensemble) -> np.ndarray:
    """``ensemble`` is ``(T, N, k)``; returns the mean pairwise separation per time."""
    return np.array([mean_pairwise_distance(E) for E in ensemble])


def fit_lyapunov(times, sep, diameter: float, frac: float = 0.1, t_min: float = 0.0) -> LyapunovFit:
    """Slope of ``log(sep/sep0)`` up to the first time ``sep > frac * diameter``."""
    times = np.asarray(times, dtype=float)
    sep = np.asarray(sep, dtype=float)
    delta = sep / sep[0]
    over = np.flatnonzero(sep > frac * diameter)
    end = int(over[0]) if len(over) else len(sep)
    start = int(np.searchsorted(times, times[0] + t_min))
    if end - start < 3:
        raise ChaosError("separation saturates immediately; use a smaller ball radius")
    x, y = times[start:end], np.log(delta[start:end])
    slope, icpt, _ = _line_fit(x, y)
    ss_res = float(np.sum((y - (slope * x + icpt)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LyapunovFit(times, delta, (float(x[0]), float(x[-1])), slope, r2)


def ball_samples(center, radius: float, n: int, rng) -> np.ndarray:
    """``n`` points uniform in the Euclidean ball."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = len(center)
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / dim)
    return center + r * g


def lyapunov_leading(advance: Callable, anchor, n: int = 50, eps: float = 1e-3, horizon: int = 1000,
                     dt: float = 1.0, diameter: Optional[float] = None, seed: int = 0,
                     frac: float = 0.1, t_min: float = 0.0) -> LyapunovFit:
    """Leading exponent from the mean separation of ``n`` nearby trajectories.

    ``advance(X0, nsteps)`` maps ``(n, dim)`` initial states to an
    ``(nsteps+1, n, k)`` array of observed states spaced ``dt`` apart.  Initial
    states are uniform in the ``eps``-ball around ``anchor``.  A 2-D ``anchor``
    holds several anchor points; their separation curves are pooled by a
    geometric mean, which lowers the variance of the local estimate.  Without
    an explicit ``diameter`` the fit runs over the whole horizon.
    """
    rng = np.random.default_rng(seed)
    anchors = np.atleast_2d(np.asarray(anchor, dtype=float))
    if np.ndim(anchor) <= 1:
        anchors = anchors.reshape(1, -1)
    logs = []
    for a in anchors:
        X0 = ball_samples(a, eps, n, rng)
        sep = separation_curve(np.asarray(advance(X0, horizon)))
        if not np.all(np.isfinite(sep)) or np.any(sep <= 0):
            raise ChaosError("ensemble diverged or collapsed")
        logs.append(np.log(sep))
    nmin = min(len(l) for l in logs)
    sep = np.exp(np.mean([l[:nmin] for l in logs], axis=0))
    times = dt * np.arange(len(sep))
    return fit_lyapunov(times, sep, np.inf if diameter is None else diameter, frac, t_min)


def attractor_diameter(points) -> float:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    return float(np.linalg.norm(P.max(0) - P.min(0)))


# --- PDFs -------------------------------------------------------------------

@dataclass
class PdfReport:
    edges: list
    hist_a: list
    hist_b: list
    distances: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(np.max(self.distances))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("coord,bin_lo,bin_hi,p_a,p_b\n")
            for c, (e, a, b) in enumerate(zip(self.edges, self.hist_a, self.hist_b)):
                for i in range(len(a)):
                    fh.write("%d,%.12e,%.12e,%.12e,%.12e\n" % (c, e[i], e[i + 1], a[i], b[i]))


def fd_bins(x, lo, hi) -> int:
    """Freedman-Diaconis bin count over ``[lo, hi]``."""
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    if iqr <= 0 or hi <= lo:
        return 1
    width = 2.0 * iqr / len(x) ** (1.0 / 3.0)
    return int(max(1, min(10000, math.ceil((hi - lo) / width))))


def pdf_compare(A, B, bins=None) -> PdfReport:
    """Per-coordinate histograms on shared edges and their L1 distances."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if not len(A) or not len(B) or A.shape[1] != B.shape[1]:
        raise ChaosError("inputs must be nonempty with the same coordinate count")
    edges, ha, hb, dist = [], [], [], []
    for c in range(A.shape[1]):
        u = np.concatenate([A[:, c], B[:, c]])
        lo, hi = float(u.min()), float(u.max())
        nb = bins if bins is not None else fd_bins(u, lo, hi)
        if hi <= lo:
            e = np.array([lo - 0.5, lo + 0.5])
        else:
            e = np.linspace(lo, hi, nb + 1)
        pa = np.histogram(A[:, c], e)[0].astype(float)
        pb = np.histogram(B[:, c], e)[0].astype(float)
        pa /= pa.sum()
        pb /= pb.sum()
        edges.append(e)
        ha.append(pa)
        hb.append(pb)
        dist.append(float(np.sum(np.abs(pa - pb))))
    return PdfReport(edges, ha, hb, np.array(dist))
