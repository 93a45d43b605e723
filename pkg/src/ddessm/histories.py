"""Initial-history generators for training and test trajectories."""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .dde import DelaySystem, HistorySpec
from .spectrum import linearize, roots_in_window


def null_vector(M: np.ndarray) -> np.ndarray:
    """Unit vector spanning the (numerical) kernel of a singular matrix."""
    _, _, Vh = np.linalg.svd(M)
    return Vh[-1].conj()


def leading_mode(system: DelaySystem, eq, window=(-3.0, 3.0, 10.0), seeds_per_axis: int = 12):
    """Rightmost characteristic root (upper half plane) and its eigenvector."""
    cm = linearize(system, eq)
    spec = roots_in_window(cm, *window, seeds_per_axis=seeds_per_axis)
    if len(spec) == 0:
        raise ValueError("no characteristic root in the search window")
    lam = spec.roots[0]
    lam = complex(lam.real, abs(lam.imag))
    return lam, null_vector(cm(lam))


def sinusoid_history(base, amps, freqs, phases) -> HistorySpec:
    base = np.atleast_1d(np.asarray(base, dtype=float))
    amps, freqs, phases = (np.broadcast_to(np.asarray(a, dtype=float), base.shape) for a in (amps, freqs, phases))
    return HistorySpec.from_function(lambda th: base + amps * np.sin(freqs * th + phases))


def random_sinusoid_histories(base, n: int, amp_range, rng, freq_range=(0.5, 3.0)) -> List[HistorySpec]:
    base = np.atleast_1d(np.asarray(base, dtype=float))
    out = []
    for _ in range(n):
        a = rng.uniform(*amp_range, size=base.shape)
        w = rng.uniform(*freq_range, size=base.shape)
        ph = rng.uniform(0.0, 2 * np.pi, size=base.shape)
        out.append(sinusoid_history(base, a, w, ph))
    return out


def mode_history(eq, lam: complex, v: np.ndarray, c: complex,
                 perturb: Optional[tuple] = None) -> HistorySpec:
    """``eq + Re(c v exp(lam theta))`` plus an optional sinusoid ``(amps, freqs, phases)``."""
    eq = np.atleast_1d(np.asarray(eq, dtype=float))

    def f(th):
        x = eq + (c * v * np.exp(lam * th)).real
        if perturb is not None:
            a, w, ph = perturb
            x = x + a * np.sin(w * th + ph)
        return x

    return HistorySpec.from_function(f)


def near_equilibrium_histories(system: DelaySystem, eq, n: int, amp_range, rng,
                               perturb_frac: float = 0.2, freq_range=(0.3, 2.0), mode=None) -> List[HistorySpec]:
    """Histories close to the slow spectral subspace of ``eq``.

    Each is a leading eigenfunction with random complex amplitude
    ``|c|`` in ``amp_range`` plus a sinusoid of relative size ``perturb_frac``
    so that trajectories still start off the manifold.
    """
    lam, v = leading_mode(system, eq) if mode is None else mode
    scale = np.abs(v) / np.max(np.abs(v))
    out = []
    for _ in range(n):
        c = rng.uniform(*amp_range) * np.exp(2j * np.pi * rng.uniform())
        a = perturb_frac * abs(c) * scale * rng.uniform(0.5, 1.0, size=v.shape)
        w = rng.uniform(*freq_range, size=v.shape)
        ph = rng.uniform(0.0, 2 * np.pi, size=v.shape)
        out.append(mode_history(eq, lam, v, c, (a, w, ph)))
    return out
