"""Equation-driven cubic SSM of the Hutchinson equation by homological equations.

The shifted equation is ``y' = L y + R y(t - tau) + n_uv y y(t - tau)`` with
``L = 0``, ``R = -r`` and ``n_uv = -r/K``.  The manifold is expanded as
``W(z, zbar, theta) = sum w_jk(theta) z^j zbar^k`` (plain monomial
coefficients; the factorial convention of the printed expansion is
``W_jk = j! k! w_jk``) and the reduced dynamics as
``z' = lam z + sum beta_jk z^j zbar^k``.

For each monomial the interior equation ``w' = s w + forcing`` is solved in
closed form.  Every ``w_jk`` is a finite sum of exponentials: the forcing at
order m only contains exponents ``a lam + b conj(lam)`` with ``a + b < m``, which
never equal ``s = j lam + k conj(lam)`` for a complex pair off the imaginary
axis, so no ``theta^p`` terms appear.  The boundary condition and the two
pairing conditions ``<psi_i, w_jk> = 0`` give a 3x3 system for
``(w_jk(0), beta_jk, conj(beta_kj))``.
"""
from __future__ import annotations

import cmath
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .spectrum import CharMatrix, polish_root

EXP_TOL = 1e-12
RESONANCE_TOL = 1e-8
MONOMIALS = {2: [(2, 0), (1, 1), (0, 2)], 3: [(3, 0), (2, 1), (1, 2), (0, 3)]}


class OracleError(Exception):
    pass


class ResonanceError(OracleError):
    pass


class ExpSum:
    """``sum_a c_a exp(a theta)`` with complex exponents."""

    def __init__(self, terms=None):
        self.terms: Dict[complex, complex] = {}
        for a, c in (terms or {}).items():
            self.add_term(a, c)

    def add_term(self, a, c):
        a = complex(a)
        for b in self.terms:
            if abs(b - a) < EXP_TOL * (1.0 + abs(a)):
                self.terms[b] += c
                return
        self.terms[a] = complex(c)

    def __add__(self, other: "ExpSum") -> "ExpSum":
        out = ExpSum(self.terms)
        for a, c in other.terms.items():
            out.add_term(a, c)
        return out

    def scale(self, s) -> "ExpSum":
        return ExpSum({a: s * c for a, c in self.terms.items()})

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=complex)
        for a, c in self.terms.items():
            out = out + c * np.exp(a * theta)
        return out

    def deriv(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=complex)
        for a, c in self.terms.items():
            out = out + a * c * np.exp(a * theta)
        return out

    def conj(self) -> "ExpSum":
        return ExpSum({a.conjugate(): c.conjugate() for a, c in self.terms.items()})


@dataclass
class EigData:
    lam: complex
    r: float
    K: float
    tau: float
    L: float = 0.0

    @property
    def R(self) -> float:
        return -self.r

    @property
    def n_uv(self) -> float:
        return -self.r / self.K

    def delta(self, mu) -> complex:
        return mu - self.L - self.R * cmath.exp(-mu * self.tau)

    def ddelta(self, mu) -> complex:
        return 1.0 + self.R * self.tau * cmath.exp(-mu * self.tau)

    def lam_i(self, i: int) -> complex:
        return self.lam if i == 1 else self.lam.conjugate()

    def p_star(self, i: int) -> complex:
        # q = 1
        return 1.0 / self.ddelta(self.lam_i(i))

    def Pi(self, i: int, a) -> complex:
        """``<psi_i, exp(a theta)>`` in closed form, equal to 1 at ``a = lam_i``."""
        li = self.lam_i(i)
        a = complex(a)
        if abs(a - li) < EXP_TOL * (1.0 + abs(li)):
            return 1.0 + 0j
        tail = self.R * cmath.exp(-li * self.tau) * (cmath.exp((li - a) * self.tau) - 1.0) / (li - a)
        return self.p_star(i) * (1.0 + tail)

    def pair(self, i: int, w: ExpSum) -> complex:
        return sum(c * self.Pi(i, a) for a, c in w.terms.items())

    def psi(self, i: int, s):
        """Adjoint eigenfunction on ``[0, tau]``."""
        li = self.lam_i(i)
        s = np.asarray(s, dtype=float)
        return self.p_star(i) * (1.0 + self.R * np.exp(-li * self.tau) * (np.exp(li * s) - 1.0) / li)

    def dpsi(self, i: int, s):
        li = self.lam_i(i)
        return self.p_star(i) * self.R * np.exp(-li * self.tau) * np.exp(li * np.asarray(s, dtype=float))


def eig_setup(r: float = 1.8, K: float = 10.0, tau: float = 1.0, guess=0.1 - 1.6j) -> EigData:
    """Dominant root ``lam`` (lower half plane, as printed) polished by Newton."""
    cm = CharMatrix(np.zeros((1, 1)), [np.array([[-r]])], [tau])
    lam = polish_root(cm, guess)
    eig = EigData(complex(lam), r, K, tau)
    if abs(eig.delta(eig.lam)) > 1e-12:
        raise OracleError(f"characteristic residual {abs(eig.delta(eig.lam)):.3g}")
    return eig


def check_nonresonance(eig: EigData, tol: float = RESONANCE_TOL) -> Dict[Tuple[int, int], float]:
    """``|Delta(j lam + k conj(lam))|`` for ``j + k`` in {2, 3}; raises on resonance."""
    lb = eig.lam.conjugate()
    out = {}
    for m in (2, 3):
        for j, k in MONOMIALS[m]:
            out[(j, k)] = abs(eig.delta(j * eig.lam + k * lb))
    bad = [jk for jk, v in out.items() if v < tol]
    if bad:
        raise ResonanceError(f"resonant monomials {bad}")
    return out


@dataclass
class SSMCoefficients:
    eig: EigData
    w: Dict[Tuple[int, int], ExpSum] = field(default_factory=dict)
    beta: Dict[Tuple[int, int], complex] = field(default_factory=dict)
    gamma: Dict[Tuple[int, int], complex] = field(default_factory=dict)   # conj(beta_kj) as solved

    @property
    def order(self) -> int:
        return max(j + k for j, k in self.w)

    def g(self, a: int, b: int) -> complex:
        """Coefficient of ``z^a zbar^b`` in ``zbar'``."""
        return self.beta[(b, a)].conjugate()

    def W(self, z, theta):
        """Real history value on the manifold at reduced coordinate ``z``."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(np.broadcast(z, np.asarray(theta)).shape, dtype=complex)
        for (j, k), wjk in self.w.items():
            out = out + wjk(theta) * z ** j * np.conj(z) ** k
        return out.real

    def field(self, z):
        z = np.asarray(z, dtype=complex)
        out = self.eig.lam * z
        for (j, k), b in self.beta.items():
            out = out + b * z ** j * np.conj(z) ** k
        return out

    def scaled_W(self, j: int, k: int, theta=0.0) -> complex:
        """Coefficient in the factorial convention ``W_jk = j! k! w_jk``."""
        return complex(math.factorial(j) * math.factorial(k) * self.w[(j, k)](theta))

    def to_dict(self) -> dict:
        ri = lambda c: [float(c.real), float(c.imag)]  # noqa: E731
        th = -self.eig.tau
        return {
            "schema": "ddessm.oracle/1",
            "params": {"r": self.eig.r, "K": self.eig.K, "tau": self.eig.tau},
            "lambda": ri(self.eig.lam),
            "beta": {f"{j}{k}": ri(b) for (j, k), b in sorted(self.beta.items())},
            "W_at_0": {f"{j}{k}": ri(self.scaled_W(j, k, 0.0)) for (j, k) in sorted(self.w)},
            "W_at_minus_tau": {f"{j}{k}": ri(self.scaled_W(j, k, th)) for (j, k) in sorted(self.w)},
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _boundary(eig: EigData, w: ExpSum) -> complex:
    """``w'(0) - L w(0) - R w(-tau)``."""
    return complex(w.deriv(0.0) - eig.L * w(0.0) - eig.R * w(-eig.tau))


def _known_forcing(co: SSMCoefficients, j: int, k: int) -> ExpSum:
    """Interior forcing of ``w_jk`` from already-solved orders (excluding the new betas)."""
    out = ExpSum()
    for (p, q), wpq in co.w.items():
        if p + q < 2:
            continue
        for (a, b) in list(co.beta):
            if a + b < 2:
                continue
            # d/dz part: p w_pq z^(p-1) zbar^q * beta_ab z^a zbar^b
            if p >= 1 and (p - 1 + a, q + b) == (j, k):
                out = out + wpq.scale(p * co.beta[(a, b)])
            # d/dzbar part: q w_pq z^p zbar^(q-1) * g_ab z^a zbar^b
            if q >= 1 and (p + a, q - 1 + b) == (j, k):
                out = out + wpq.scale(q * co.g(a, b))
    return out


def _nonlinear_boundary(co: SSMCoefficients, j: int, k: int) -> complex:
    eig = co.eig
    tot = 0j
    for (p, q), wa in co.w.items():
        pp, qq = j - p, k - q
        if (pp, qq) in co.w:
            tot += wa(0.0) * co.w[(pp, qq)](-eig.tau)
    return eig.n_uv * tot


def _solve_monomial(co: SSMCoefficients, j: int, k: int):
    eig = co.eig
    lam, lb = eig.lam, eig.lam.conjugate()
    s = j * lam + k * lb
    forcing = _known_forcing(co, j, k)
    Kpart = ExpSum()
    for a, c in forcing.terms.items():
        if abs(a - s) < RESONANCE_TOL:
            raise ResonanceError(f"interior forcing resonant with monomial {(j, k)}")
        ca = c / (a - s)
        Kpart = Kpart + ExpSum({a: ca, s: -ca})
    E0 = ExpSum({s: 1.0})
    Eb = ExpSum({lam: 1.0 / (lam - s), s: -1.0 / (lam - s)})
    Eg = ExpSum({lb: 1.0 / (lb - s), s: -1.0 / (lb - s)})
    A = np.empty((3, 3), dtype=complex)
    rhs = np.empty(3, dtype=complex)
    A[0] = [_boundary(eig, E0), _boundary(eig, Eb), _boundary(eig, Eg)]
    rhs[0] = _nonlinear_boundary(co, j, k) - _boundary(eig, Kpart)
    for row, i in ((1, 1), (2, 2)):
        A[row] = [eig.pair(i, E0), eig.pair(i, Eb), eig.pair(i, Eg)]
        rhs[row] = -eig.pair(i, Kpart)
    if np.linalg.cond(A) > 1e12:
        raise ResonanceError(f"singular homological system for monomial {(j, k)}")
    w0, b, g = np.linalg.solve(A, rhs)
    w = Kpart + E0.scale(w0) + Eb.scale(b) + Eg.scale(g)
    return w, complex(b), complex(g)


def _solve_order(co: SSMCoefficients, m: int):
    sols = {jk: _solve_monomial(co, *jk) for jk in MONOMIALS[m]}
    for jk, (w, b, g) in sols.items():
        co.w[jk] = w
        co.beta[jk] = b
        co.gamma[jk] = g
    return co


def solve_order2(eig: EigData) -> SSMCoefficients:
    check_nonresonance(eig)
    co = SSMCoefficients(eig)
    co.w[(1, 0)] = ExpSum({eig.lam: 1.0})
    co.w[(0, 1)] = ExpSum({eig.lam.conjugate(): 1.0})
    return _solve_order(co, 2)


def solve_order3(co: SSMCoefficients) -> SSMCoefficients:
    if any(jk not in co.beta for jk in MONOMIALS[2]):
        raise OracleError("order 2 must be solved first")
    return _solve_order(co, 3)


def solve(r: float = 1.8, K: float = 10.0, tau: float = 1.0) -> SSMCoefficients:
    return solve_order3(solve_order2(eig_setup(r, K, tau)))


# --- diagnostics -----------------------------------------------------------

def reality_defect(co: SSMCoefficients, thetas=None) -> float:
    th = np.linspace(-co.eig.tau, 0.0, 20) if thetas is None else np.asarray(thetas)
    worst = 0.0
    for (j, k), w in co.w.items():
        worst = max(worst, float(np.max(np.abs(w(th) - np.conj(co.w[(k, j)](th))))))
    for (j, k), g in co.gamma.items():
        worst = max(worst, abs(g - co.beta[(k, j)].conjugate()))
    return worst


def gauge_defect(co: SSMCoefficients) -> float:
    return max(abs(co.eig.pair(i, w)) for (j, k), w in co.w.items() if j + k >= 2 for i in (1, 2))


def interior_defect(co: SSMCoefficients, thetas=None) -> float:
    """Coefficient-level residual of ``dW/dtheta = W_z z' + W_zbar zbar'`` up to cubic order."""
    th = np.linspace(-co.eig.tau, 0.0, 20) if thetas is None else np.asarray(thetas)
    lam = co.eig.lam
    f = {(1, 0): lam}
    f.update(co.beta)
    g = {(0, 1): lam.conjugate()}
    g.update({(a, b): co.g(a, b) for (b, a) in co.beta})
    worst = 0.0
    for (j, k), w in co.w.items():
        rhs = np.zeros(th.shape, dtype=complex)
        for (p, q), wpq in co.w.items():
            for (a, b), c in f.items():
                if p >= 1 and (p - 1 + a, q + b) == (j, k):
                    rhs = rhs + p * c * wpq(th)
            for (a, b), c in g.items():
                if q >= 1 and (p + a, q - 1 + b) == (j, k):
                    rhs = rhs + q * c * wpq(th)
        worst = max(worst, float(np.max(np.abs(w.deriv(th) - rhs))))
    return worst


def boundary_residual(co: SSMCoefficients, radius: float, n_phase: int = 64) -> float:
    """Max over ``|z| = radius`` of the truncated boundary-equation residual."""
    eig = co.eig
    z = radius * np.exp(2j * np.pi * np.arange(n_phase) / n_phase)
    zb = np.conj(z)
    dz = co.field(z)
    lhs = np.zeros_like(z)
    for (j, k), w in co.w.items():
        w0 = w(0.0)
        if j:
            lhs = lhs + j * w0 * z ** (j - 1) * zb ** k * dz
        if k:
            lhs = lhs + k * w0 * z ** j * zb ** (k - 1) * np.conj(dz)
    u = sum(w(0.0) * z ** j * zb ** k for (j, k), w in co.w.items())
    v = sum(w(-eig.tau) * z ** j * zb ** k for (j, k), w in co.w.items())
    rhs = eig.L * u + eig.R * v + eig.n_uv * u * v
    return float(np.max(np.abs(lhs - rhs)))


def invariance_ratio(co: SSMCoefficients, radius: float = 1e-2) -> float:
    """Residual growth per doubling of ``|z|``; about 16 for a consistent cubic expansion."""
    return boundary_residual(co, 2 * radius) / boundary_residual(co, radius)


# --- prediction ----------------------------------------------------------

VALIDITY_RADIUS = 3.0


def project(co: SSMCoefficients, history: np.ndarray, dt: float) -> complex:
    """``z0 = <psi_1, y>`` for a shifted history sampled on ``[-tau, 0]`` (trapezoid)."""
    eig = co.eig
    y = np.asarray(history, dtype=float).ravel()
    m = len(y) - 1
    if abs(m * dt - eig.tau) > 1e-9:
        raise OracleError("history grid must span exactly one delay")
    s = dt * np.arange(m + 1)                # s in [0, tau], y(-s) = y[m - i]
    integrand = eig.dpsi(1, s) * y[::-1]
    return complex(eig.psi(1, 0.0) * y[-1] + np.trapezoid(integrand, s))


def oracle_predict(co: SSMCoefficients, history: np.ndarray, dt: float, t_end: float,
                   equilibrium: float = None, theta: float = 0.0):
    """Reduced-model prediction of ``x(t)`` from a sampled history of the unshifted equation."""
    x_eq = co.eig.K if equilibrium is None else equilibrium
    z = project(co, np.asarray(history, dtype=float) - x_eq, dt)
    if abs(z) > VALIDITY_RADIUS:
        warnings.warn(f"|z0| = {abs(z):.3g} exceeds the validity radius {VALIDITY_RADIUS}", RuntimeWarning)
    n = int(round(t_end / dt))
    zs = np.empty(n + 1, dtype=complex)
    zs[0] = z
    f = co.field
    for i in range(n):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        zs[i + 1] = z
    t = dt * np.arange(n + 1)
    return t, co.W(zs, theta) + x_eq, zs
