import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from ddessm import dde, oracle as O, systems
from ddessm.dde import HistorySpec

# reduced-dynamics coefficient table (values times 1e-2)
TABLE = {(2, 0): 7.2 - 4.2j, (1, 1): 0.55 + 0.82j, (0, 2): -6.6 + 5.0j, (3, 0): -0.39 - 0.073j,
         (2, 1): -0.34 + 0.054j, (1, 2): 0.18 - 0.30j, (0, 3): 0.080 - 0.39j}

# printed manifold expansion at theta = 0, multinomial factor included
PRINTED_W = {(2, 0): (1, 0.0046 - 0.021j), (1, 1): (2, 0.0024), (3, 0): (1, -0.0019 + 0.0025j),
             (2, 1): (3, -0.0017 + 0.0026j)}


@pytest.fixture(scope="module")
def co():
    return O.solve()


def quad_pair(eig, i, f):
    """Bilinear pairing by adaptive quadrature: psi(0) f(0) + R int psi(xi + tau) f(xi)."""
    li = eig.lam_i(i)
    ps = eig.p_star(i)

    def g(xi, part):
        v = ps * np.exp(-li * (xi + eig.tau)) * eig.R * f(xi)
        return v.real if part == 0 else v.imag

    re = quad(g, -eig.tau, 0.0, args=(0,), epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    im = quad(g, -eig.tau, 0.0, args=(1,), epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return ps * complex(f(0.0)) + complex(re, im)


def test_dominant_root(co):
    lam = co.eig.lam
    assert abs(lam.real - 0.097) < 0.01 and abs(lam.imag + 1.6) < 0.05
    assert abs(co.eig.delta(lam)) < 1e-12


def test_pi_limit_is_one(co):
    assert co.eig.Pi(1, co.eig.lam) == 1
    assert co.eig.Pi(2, co.eig.lam.conjugate()) == 1
    # and the closed form approaches it continuously
    assert abs(co.eig.Pi(1, co.eig.lam + 1e-7) - 1) < 1e-6


def test_pairing_normalization(co):
    eig = co.eig
    for i in (1, 2):
        li = eig.lam_i(i)
        assert abs(quad_pair(eig, i, lambda t: np.exp(li * t)) - 1.0) < 1e-10
        # biorthogonality to the other eigenfunction
        other = eig.lam_i(3 - i)
        assert abs(quad_pair(eig, i, lambda t: np.exp(other * t))) < 1e-10


def test_pi_matches_quadrature(co):
    eig = co.eig
    for a in (0.3 - 2j, 2 * eig.lam, -1.0 + 0.5j):
        assert abs(eig.Pi(1, a) - quad_pair(eig, 1, lambda t: np.exp(a * t))) < 1e-10


def test_nonresonance_values(co):
    vals = O.check_nonresonance(co.eig)
    assert len(vals) == 7
    assert min(vals.values()) > 0.1


def test_artificial_resonance_flagged(co):
    fake = O.EigData(co.eig.lam / 2, co.eig.r, co.eig.K, co.eig.tau)   # 2 lam is a root
    with pytest.raises(O.ResonanceError):
        O.check_nonresonance(fake)
    with pytest.raises(O.ResonanceError):
        O.solve_order2(fake)


def test_conjugate_sum_delta_is_real(co):
    lam = co.eig.lam
    assert co.eig.delta(lam + lam.conjugate()).imag == 0.0


@pytest.mark.parametrize("jk", sorted(TABLE))
def test_beta_table(co, jk):
    b = 100 * co.beta[jk]
    assert abs(b - TABLE[jk]) / abs(TABLE[jk]) < 0.05


def test_printed_linear_part(co):
    lam = co.eig.lam
    assert round(lam.real, 3) == 0.097 and round(lam.imag, 1) == -1.6


@pytest.mark.parametrize("jk", sorted(PRINTED_W))
def test_printed_manifold_coefficients(co, jk):
    mult, printed = PRINTED_W[jk]
    val = mult * co.scaled_W(*jk, 0.0)
    assert abs(val - printed) / abs(printed) < 0.05


def test_vanishing_nonlinearity():
    co = O.solve(K=1e9)
    assert max(abs(b) for b in co.beta.values()) < 1e-8
    assert max(abs(co.w[jk](0.0)) for jk in [(2, 0), (1, 1), (0, 2)]) < 1e-8


def test_reality(co):
    assert O.reality_defect(co) < 1e-12


def test_gauge_closed_form(co):
    assert O.gauge_defect(co) < 1e-12


def test_gauge_by_quadrature(co):
    for jk, w in co.w.items():
        if sum(jk) < 2:
            continue
        for i in (1, 2):
            assert abs(quad_pair(co.eig, i, w)) < 1e-10


def test_interior_residual(co):
    assert O.interior_defect(co) < 1e-9


def test_boundary_equation_at_each_monomial(co):
    # the boundary residual at |z| = r is O(r^4): cubic terms are all cancelled
    for r in (1e-3, 1e-2):
        assert O.boundary_residual(co, r) < 10 * r ** 4


def test_invariance_ratio(co):
    assert 12 <= O.invariance_ratio(co, 1e-2) <= 20


def test_field_conjugate_consistency(co):
    z = 0.03 * np.exp(0.7j)
    zb_dot = co.eig.lam.conjugate() * np.conj(z) + sum(co.g(a, b) * z ** a * np.conj(z) ** b
                                                       for (b, a) in co.beta)
    assert abs(zb_dot - np.conj(co.field(z))) < 1e-15


def test_zero_history(co):
    hist = np.full(101, co.eig.K)
    t, x, zs = O.oracle_predict(co, hist, 0.01, 5.0)
    assert np.all(zs == 0) and np.all(x == co.eig.K)


def test_projection_matches_quadrature(co):
    dt = 1e-3
    th = np.linspace(-1.0, 0.0, 1001)
    f = lambda t: 0.2 * np.sin(3 * t + 0.4) + 0.1 * t * t  # noqa: E731
    z = O.project(co, f(th), dt)
    assert abs(z - quad_pair(co.eig, 1, f)) < 1e-6


def test_projection_grid_checked(co):
    with pytest.raises(O.OracleError):
        O.project(co, np.zeros(50), 0.01)


def _eigen_history_error(co, eps, dt=1e-3):
    lam = co.eig.lam
    th = np.linspace(-1.0, 0.0, 1001)
    hist_fn = lambda t: np.array([co.eig.K + eps * np.exp(lam * t).real])  # noqa: E731
    T = 2 * math.pi / abs(lam.imag)
    full = dde.simulate(systems.build("hutchinson"), HistorySpec.from_function(hist_fn), T, dt)
    _, x, _ = O.oracle_predict(co, np.array([hist_fn(t)[0] for t in th]), dt, T)
    return np.max(np.abs(full.samples[:, 0] - x[: len(full.samples)]))


def test_small_amplitude_prediction(co):
    e1 = _eigen_history_error(co, 1e-3)
    e2 = _eigen_history_error(co, 5e-4)
    assert e1 < 1e-3 ** 2 * 10
    assert 3.0 < e1 / e2 < 5.0       # quadratic in the amplitude


def test_validity_radius_warning(co):
    hist = co.eig.K + 100.0 * np.sin(3 * np.linspace(-1.0, 0.0, 101) + 1.0)
    with pytest.warns(RuntimeWarning, match="validity radius"):
        O.oracle_predict(co, hist, 0.01, 0.1)


def test_json(co, tmp_path):
    co.to_json(tmp_path / "o.json")
    d = json.loads((tmp_path / "o.json").read_text())
    assert d["schema"] == "ddessm.oracle/1"
    assert set(d["beta"]) == {"20", "11", "02", "30", "21", "12", "03"}
    assert d["lambda"] == [co.eig.lam.real, co.eig.lam.imag]
    assert co.to_json() == O.solve().to_json()
