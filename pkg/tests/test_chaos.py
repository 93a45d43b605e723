import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ddessm import chaos


def rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_segment_dimension():
    pts = np.random.default_rng(0).uniform(size=(5000, 1))
    assert abs(chaos.correlation_dimension(pts).slope - 1.0) < 0.05


def test_square_dimension():
    pts = np.random.default_rng(1).uniform(size=(5000, 2))
    assert abs(chaos.correlation_dimension(pts).slope - 2.0) < 0.1


def test_rotation_invariance():
    pts = np.random.default_rng(1).uniform(size=(3000, 2))
    a = chaos.correlation_dimension(pts, window=(0.02, 0.2))
    b = chaos.correlation_dimension(pts @ rotation(0.7).T, window=(0.02, 0.2))
    assert abs(a.slope - b.slope) < 0.02


def test_pair_counts_brute_force():
    rng = np.random.default_rng(2)
    P = rng.normal(size=(300, 3))
    radii = np.array([0.1, 0.5, 1.0, 2.0])
    D = np.sqrt(((P[:, None] - P[None]) ** 2).sum(-1))[np.triu_indices(300, 1)]
    assert np.array_equal(chaos.pair_counts(P, radii), [(D < r).sum() for r in radii])
    assert np.array_equal(chaos._pair_counts_np(P, radii ** 2), chaos._pair_counts_nb(P, radii ** 2))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 3)), elements=st.floats(-50, 50)),
       arrays(np.float64, 8, elements=st.floats(1e-3, 200)))
def test_correlation_integral_bounds(P, radii):
    radii = np.sort(radii)
    C = chaos.correlation_integral(P, radii)
    assert np.all(C >= 0) and np.all(C <= 1)
    assert np.all(np.diff(C) >= 0)


def test_scaling_window_min_points():
    fit = chaos.correlation_dimension(np.random.default_rng(3).uniform(size=(2000, 2)))
    n_in = np.sum((fit.radii >= fit.window[0]) & (fit.radii <= fit.window[1]))
    assert n_in >= chaos.MIN_WINDOW


@pytest.mark.parametrize("m,d", [(2.2, 6), (2.17, 6), (0.9, 2), (1.0, 4), (2.5, 6)])
def test_dimension_rule(m, d):
    assert chaos.embedding_dimension_rule(m) == d


def test_dimension_rule_rejects_nonpositive():
    with pytest.raises(chaos.ChaosError):
        chaos.embedding_dimension_rule(0.0)


def _linear_advance(rate, dt):
    def advance(X0, nsteps):
        t = dt * np.arange(nsteps + 1)
        return X0[None, :, :] * np.exp(rate * t)[:, None, None]
    return advance


@pytest.mark.parametrize("rate,tol", [(0.5, 0.02), (-1.0, 0.05)])
def test_linear_lyapunov(rate, tol):
    fit = chaos.lyapunov_leading(_linear_advance(rate, 0.05), [0.3], n=30, eps=1e-3, horizon=200, dt=0.05)
    assert abs(fit.exponent - rate) < tol


def test_lyapunov_time_rescaling():
    adv = _linear_advance(0.5, 0.05)
    a = chaos.lyapunov_leading(adv, [0.3], n=30, horizon=200, dt=0.05)
    b = chaos.lyapunov_leading(adv, [0.3], n=30, horizon=200, dt=0.10)   # t -> 2t
    assert abs(b.exponent - a.exponent / 2) < 1e-3


def test_lyapunov_window_stops_at_saturation():
    fit = chaos.lyapunov_leading(_linear_advance(0.5, 0.1), [0.0], n=20, eps=1e-3, horizon=300,
                                 dt=0.1, diameter=1.0)
    assert fit.window[1] < 30.0


def test_lyapunov_collapse_detected():
    with pytest.raises(chaos.ChaosError):
        chaos.lyapunov_leading(lambda X, n: np.zeros((n + 1,) + X.shape), [0.0], n=5, horizon=10)


def test_ball_samples_inside():
    X = chaos.ball_samples([1.0, 2.0, 3.0], 0.1, 500, np.random.default_rng(0))
    assert np.all(np.linalg.norm(X - [1, 2, 3], axis=1) <= 0.1)


def test_pdf_identical():
    A = np.random.default_rng(0).normal(size=(1000, 2))
    assert np.all(chaos.pdf_compare(A, A).distances == 0)


def test_pdf_disjoint():
    A = np.random.default_rng(0).uniform(0, 1, size=500)
    rep = chaos.pdf_compare(A, A + 5, bins=20)
    assert abs(rep.distances[0] - 2.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 50, elements=st.floats(-10, 10)), arrays(np.float64, 70, elements=st.floats(-10, 10)))
def test_pdf_symmetry(a, b):
    assert np.array_equal(chaos.pdf_compare(a, b).distances, chaos.pdf_compare(b, a).distances)


def test_pdf_shape_mismatch():
    with pytest.raises(chaos.ChaosError):
        chaos.pdf_compare(np.zeros((5, 2)), np.zeros((5, 3)))


def test_degenerate_cloud():
    with pytest.raises(chaos.ChaosError):
        chaos.correlation_dimension(np.ones((50, 2)))
