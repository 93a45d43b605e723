import math
import warnings

import numpy as np
import pytest

from ddessm import spectrum as S
from ddessm import systems
from ddessm._accel import jit
from ddessm.dde import DelaySystem


@jit
def scaled_delay_rhs(t, x, xd, xi, p):
    out = np.empty(1)
    out[0] = -p[0] * xd[0, 0]
    return out


def scaled_delay(c, tau):
    return DelaySystem("scaled-delay", 1, scaled_delay_rhs, {"c": c, "tau": tau}, (tau,))


def test_hutchinson_jacobians():
    cm = S.linearize(systems.build("hutchinson"), [10.0])
    assert abs(cm.L[0, 0]) < 1e-9
    assert abs(cm.R[0][0, 0] + 1.8) < 1e-8


def test_linear_delay_jacobian():
    cm = S.linearize(scaled_delay(1.0, 1.0), [0.0])
    assert abs(cm.L[0, 0]) < 1e-12 and abs(cm.R[0][0, 0] + 1.0) < 1e-12


def test_two_neuron_hand_jacobian():
    cm = S.linearize(systems.build("two-neuron"), [0.0, 0.0])
    kappa, beta, a12, a21 = 0.5, -1.0, 1.0, 2.0
    assert np.allclose(cm.L, -kappa * np.eye(2), atol=1e-9)
    # tau_1 = tau_2 share one delayed block
    assert cm.taus == [1.5, 2.0]
    assert np.allclose(cm.R[0], beta * np.eye(2), atol=1e-9)
    assert np.allclose(cm.R[1], [[0, a12], [a21, 0]], atol=1e-9)


def test_non_equilibrium_rejected():
    with pytest.raises(S.SpectrumError):
        S.linearize(systems.build("hutchinson"), [9.0])


def test_hutchinson_dominant_pair():
    cm = S.linearize(systems.build("hutchinson"), [10.0])
    spec = S.roots_in_window(cm, -3, 3, 10)
    z = spec.roots[0]
    assert abs(z.real - 0.097) < 0.01 and abs(abs(z.imag) - 1.6) < 0.05
    assert abs(spec.roots[1] - z.conjugate()) < 1e-9


def test_analytic_quarter_root():
    # mu + (pi/2) exp(-mu) = 0 at mu = +-i pi/2
    cm = S.linearize(scaled_delay(math.pi / 2, 1.0), [0.0])
    assert abs(cm.det(1j * math.pi / 2)) < 1e-9
    spec = S.roots_in_window(cm, -2, 1, 5)
    assert abs(spec.roots[0].real) < 1e-8
    assert abs(abs(spec.roots[0].imag) - math.pi / 2) < 1e-8


@pytest.mark.parametrize("name", ["hutchinson", "mackey-glass", "two-neuron", "rossler-delay", "traffic", "cushing"])
def test_spectrum_invariants(name):
    cm = S.linearize(systems.build(name), systems.equilibrium(name))
    spec = S.roots_in_window(cm, -3, 2, 12, seeds_per_axis=14)
    assert len(spec) > 0
    for z in spec.roots:
        assert S.residual_ok(cm, z)
        # conjugate symmetry
        assert np.min(np.abs(spec.roots - np.conj(z))) < 1e-7
    gaps = np.abs(spec.roots[:, None] - spec.roots[None, :]) + np.eye(len(spec)) * 1e9
    assert np.min(gaps) > S.DEDUP_TOL
    assert np.all(np.diff(spec.roots.real) <= 1e-12)


@pytest.mark.parametrize("name", ["hutchinson", "two-neuron", "traffic"])
def test_seed_density_robustness(name):
    cm = S.linearize(systems.build(name), systems.equilibrium(name))
    a = S.roots_in_window(cm, -3, 2, 12, seeds_per_axis=10)
    b = S.roots_in_window(cm, -3, 2, 12, seeds_per_axis=20)
    floor = a.roots.real.min()
    extra = [z for z in b.roots if z.real > floor + 1e-9 and np.min(np.abs(a.roots - z)) > 1e-6]
    assert extra == []


def test_empty_window_error():
    cm = S.linearize(systems.build("hutchinson"), [10.0])
    with pytest.raises(S.SpectrumError):
        S.roots_in_window(cm, 1, 0, 5)


def test_smoothness_hutchinson_is_infinite():
    cm = S.linearize(systems.build("hutchinson"), [10.0])
    assert S.smoothness_class(S.roots_in_window(cm, -4, 2, 20), 2) == math.inf


def test_smoothness_arithmetic():
    # -2 < l * (-1) needs l < 2; the integer ratio is flagged as an equality case
    spec = S.Spectrum(np.array([-1 + 1j, -1 - 1j, -2 + 3j, -2 - 3j]), np.zeros(4), (-3, 0, 5))
    with pytest.warns(RuntimeWarning):
        assert S.smoothness_class(spec, 2) == 1
    spec = S.Spectrum(np.array([-1 + 1j, -1 - 1j, -2.5 + 3j, -2.5 - 3j]), np.zeros(4), (-3, 0, 5))
    assert S.smoothness_class(spec, 2) == 2


def test_smoothness_resonant_flagged():
    spec = S.Spectrum(np.array([-1.0 + 0j, -3.0 + 0j]), np.zeros(2), (-4, 0, 1))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert S.smoothness_class(spec, 1) == 2
    assert any("resonant" in str(x.message) for x in w)


def test_smoothness_mackey_glass_six_dim():
    cm = S.linearize(systems.build("mackey-glass"), [0.0])
    spec = S.roots_in_window(cm, -8, 3, 30, seeds_per_axis=25)
    assert S.smoothness_class(spec, 6) == 1


def test_mackey_glass_origin_has_real_unstable_root():
    # mu + 2 = 4 exp(-mu) has exactly one real root, and it is positive
    cm = S.linearize(systems.build("mackey-glass"), [0.0])
    spec = S.roots_in_window(cm, -3, 3, 20)
    real = [z for z in spec.roots if z.imag == 0]
    assert len(real) == 1 and real[0].real > 0
    assert abs(real[0].real + 2 - 4 * math.exp(-real[0].real)) < 1e-10
    assert all(z.real < 0 for z in spec.roots[1:])


def test_track_analytic_hayes_boundary():
    # x' = -(pi/2) x(t - tau): crossing at tau = 1
    def builder(tau):
        return scaled_delay(math.pi / 2, tau), np.zeros(1)

    track, crossings = S.track_rightmost(builder, "tau", np.linspace(0.9, 1.1, 9), window=(-2, 1, 4))
    assert len(crossings) == 1 and abs(crossings[0] - 1.0) < 1e-4
    assert track[0][1].real < 0 < track[-1][1].real


def test_cushing_lifted_stable_over_delay_range():
    # the lifted form adds a spurious zero root (z' = x - x(t - tau)); the rest stays stable
    for tau in np.linspace(0.9, 1.1, 5):
        cm = S.linearize(systems.build("cushing-lifted", {"tau": tau}), [0.0, 0.0])
        spec = S.roots_in_window(cm, -3, 1, 10)
        assert abs(spec.roots[0]) < 1e-8
        assert spec.roots[1].real < 0
        direct = S.roots_in_window(S.linearize(systems.build("cushing", {"tau": tau}), [0.0]), -3, 1, 10)
        assert direct.roots[0].real < 0
        assert abs(direct.roots[0] - spec.roots[1]) < 1e-7 or abs(direct.roots[0] - spec.roots[2]) < 1e-7


def test_unsorted_grid_rejected():
    with pytest.raises(S.SpectrumError):
        S.track_rightmost(lambda v: (scaled_delay(1.0, v), np.zeros(1)), "tau", [1.0, 0.9])


def test_spectrum_csv(tmp_path):
    cm = S.linearize(systems.build("hutchinson"), [10.0])
    spec = S.roots_in_window(cm, -1, 1, 5)
    spec.to_csv(tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "re,im,residual" and len(rows) == len(spec) + 1
