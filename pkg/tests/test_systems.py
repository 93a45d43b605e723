import zlib

import numpy as np
import pytest

from ddessm import dde, systems
from ddessm.dde import HistorySpec

PUBLISHED_DEFAULTS = {
    "hutchinson": {"r": 1.8, "K": 10.0, "tau": 1.0},
    "mackey-glass": {"beta": 4.0, "gamma": 2.0, "alpha": 9.6, "tau": 1.0},
    "two-neuron": {"kappa": 0.5, "beta": -1.0, "a12": 1.0, "a21": 2.0, "tau_s": 1.5, "tau_1": 2.0, "tau_2": 2.0},
    "rossler-delay": {"alpha1": 0.2, "alpha2": 1.0, "beta1": 0.2, "beta2": 0.2, "gamma": 1.2,
                      "tau1": 1.0, "tau2": 2.0},
    "cushing": {"a": 1.0, "b": -3.0, "tau": 1.0},
}

# admissible ranges for random overrides (all keep the anchor an equilibrium)
RANGES = {
    "hutchinson": {"r": (0.5, 2.5), "K": (1.0, 20.0), "tau": (0.5, 2.0)},
    "mackey-glass": {"beta": (1.0, 5.0), "gamma": (0.5, 3.0), "alpha": (2.0, 10.0)},
    "two-neuron": {"kappa": (0.2, 1.0), "a12": (0.5, 2.0), "tau_s": (1.0, 2.0)},
    "rossler-delay": {"alpha1": (0.1, 0.3), "beta2": (0.1, 0.3), "gamma": (1.0, 1.5)},
    "traffic": {"alpha": (0.2, 0.5), "v_ref": (10.0, 28.0), "tau": (0.9, 1.2)},
    "cushing": {"a": (0.5, 1.5), "b": (-4.0, -1.0), "tau": (0.9, 1.1)},
    "cushing-lifted": {"a": (0.5, 1.5), "b": (-4.0, -1.0), "tau": (0.9, 1.1)},
}


@pytest.mark.parametrize("name", sorted(PUBLISHED_DEFAULTS))
def test_published_defaults(name):
    assert systems.CATALOG[name].default_params == PUBLISHED_DEFAULTS[name]


def test_traffic_defaults():
    p = systems.CATALOG["traffic"].default_params
    assert (p["alpha"], p["beta"], p["beta_hat"], p["beta_m1"]) == (0.3, 0.4, 0.6, -0.4)
    assert (p["v_ref"], p["h_stop"], p["h_go"], p["v_max"]) == (26.55, 5.0, 55.0, 30.0)


@pytest.mark.parametrize("name", sorted(systems.CATALOG))
def test_rhs_vanishes_at_equilibrium(name):
    s = systems.build(name)
    eq = systems.equilibrium(name)
    assert np.max(np.abs(s.evaluate_at_constant(eq))) < 1e-12


@pytest.mark.parametrize("name", sorted(RANGES))
def test_equilibrium_random_overrides(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for _ in range(5):
        ov = {k: rng.uniform(*r) for k, r in RANGES[name].items()}
        s = systems.build(name, ov)
        eq = systems.equilibrium(name, ov)
        assert np.max(np.abs(s.evaluate_at_constant(eq))) < 1e-12


def test_two_neuron_origin():
    out = systems.two_neuron_rhs(0.0, np.zeros(2), np.zeros((3, 2)), np.zeros(2),
                                 systems.build("two-neuron").param_vector)
    assert np.array_equal(out, [0.0, 0.0])


def test_rossler_equilibrium_residual():
    p = PUBLISHED_DEFAULTS["rossler-delay"]
    x, res = systems.rossler_equilibrium(p["alpha1"], p["alpha2"], p["beta1"], p["beta2"], p["gamma"])
    assert res < 1e-12
    assert np.max(np.abs(x)) > 0.1     # nontrivial equilibrium


def test_unknown_name_and_param():
    with pytest.raises(systems.CatalogError):
        systems.build("lorenz")
    with pytest.raises(systems.CatalogError):
        systems.build("hutchinson", {"q": 1.0})


def test_range_policy_properties():
    hs, hg, vm, vref = 5.0, 55.0, 30.0, 26.55
    V = lambda h: systems.range_policy(h, hs, hg, vm)  # noqa: E731
    assert V(hs) == 0.0 and V(hg) == vm
    hh = np.linspace(0.0, 70.0, 2001)
    vals = np.array([V(h) for h in hh])
    assert np.all(np.diff(vals) >= 0)
    hstar = systems.traffic_h_star(vref, hs, hg, vm)
    assert abs(V(hstar) - vref) < 1e-9


def test_micro_chaos_requires_unstable_plant():
    with pytest.raises(ValueError):
        systems.micro_chaos_toy(-1.0, 1.0, 0.0, 0.1, 0)


def test_micro_chaos_continuous_limit_stability():
    # resolution 0, r 0, small sample period: stable iff p_gain > a
    for gain, stable in ((1.5, True), (0.7, False)):
        s = systems.micro_chaos_toy(1.0, gain, 0.0, 0.002, 0)
        tr = dde.simulate_digital(s, 0.0, HistorySpec.constant([0.1]), 10.0, 0.001)
        grew = abs(tr.samples[-1, 0]) > 0.1
        assert grew != stable
        assert np.sign(1.0 - gain) == (1 if grew else -1)   # sign of the closed-loop eigenvalue a - p


def test_micro_chaos_open_loop():
    s = systems.micro_chaos_toy(1.0, 0.0, 0.01, 0.1, 0)
    tr = dde.simulate_digital(s, 0.01, HistorySpec.constant([1e-3]), 3.0, 0.01)
    assert np.allclose(tr.samples[:, 0], 1e-3 * np.exp(tr.times), rtol=1e-8)


def test_micro_chaos_bounded_chaotic_looking():
    orb = systems.micro_chaos_map(1.0, 1.2, 0.01, 0.02, 1, [0.003, 0.003], 20000)
    tail = orb[1000:]
    assert np.all(np.isfinite(tail)) and np.max(np.abs(tail)) < 0.1
    assert len(np.unique(np.round(tail, 12))) > 50     # not settled onto a short cycle


def test_catalog_listing_roundtrips_json():
    import json
    listing = systems.catalog_listing()
    assert json.loads(json.dumps(listing)) == listing
    assert set(listing) == set(systems.CATALOG)
