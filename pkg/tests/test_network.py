import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mhfl.network import (EHParams, InstanceConfig, NetworkInstance, generate_instance,
                          harvested_energy, path_loss, with_outage)


def test_path_loss_reference():
    assert path_loss(1e-3, 10.0, 1.0, 3.0) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        path_loss(1e-3, 0.0, 1.0, 3.0)


def test_harvested_energy_product_rule():
    eh = EHParams(10.0, np.array([0.8, 0.5]), np.array([0.5, 0.5]), np.array([0.2, 0.4]))
    assert harvested_energy(eh, 1) == pytest.approx(10 * 0.8 * 0.2 * 0.5)
    assert harvested_energy(eh, 2) == pytest.approx(10 * 0.8 * 0.2 * 0.5 * 0.5 * 0.4 * 0.5)
    with pytest.raises(IndexError):
        harvested_energy(eh, 3)


def test_defaults_match_system_table():
    c = InstanceConfig()
    assert (c.system_bandwidth, c.noise_dbm_hz, c.leaf_max_freq, c.chip_coeff) == (20e6, -174.0, 2e9, 1e-28)
    assert (c.leaf_local_iters, c.relay_local_iters, c.n_routes, c.n_rounds) == (5, 15, 3, 84)


def test_power_cap_validated():
    with pytest.raises(ValueError, match="leaf_max_power_dbm"):
        generate_instance(0, leaf_max_power_dbm=30.0)


def test_determinism_and_shapes():
    a, b = generate_instance(11, n_rounds=5), generate_instance(11, n_rounds=5)
    assert np.array_equal(a.relay_fading, b.relay_fading)
    assert np.array_equal(a.available, b.available)
    assert a.available.shape == (5, 6, 3)
    assert a.leaf_fading.shape == (5, 3)
    c = generate_instance(12, n_rounds=5)
    assert not np.array_equal(a.relay_fading, c.relay_fading)


def test_shared_draws_across_relay_counts():
    small, big = generate_instance(4, n_relays=3, n_rounds=6), generate_instance(4, n_relays=9, n_rounds=6)
    assert np.array_equal(small.relay_fading, big.relay_fading[:, :3])
    assert np.array_equal(small.leaf_fading, big.leaf_fading)
    assert np.array_equal(small.relays.self_energy, big.relays.self_energy[:3])


def test_topology_chain_order_and_successors():
    inst = generate_instance(0, n_relays=6, n_rounds=2)
    for r in range(3):
        route = inst.route(r)
        assert len(route.relays) == 2
        assert route.successors == (1, 0)
        assert list(inst.relay_position[list(route.relays)]) == [1, 2]


def test_energy_harvesting_cascade_and_switch():
    inst = generate_instance(2, n_rounds=3)
    eh = inst.harvested
    assert np.all(eh >= 0)
    for r in range(3):
        chain = list(inst.route(r).relays)
        assert np.all(eh[:, chain[1]] <= eh[:, chain[0]])    # each hop multiplies by a factor < 1
    off = generate_instance(2, n_rounds=3, eh_enabled=False)
    assert np.allclose(off.relay_energy_max, off.relays.self_energy[None, :])
    assert np.allclose(inst.relay_energy_max - off.relay_energy_max, eh)


@given(st.integers(0, 2 ** 31), st.floats(0, 1), st.floats(0, 1))
def test_availability_invariants(seed, move, out):
    inst = generate_instance(seed, n_rounds=8, move_prob=move, outage_prob=out)
    avail = inst.available
    home = inst.relay_route
    routed = avail.any(axis=2)
    # a routed relay always keeps its home route; extra routes are adjacent
    assert np.all(avail[:, np.arange(inst.n_relays), home][routed])
    assert np.all(avail.sum(axis=2) <= 2)
    for n in range(inst.n_relays):
        extra = np.flatnonzero(avail[:, n].any(axis=0))
        assert np.all(np.abs(extra - home[n]) <= 1)
    delta = inst.home_assignment()
    assert np.all(delta.sum(axis=2) == routed)


def test_with_outage_and_roundtrip(tmp_path):
    inst = generate_instance(5, n_rounds=4)
    down = with_outage(inst, [0, 3])
    assert not down.available[:, [0, 3]].any()
    path = tmp_path / "inst.json"
    inst.save(path)
    back = NetworkInstance.load(path)
    assert back.config == inst.config
    for name in ("leaf_fading", "relay_fading", "eh_fading", "available", "relay_successors"):
        assert np.array_equal(getattr(back, name), getattr(inst, name))
    assert np.array_equal(back.relay_energy_max, inst.relay_energy_max)


def test_fading_floor_clips_upload_links():
    inst = generate_instance(9, n_rounds=200, fading_floor_db=-10.0)
    assert inst.relay_fading.min() >= np.sqrt(0.1) - 1e-15
    assert inst.leaf_fading.min() >= np.sqrt(0.1) - 1e-15


def test_path_loss_examples():
    assert path_loss(1.0, 5.0, 5.0, 3.0) == 1.0
    assert path_loss(1.0, 2.0, 1.0, 2.0) == pytest.approx(0.25, rel=1e-15)
    assert path_loss(1e-3, 100.0, 1.0, 3.0) == pytest.approx(1e-9, rel=1e-12)


@given(st.floats(1e-6, 1.0), st.floats(0.1, 1e3), st.floats(1e-3, 1e3), st.floats(0.1, 6.0))
def test_path_loss_decreases_with_distance(a, d, step, alpha):
    assert path_loss(a, d + step, 1.0, alpha) < path_loss(a, d, 1.0, alpha)


def test_harvested_energy_examples():
    assert harvested_energy(EHParams(7.0, np.ones(3), np.ones(3), np.ones(3)), 3) == 7.0
    hop = EHParams(1.0, np.array([0.5, 0.5]), np.array([0.5, 0.5]), np.array([0.01, 0.01]))
    assert harvested_energy(hop, 1) == pytest.approx(0.0025, rel=1e-12)
    assert harvested_energy(hop, 2) == pytest.approx(6.25e-6, rel=1e-12)


@given(st.lists(st.tuples(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(1e-4, 10.0)),
                min_size=2, max_size=8))
def test_harvested_energy_recursion(hops):
    beta, rho, g2 = (np.array(c) for c in zip(*hops))
    eh = EHParams(10.0, beta, rho, g2)
    for n in range(2, len(hops) + 1):
        step = beta[n - 1] * g2[n - 1] * rho[n - 1]
        assert harvested_energy(eh, n) == pytest.approx(harvested_energy(eh, n - 1) * step, rel=1e-12)


def test_rayleigh_draws_match_mean():
    inst = generate_instance(11, n_rounds=20000, n_relays=6)
    draws = inst.eh_fading.ravel()
    assert draws.size >= 10 ** 5
    sigma = inst.config.rayleigh_scale
    assert abs(draws.mean() / (sigma * np.sqrt(np.pi / 2)) - 1) < 0.02
    # the default scale gives unit average power
    assert np.mean(draws ** 2) == pytest.approx(1.0, rel=0.02)
