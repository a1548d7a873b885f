import numpy as np
import pytest

from d2drelay.channel import ChannelParams, link_rate
from d2drelay.grid import GridSpec, MobilityParams, NetworkTopology
from d2drelay.policy import PowerLevelSet
from d2drelay.queues import BS, SILENT
from d2drelay.stability import (
    PowerVector,
    RandomizedPolicy,
    StabilityInstance,
    check_membership,
    enumerate_power_vectors,
    instance_from_grid,
    load_instance,
    sample_randomized_policy,
    save_instance,
)
from conftest import make_tiny_instance


def test_enumerate_counts_single_ms_single_level():
    vecs = enumerate_power_vectors(1, PowerLevelSet(np.array([20.0])))
    assert len(vecs) == 2  # silence, transmit-to-BS


def test_enumerate_counts_two_ms_single_level():
    vecs = enumerate_power_vectors(2, PowerLevelSet(np.array([20.0])))
    assert len(vecs) == 9  # (silence | BS | peer) ** 2


def test_enumerate_counts_two_ms_two_levels():
    vecs = enumerate_power_vectors(2, PowerLevelSet(np.array([20.0, 23.01])))
    assert len(vecs) == 25  # (1 + 2 receivers x 2 levels) ** 2
    keys = {v.key() for v in vecs}
    assert len(keys) == 25  # deduplicated


def test_enumerate_max_active_filter():
    vecs = enumerate_power_vectors(2, PowerLevelSet(np.array([20.0])), max_active=1)
    assert len(vecs) == 5  # silence + 2x2 single-transmitter choices


def test_enumerate_cap_guard():
    with pytest.raises(ValueError, match="cap"):
        enumerate_power_vectors(6, PowerLevelSet.default(), cap=1000)


def test_membership_zero_rate_vector(tiny_instance):
    res = check_membership(np.zeros(2), tiny_instance)
    assert res.inside
    assert res.slack > 0
    # the all-silent policy is itself a witness for zero traffic
    zero = RandomizedPolicy(np.zeros((2, 3)), np.zeros((2, 3, 2)))
    assert np.all(zero.w.sum(axis=1) <= 1)


def test_membership_rejects_rates_beyond_service_ceiling(tiny_instance):
    ceiling = tiny_instance.service_ceiling()
    lam = np.array([ceiling[0] + 0.5, 0.0])
    assert not check_membership(lam, tiny_instance).inside


def test_membership_witness_satisfies_constraints(tiny_instance):
    for lam in ([1.0, 1.0], [1.5, 1.5], [0.3, 1.9]):
        res = check_membership(np.array(lam), tiny_instance)
        assert res.inside
        w, q = res.witness.w, res.witness.q
        assert np.all(w >= -1e-12) and np.all(w.sum(axis=1) <= 1 + 1e-9)
        assert np.all((q >= -1e-12) & (q <= 1 + 1e-12))
        own, relay, power = _constraint_values(tiny_instance, w, q)
        assert np.all(own >= np.array(lam) - 1e-9)
        assert np.all(relay >= -1e-9)
        assert np.all(power <= tiny_instance.p_bar_mw + 1e-9)


def _constraint_values(inst, w, q):
    """Direct evaluation of the three stationary constraints from (w, q)."""
    S, M, N = inst.rates.shape
    bs = inst.bs_rate()
    ms = inst.ms_rate()
    inflow = inst.inflow()
    power = inst.power()
    own = np.zeros(N)
    relay = np.zeros(N)
    pw = np.zeros(N)
    for i in range(N):
        for s in range(S):
            for k in range(M):
                own[i] += inst.pi[s] * w[s, k] * (bs[s, k, i] * q[s, k, i] + ms[s, k, i])
                relay[i] += inst.pi[s] * w[s, k] * (
                    bs[s, k, i] * (1 - q[s, k, i]) - inflow[s, k, i]
                )
                pw[i] += inst.pi[s] * w[s, k] * power[k, i]
    return own, relay, pw


def test_linearization_is_exact(tiny_instance):
    # constraints evaluated through v = w*q coincide with the (w, q) form
    rng = np.random.default_rng(31)
    inst = tiny_instance
    S, M, N = inst.rates.shape
    for _ in range(50):
        w = rng.random((S, M))
        w /= np.maximum(w.sum(axis=1, keepdims=True), 1.0) * rng.uniform(1.0, 2.0)
        q = rng.random((S, M, N))
        v = w[:, :, None] * q
        assert np.all(v <= w[:, :, None] + 1e-15)
        own_q, relay_q, _ = _constraint_values(inst, w, q)
        # v-form evaluation
        bs = inst.bs_rate()
        ms = inst.ms_rate()
        inflow = inst.inflow()
        own_v = np.zeros(N)
        relay_v = np.zeros(N)
        for i in range(N):
            own_v[i] = np.sum(inst.pi[:, None] * (bs[:, :, i] * v[:, :, i] + ms[:, :, i] * w))
            relay_v[i] = np.sum(
                inst.pi[:, None] * (bs[:, :, i] * (w - v[:, :, i]) - inflow[:, :, i] * w)
            )
        assert own_q == pytest.approx(own_v)
        assert relay_q == pytest.approx(relay_v)
        # and back: q' = v / w reproduces q on the support
        with np.errstate(invalid="ignore", divide="ignore"):
            q_back = np.where(w[:, :, None] > 0, v / np.maximum(w[:, :, None], 1e-300), 0.0)
        assert np.all(np.abs(q_back - np.where(w[:, :, None] > 0, q, 0.0)) < 1e-12)


def test_membership_monotone_on_grid(tiny_instance):
    axis = np.linspace(0.0, 2.4, 10)
    inside = np.zeros((10, 10), dtype=bool)
    for i, a in enumerate(axis):
        for j, b in enumerate(axis):
            inside[i, j] = check_membership(np.array([a, b]), tiny_instance).inside
    # downward closure along both axes
    assert np.all(inside[:-1, :] | ~inside[1:, :])
    assert np.all(inside[:, :-1] | ~inside[:, 1:])


def test_membership_convex_on_random_pairs(tiny_instance):
    rng = np.random.default_rng(32)
    inside_pts = []
    while len(inside_pts) < 20:
        lam = rng.random(2) * 2.4
        if check_membership(lam, tiny_instance).inside:
            inside_pts.append(lam)
    for _ in range(100):
        a, b = rng.choice(len(inside_pts), 2, replace=False)
        mid = 0.5 * (inside_pts[a] + inside_pts[b])
        assert check_membership(mid, tiny_instance).inside


def test_sample_point_mass():
    w = np.zeros((1, 3))
    w[0, 1] = 1.0
    pol = RandomizedPolicy(w, np.full((1, 3, 2), 0.5))
    rng = np.random.default_rng(33)
    for _ in range(200):
        k, _ = sample_randomized_policy(pol, 0, rng)
        assert k == 1


def test_sample_all_silent():
    pol = RandomizedPolicy(np.zeros((1, 2)), np.zeros((1, 2, 3)))
    rng = np.random.default_rng(34)
    for _ in range(100):
        k, own = sample_randomized_policy(pol, 0, rng)
        assert k is None and not own.any()


def test_sample_frequencies_within_3_sigma():
    w = np.array([[0.3, 0.5, 0.1]])  # silence probability 0.1
    pol = RandomizedPolicy(w, np.full((1, 3, 2), 0.25))
    rng = np.random.default_rng(35)
    n = 100_000
    counts = np.zeros(4)
    own_count = 0
    for _ in range(n):
        k, own = sample_randomized_policy(pol, 0, rng)
        counts[3 if k is None else k] += 1
        if k is not None:
            own_count += int(own[0])
    for k, p in enumerate([0.3, 0.5, 0.1, 0.1]):
        sigma = np.sqrt(p * (1 - p) * n)
        assert abs(counts[k] - p * n) < 3 * sigma
    p_own = 0.25
    n_tx = counts[:3].sum()
    assert abs(own_count - p_own * n_tx) < 3 * np.sqrt(p_own * (1 - p_own) * n_tx)


def test_instance_file_round_trip(tmp_path, tiny_instance):
    path = tmp_path / "tiny.inst"
    save_instance(tiny_instance, path)
    back = load_instance(path)
    assert np.array_equal(back.pi, tiny_instance.pi)
    assert np.array_equal(back.rates, tiny_instance.rates)
    assert np.array_equal(back.p_bar_mw, tiny_instance.p_bar_mw)
    for a, b in zip(back.vectors, tiny_instance.vectors):
        assert np.array_equal(a.receiver, b.receiver)
        assert np.array_equal(a.power_mw, b.power_mw)


def test_instance_from_grid_matches_link_rate():
    grid = GridSpec(10, 0, 10, (0, 0))  # two grid points, BS on the left one
    ch = ChannelParams()
    levels = PowerLevelSet(np.array([20.0]))
    mob = MobilityParams.uniform(2)
    inst = instance_from_grid(grid, ch, mob, levels, np.array([50.0, 50.0]), n_ms=2)
    assert inst.n_topologies == 4
    assert inst.n_vectors == 9
    assert inst.pi == pytest.approx(np.full(4, 0.25))
    # spot-check rates against the scalar channel model
    for t in range(4):
        flat = [t % 2, t // 2]
        pos_m = grid.to_meters(grid.unflatten_index(np.array(flat)))
        for k, vec in enumerate(inst.vectors):
            for i in range(2):
                r = vec.receiver[i]
                if r == SILENT:
                    assert inst.rates[t, k, i] == 0
                    continue
                rx_m = np.array(grid.bs_position) if r == BS else pos_m[r]
                assert inst.rates[t, k, i] == link_rate(pos_m[i], rx_m, 20.0, ch, grid)


def test_save_load_membership_equivalence(tmp_path):
    inst = make_tiny_instance()
    path = tmp_path / "round.inst"
    save_instance(inst, path)
    back = load_instance(path)
    for lam in ([1.0, 1.0], [2.2, 2.2]):
        a = check_membership(np.array(lam), inst)
        b = check_membership(np.array(lam), back)
        assert a.verdict == b.verdict
        assert a.slack == pytest.approx(b.slack, abs=1e-9)
