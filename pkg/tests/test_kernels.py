import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from geosim import kernels
from geosim.engine import nib_config, simulate_rounds
from geosim.netsim import NIB_LINK, TREE2, DIRECT, broadcast_offsets
from geosim.records import MIB
from geosim.workload import generate_arrivals

needs_numba = pytest.mark.skipif(not kernels.numba_enabled(), reason="numba path disabled")


def fifo_oracle(arr, tv):
    done, free = [], 0.0
    for a in arr:
        free = max(free, a) + tv
        done.append(free)
    return np.array(done)


@given(st.lists(st.floats(0, 5), min_size=1, max_size=60), st.floats(1e-6, 0.1))
def test_vote_fifo_closed_form(raw, tv):
    arr = np.sort(np.array(raw))
    rec = np.arange(arr.size)
    bw = 8 * 141 / tv
    _, a, done = kernels.votes_np(arr, rec, 0.0, 0.0, bw, 0.0, 141, 0.0)
    np.testing.assert_allclose(done, fifo_oracle(a, 8 * 141 / bw), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("strat", [TREE2, DIRECT])
def test_deliveries_match_netsim(strat):
    alive = np.ones(20, dtype=np.int8)
    rec, d = kernels.deliveries_np(MIB, 3, alive, 20, NIB_LINK.bandwidth, NIB_LINK.propagation,
                                   strat.code, strat.beta, 0.0, 0)
    assert list(rec) == [(3 + i) % 20 for i in range(1, 20)]
    np.testing.assert_allclose(d, broadcast_offsets(MIB, 19, NIB_LINK, strat))


def test_crashed_recipients_skipped():
    alive = np.ones(6, dtype=np.int8)
    alive[2] = 0
    rec, d = kernels.deliveries_np(100, 0, alive, 6, 1e8, 0.02, kernels.STRAT_DIRECT, 2, 0.0, 0)
    assert list(rec) == [1, 3, 4, 5] and d.size == 4


def test_jitter_bounded_and_keyed():
    u = kernels._uniform_np(kernels.phase_key(5, 3, 1), 1000)
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.05
    assert not np.array_equal(u, kernels._uniform_np(kernels.phase_key(5, 3, 2), 1000))


def test_quorum_time_unreachable():
    assert kernels.quorum_time(np.array([1.0]), 1, 3, 0.0, 0.0) == np.inf


def test_env_flag(monkeypatch):
    monkeypatch.setenv("GEOSIM_DISABLE_NUMBA", "1")
    assert not kernels.numba_enabled()
    assert kernels.get_round_loop() is kernels.round_loop_np


def _same(a, b):
    return all(np.array_equal(x, y, equal_nan=True) for x, y in zip(a, b))


configs = st.builds(
    dict,
    n=st.integers(1, 12),
    b_max=st.sampled_from([64 * 1024, MIB, 4 * MIB]),
    strategy=st.sampled_from(["tree", "direct"]),
    beta=st.integers(2, 4),
    rate=st.floats(5, 800),
    gamma=st.integers(1, 5),
    jitter=st.sampled_from([0.0, 0.1]),
    crash=st.integers(0, 3),
    empty_blocks=st.booleans(),
    seed=st.integers(0, 2**32),
)


@needs_numba
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(c=configs)
def test_numba_and_numpy_paths_bit_identical(c):
    n = c["n"]
    crashed = tuple(range(1, 1 + min(c["crash"], n - 1)))
    cfg = nib_config(n=n, b_max=c["b_max"], strategy=c["strategy"], beta=c["beta"], rate=c["rate"], country=None,
                     gamma=c["gamma"], jitter=c["jitter"], crashed=crashed, empty_blocks=c["empty_blocks"],
                     seed=c["seed"], duration=60.0)
    arr = generate_arrivals(cfg.arrival_rate, cfg.duration, cfg.seed)
    assert _same(simulate_rounds(cfg, arr, use_numba=False), simulate_rounds(cfg, arr, use_numba=True))


@needs_numba
def test_full_hour_bit_identical():
    cfg = nib_config(n=32, strategy="direct", seed=9)
    arr = generate_arrivals(cfg.arrival_rate, cfg.duration, cfg.seed)
    assert _same(simulate_rounds(cfg, arr, use_numba=False), simulate_rounds(cfg, arr, use_numba=True))
