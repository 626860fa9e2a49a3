import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from e2c.oem import (
    OEMConfig, ObservationBuffer, count_reward, episode_bonuses, knn_reward, quantize,
    shape_episode, shape_reward,
)
from e2c.errors import ConfigError


def brute_kth(points, obs, k):
    ds = []
    for p in points:
        s = 0.0
        for a, b in zip(p, obs):
            s += (a - b) * (a - b)
        ds.append(math.sqrt(s))
    if not ds:
        return 0.0
    ds.sort()
    return ds[k - 1] if len(ds) > k else ds[-1]


def test_count_first_and_third_visit():
    buf = ObservationBuffer(2)
    o = np.array([0.9, 0.1])
    assert count_reward(buf, o) == 1.0
    buf.add(o)
    buf.add(np.array([0.7, 0.2]))  # same binary key
    assert count_reward(buf, o) == 1.0 / 3


@pytest.mark.parametrize("n", [1, 2, 7, 80])
def test_count_episode_total_is_harmonic(n):
    obs = np.tile([[[0.2, 0.8, 0.6]]], (n, 1, 1))
    total = episode_bonuses(OEMConfig(), obs).sum()
    assert total == sum(1.0 / i for i in range(1, n + 1))


def test_buffer_count_invariant_and_clear():
    rng = np.random.default_rng(0)
    buf = ObservationBuffer(3, capacity=4)
    obs = rng.random((50, 3))
    for o in obs:
        buf.add(o)
    for key in {quantize(o) for o in obs}:
        assert buf.count(key) == sum(quantize(o) == key for o in obs)
    buf.clear()
    assert len(buf) == 0 and buf.count(quantize(obs[0])) == 0


def test_quantize_levels():
    assert quantize([0.0, 0.49, 0.5, 1.0, 2.0]) == (0, 0, 1, 1, 1)
    assert quantize([0.0, 0.34, 0.5, 0.99], level=2) == (0, 1, 1, 2)


def test_knn_identical_copies_zero():
    buf = ObservationBuffer(2)
    for _ in range(5):
        buf.add(np.array([0.3, 0.3]))
    assert knn_reward(buf, np.array([0.3, 0.3]), 5) == 0.0


def test_knn_distance_e_minus_one_gives_one():
    buf = ObservationBuffer(1)
    buf.add(np.array([0.0]))
    assert abs(knn_reward(buf, np.array([math.e - 1]), 1) - 1.0) < 1e-15


def test_knn_empty_buffer_zero():
    assert knn_reward(ObservationBuffer(3), np.ones(3), 5) == 0.0


def test_knn_fewer_than_k_uses_farthest():
    buf = ObservationBuffer(1)
    for v in (1.0, 3.0):
        buf.add(np.array([v]))
    assert knn_reward(buf, np.array([0.0]), 5) == math.log(4.0)


@pytest.mark.parametrize("seed", range(3))
def test_knn_matches_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    buf = ObservationBuffer(4)
    pts = rng.standard_normal((50, 4))
    for p in pts:
        buf.add(p)
    q = rng.standard_normal(4)
    assert knn_reward(buf, q, 5) == math.log(brute_kth(pts.tolist(), q.tolist(), 5) + 1.0)


def test_shape_reward_examples():
    assert shape_reward(OEMConfig(beta="poi_values"), 0.8, beta=0.0) == 0.0
    assert abs(shape_reward(OEMConfig(mixing="mixed"), 1.0, extrinsic=2.0) - 2.3) < 1e-15
    assert shape_reward(OEMConfig(), 0.123) == 0.123


def test_shape_episode_zero_psi_is_extrinsic():
    rng = np.random.default_rng(1)
    obs = rng.random((6, 3, 4))
    ext = rng.standard_normal(6)
    out = shape_episode(OEMConfig(mixing="mixed", psi=0.0, beta="poi_values"), obs, ext,
                        betas=rng.random((6, 3)) * 5)
    assert np.array_equal(out, np.repeat(ext[:, None], 3, axis=1))


def test_shape_episode_needs_betas():
    with pytest.raises(ConfigError):
        shape_episode(OEMConfig(beta="poi_values"), np.zeros((2, 1, 2)), np.zeros(2))


def test_config_validation():
    with pytest.raises(ConfigError):
        OEMConfig(estimator="bogus")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_count_total_matches_counting_oracle(keys):
    # each distinct key visited m times contributes H_m
    obs = np.array([[[k & 1, (k >> 1) & 1]] for k in keys], dtype=float)
    total = episode_bonuses(OEMConfig(), obs).sum()
    expected = 0.0
    for k in set(keys):
        m = keys.count(k)
        expected += sum(1.0 / i for i in range(1, m + 1))
    assert abs(total - expected) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30), st.integers(1, 8), st.sampled_from([5, 10]))
def test_knn_bit_exact_property(seed, n, dim, k):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n, dim))
    buf = ObservationBuffer(dim)
    for p in pts:
        buf.add(p)
    q = rng.standard_normal(dim)
    assert knn_reward(buf, q, k) == math.log(brute_kth(pts.tolist(), q.tolist(), k) + 1.0)
