import numpy as np
import pytest

from magnonmem import streams


def test_values_in_open_unit_interval():
    u = streams.uniforms(streams.stream_key(1), np.arange(100_000))
    assert u.shape == (100_000, streams.SLOTS_PER_TRIAL)
    assert u.min() > 0 and u.max() < 1


def test_uniform_matches_uniforms_column():
    key = streams.stream_key(7, 3)
    idx = np.arange(1000, 2000)
    full = streams.uniforms(key, idx)
    for slot in (0, 5, 15):
        assert np.array_equal(streams.uniform(key, idx, slot), full[:, slot])


def test_order_independence():
    key = streams.stream_key(42)
    idx = np.arange(500)
    perm = np.random.default_rng(0).permutation(500)
    assert np.array_equal(streams.uniforms(key, idx)[perm], streams.uniforms(key, idx[perm]))


def test_keys_differ_by_seed_and_stream():
    keys = {streams.stream_key(s, k) for s in range(5) for k in range(5)}
    assert len(keys) == 25


def test_moments_and_slot_correlation():
    u = streams.uniforms(streams.stream_key(3), np.arange(200_000))
    assert abs(u.mean() - 0.5) < 5 * np.sqrt(1 / 12 / u.size)
    corr = np.corrcoef(u[:, 0], u[:, 1])[0, 1]
    assert abs(corr) < 5 / np.sqrt(len(u))


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        streams.stream_key(-1)
    with pytest.raises(ValueError):
        streams.uniform(streams.stream_key(0), np.arange(3), streams.SLOTS_PER_TRIAL)
