import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scawb.cpa_engine import (
    CorrelationAccumulator,
    CorrelationSurface,
    NoSignalError,
    attack_block,
    checkpoints,
    correlate,
    correlate_position,
    rank_from_peaks,
    rank_guesses,
    rank_trajectory,
    recovered_key,
)
from scawb.leakage_sim import simulate
from scawb.trace_store import TraceSet


def naive_pearson(x, h):
    """Centered two-pass correlation, NaN on zero variance."""
    x = np.asarray(x, float)
    h = np.asarray(h, float)
    out = np.full((h.shape[0], x.shape[1]), np.nan)
    for k in range(h.shape[0]):
        hc = h[k] - h[k].mean()
        for s in range(x.shape[1]):
            xc = x[:, s] - x[:, s].mean()
            den = math.sqrt((hc * hc).sum() * (xc * xc).sum())
            if den > 0:
                out[k, s] = (hc * xc).sum() / den
    return out


def make_set(samples, plaintexts=None):
    samples = np.asarray(samples, float)
    if plaintexts is None:
        plaintexts = np.zeros((samples.shape[0], 16), np.uint8)
    return TraceSet("power", samples, plaintexts, 0.0, 1.0)


def rho_of(x, h):
    return correlate(make_set(np.asarray(x, float)[:, None]), np.asarray([h])).rho[0, 0]


@pytest.mark.parametrize("x, h, expected", [
    ([1, 2, 3], [1, 2, 3], 1.0),
    ([1, 2, 3], [3, 2, 1], -1.0),
    ([1, 2, 4], [1, 2, 3], 9 / math.sqrt(84)),
])
def test_correlation_examples(x, h, expected):
    assert rho_of(x, h) == pytest.approx(expected, abs=1e-14)
    assert naive_pearson(np.asarray(x)[:, None], [h])[0, 0] == pytest.approx(expected, abs=1e-14)


def test_zero_variance_is_undefined_not_zero():
    x = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    surface = correlate(make_set(x), np.array([[1, 2, 3], [4, 4, 4]]))
    assert surface.rho[0, 0] == pytest.approx(1.0)
    assert np.isnan(surface.rho[0, 1])
    assert np.all(np.isnan(surface.rho[1]))


@pytest.mark.parametrize("offset", [0.0, 50.0, 1e6])
def test_matches_centered_oracle(offset):
    rng = np.random.default_rng(int(offset) + 1)
    x = offset + rng.normal(0, 1, (64, 32))
    h = rng.integers(0, 9, (256, 64))
    got = correlate(make_set(x), h).rho
    np.testing.assert_allclose(got, naive_pearson(x, h), rtol=0, atol=1e-12)


def test_chunked_accumulation_matches_single_batch():
    rng = np.random.default_rng(4)
    x = 50 + rng.normal(0, 0.1, (90, 7))
    h = rng.integers(0, 9, (256, 90)).astype(float)
    acc = CorrelationAccumulator(7)
    for lo, hi in ((0, 1), (1, 40), (40, 90)):
        acc.update(x[lo:hi], h[:, lo:hi])
    np.testing.assert_allclose(acc.finalize(), naive_pearson(x, h), atol=1e-12)
    peaks = np.nanmax(np.abs(acc.finalize()), axis=1)
    np.testing.assert_allclose(acc.peaks(), peaks, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-1e3, 1e3), st.integers(0, 2**32 - 1))
def test_affine_invariance(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (30, 6))
    h = rng.integers(0, 9, (256, 30))
    base = correlate(make_set(x), h)
    pos = correlate(make_set(alpha * x + beta), h)
    neg = correlate(make_set(-alpha * x + beta), h)
    np.testing.assert_allclose(pos.rho, base.rho, atol=1e-9, equal_nan=True)
    np.testing.assert_allclose(neg.rho, -base.rho, atol=1e-9, equal_nan=True)
    assert np.array_equal(rank_guesses(pos).guesses[:5], rank_guesses(base).guesses[:5])
    assert np.array_equal(rank_guesses(neg).guesses[:5], rank_guesses(base).guesses[:5])
    defined = base.rho[~np.isnan(base.rho)]
    assert np.all(np.abs(defined) <= 1 + 1e-12)


def test_measurement_permutation_invariance():
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, (40, 5))
    h = rng.integers(0, 9, (256, 40))
    perm = rng.permutation(40)
    a = correlate(make_set(x), h).rho
    b = correlate(make_set(x[perm]), h[:, perm]).rho
    np.testing.assert_allclose(a, b, atol=1e-12)


def _surface_with_peaks(peaks):
    rho = np.zeros((256, 3))
    rho[:, 1] = peaks
    return CorrelationSurface(rho)


def test_rank_example_global_max():
    peaks = np.linspace(0.0, 0.3, 256)
    peaks[0x25] = 0.61
    ranking = rank_guesses(_surface_with_peaks(peaks))
    assert ranking.recovered == 0x25
    assert ranking.peak_of(0x25) == 0.61
    assert ranking.peak_samples[0] == 1


def test_tie_break_goes_to_lower_byte():
    peaks = np.full(256, 0.1)
    peaks[[0x40, 0x11, 0xF0]] = 0.5
    ranking = rank_guesses(_surface_with_peaks(-peaks))
    assert ranking.guesses[:3].tolist() == [0x11, 0x40, 0xF0]
    assert rank_from_peaks(np.abs(peaks), 0x40) == 2


def test_ranking_is_a_sorted_permutation():
    rng = np.random.default_rng(2)
    ranking = rank_guesses(CorrelationSurface(rng.uniform(-1, 1, (256, 10))))
    assert sorted(ranking.guesses.tolist()) == list(range(256))
    assert np.all(np.diff(ranking.peaks) <= 0)
    for g in (0, 77, 255):
        assert rank_from_peaks(np.abs(ranking.peaks[np.argsort(ranking.guesses)]), g) == ranking.rank_of(g)


def test_undefined_guess_ranks_last():
    rho = np.random.default_rng(1).uniform(-0.2, 0.2, (256, 4))
    rho[9] = np.nan
    ranking = rank_guesses(CorrelationSurface(rho))
    assert ranking.guesses[-1] == 9
    assert ranking.peaks[-1] == -np.inf


def test_all_undefined_is_no_signal():
    with pytest.raises(NoSignalError):
        rank_guesses(CorrelationSurface(np.full((256, 4), np.nan)))
    flat = make_set(np.ones((10, 3)), np.random.default_rng(0).integers(0, 256, (10, 16), dtype=np.uint8))
    with pytest.raises(NoSignalError):
        attack_block(flat)


def test_noise_free_recovery_for_many_keys():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        key = bytes(rng.integers(0, 256, 16, dtype=np.uint8))
        ts = simulate("power", key, 64, seed=int(rng.integers(2**32)), noise_sigma=0.0, sample_count=48)
        assert recovered_key(attack_block(ts)) == key


def test_checkpoints():
    assert checkpoints(20, 8) == [8, 16, 20]
    assert checkpoints(16, 8) == [8, 16]
    assert checkpoints(5, 1) == [2, 3, 4, 5]
    with pytest.raises(ValueError):
        checkpoints(10, 0)


def test_trajectory_noise_free_settles_at_rank_one():
    key = bytes(range(16))
    ts = simulate("power", key, 120, seed=3, noise_sigma=0.0, sample_count=48)
    traj = rank_trajectory(ts, 5, key[5], 10)
    assert [n for n, _ in traj] == list(range(10, 121, 10))
    assert all(1 <= r <= 256 for _, r in traj)
    assert all(r == 1 for n, r in traj if n >= 40)


def test_trajectory_final_rank_matches_full_attack():
    key = bytes(range(16))
    ts = simulate("power", key, 100, seed=6, sample_count=48)
    traj = rank_trajectory(ts, 2, key[2], 7)
    assert traj[-1] == (100, rank_guesses(correlate_position(ts, 2)).rank_of(key[2]))


def test_pure_noise_terminal_rank_is_spread_out():
    key = bytes(16)
    ranks = []
    for seed in range(40):
        ts = simulate("power", key, 40, seed=seed, a=0.0, sample_count=16)
        ranks.append(rank_trajectory(ts, 0, 0, 40)[-1][1])
    assert 60 < np.mean(ranks) < 200
    assert min(ranks) < 64 and max(ranks) > 192
