import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scawb.cpa_engine import CorrelationSurface
from scawb.leakage_sim import default_config, generate_plaintexts, simulate, synth_traces
from scawb.metrics import (
    ComparisonError,
    SubkeyReport,
    build_report,
    channel_report,
    correlation_ratio,
    iqr_fences,
    iqr_outliers,
    mtd,
    mtd_from_trajectory,
    quartiles,
)

KEY = bytes.fromhex("250A4738B05215C5F43E903D64DE167F")


def surface_from_peaks(peaks):
    rho = np.zeros((256, 2))
    rho[:, 0] = peaks
    return CorrelationSurface(rho)


def test_cr_example():
    peaks = np.full(256, 0.1)
    peaks[0x25] = 0.61
    peaks[0x80] = -0.30
    assert correlation_ratio(surface_from_peaks(peaks), 0x25) == pytest.approx(0.61 / 0.30)
    assert correlation_ratio(surface_from_peaks(peaks), 0x25) == pytest.approx(2.0333, abs=1e-4)


def test_cr_below_one_at_rank_two():
    peaks = np.full(256, 0.1)
    peaks[3] = 0.5
    peaks[4] = 0.4
    assert correlation_ratio(surface_from_peaks(peaks), 4) < 1


@given(st.floats(0.01, 100))
def test_cr_scale_invariant(alpha):
    peaks = np.random.default_rng(5).uniform(-0.5, 0.5, 256)
    s = surface_from_peaks(peaks)
    assert correlation_ratio(s.scaled(alpha), 17) == pytest.approx(correlation_ratio(s, 17), rel=1e-12)


def test_cr_infinite_when_wrong_guesses_flat():
    peaks = np.zeros(256)
    peaks[9] = 0.4
    with pytest.warns(RuntimeWarning):
        assert correlation_ratio(surface_from_peaks(peaks), 9) == math.inf


def test_mtd_examples():
    ns = [25, 50, 75, 100, 125]
    assert mtd_from_trajectory(list(zip(ns, [17, 4, 1, 1, 1]))) == 75
    assert mtd_from_trajectory(list(zip(ns, [3, 1, 2, 1, 1]))) == 100
    assert mtd_from_trajectory(list(zip(ns, [1, 1, 1, 1, 2]))) is None
    assert mtd_from_trajectory([]) is None


def test_iqr_example():
    peaks = list(enumerate([0.10, 0.11, 0.12, 0.13, 0.61]))
    top, lower, upper = iqr_fences(peaks)
    assert upper == pytest.approx(0.16)
    assert lower == pytest.approx(0.08)
    assert iqr_outliers(peaks) == [(4, 0.61)]


def test_iqr_equal_peaks_has_no_outlier():
    assert iqr_outliers([(g, 0.2) for g in range(5)]) == []
    report = SubkeyReport("power", 0, 0, 0.2)
    assert report.iqr_label == "F"


def test_iqr_uses_only_the_top_peaks():
    peaks = [(g, 0.1 + 0.001 * g) for g in range(200)] + [(250, 0.9)]
    out = iqr_outliers(peaks)
    assert out == [(250, 0.9)]


def test_iqr_errors():
    with pytest.raises(ValueError):
        iqr_outliers([(0, 0.1), (1, 0.2), (2, 0.3), (3, 0.4)])
    with pytest.raises(ValueError):
        iqr_outliers([(g, 0.1 * g) for g in range(8)], top_n=3)
    with pytest.raises(ValueError):
        iqr_outliers([(0, 0.5)] + [(g, -math.inf) for g in range(1, 8)])


@given(st.lists(st.floats(0, 1), min_size=5, max_size=40), st.integers(4, 6))
def test_iqr_outliers_subset_and_strictly_outside(values, top_n):
    if len(values) < top_n:
        return
    peaks = list(enumerate(values))
    top, lower, upper = iqr_fences(peaks, top_n)
    out = iqr_outliers(peaks, top_n)
    assert set(out) <= set(peaks)
    assert all(p > upper or p < lower for _, p in out)
    assert all(lower <= p <= upper for gp in top if gp not in out for p in [gp[1]])


def brute_quartile(values, p):
    v = sorted(values)
    pos = p * (len(v) - 1)
    lo = int(pos)
    frac = pos - lo
    if frac == 0:
        return v[lo]
    return v[lo] * (1 - frac) + v[lo + 1] * frac


@pytest.mark.parametrize("n", range(4, 9))
def test_quartiles_match_interpolation_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(200):
        vals = rng.uniform(0, 1, n).round(int(rng.integers(1, 6))).tolist()
        q1, q3 = quartiles(vals)
        assert q1 == pytest.approx(brute_quartile(vals, 0.25), abs=1e-15)
        assert q3 == pytest.approx(brute_quartile(vals, 0.75), abs=1e-15)
        assert q1 == pytest.approx(np.percentile(vals, 25), abs=1e-15)
        assert q3 == pytest.approx(np.percentile(vals, 75), abs=1e-15)
    for perm in itertools.permutations(range(n) if n <= 6 else range(6)):
        assert quartiles(perm) == quartiles(sorted(perm))


def test_cr_above_one_iff_success():
    for seed in range(3):
        ts = simulate("power", KEY, 60, seed=seed, sample_count=160)
        report = build_report(ts, simulate("impedance", KEY, 60, seed=seed, sample_count=400), KEY, with_mtd=False)
        for r in report.rows():
            assert (r.cr > 1) == r.success


def test_mtd_grows_with_noise():
    medians = []
    for sigma in (0.2, 0.6, 1.2):
        values = []
        for seed in range(20):
            cfg = default_config("power", sample_count=48, repetitions=1, noise_sigma=sigma, a=0.1, rng_seed=seed)
            ts = synth_traces(cfg, generate_plaintexts(200, seed), KEY)
            m = mtd(ts, 0, KEY[0], stride=4)
            values.append(math.inf if m is None else m)
        medians.append(np.median(values))
    assert medians[0] <= medians[1] <= medians[2]
    assert medians[0] < medians[2]


def _small_pair(seed, m=40):
    p = simulate("power", KEY, m, seed=seed, sample_count=160)
    z = simulate("impedance", KEY, m, seed=seed, sample_count=400)
    return p, z


def test_report_is_deterministic_and_complete():
    p, z = _small_pair(1)
    a = build_report(p, z, KEY, stride=8)
    b = build_report(p, z, KEY, stride=8)
    assert [vars(r) for r in a.rows()] == [vars(r) for r in b.rows()]
    assert len(a.power) == len(a.impedance) == 16
    for r in a.rows():
        assert r.max_rho_correct / r.max_rho_best_wrong == pytest.approx(r.cr)
        assert r.success == (r.recovered == r.true_byte)
        assert len(r.guess_peaks) == 256
        if r.mtd is not None:
            assert r.trajectory[-1][1] == 1


def test_report_without_key():
    p, _ = _small_pair(2)
    reports = channel_report(p, None)
    assert all(r.true_byte is None and math.isnan(r.cr) and r.mtd is None for r in reports)
    assert not any(r.success for r in reports)


def test_comparison_errors():
    p, z = _small_pair(3)
    with pytest.raises(ComparisonError):
        build_report(z, p, KEY)
    other = simulate("impedance", KEY, 40, seed=4, sample_count=400)
    with pytest.raises(ComparisonError):
        build_report(p, other, KEY)
    with pytest.raises(ComparisonError):
        build_report(p, z.subset(range(30)), KEY)
