"""Comparison metrics: correlation ratio, minimum traces to disclosure (MTD)
and IQR outlier confidence, plus the per-channel report grid."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aes_target import BLOCK_SIZE, as_block
from .cpa_engine import (
    CorrelationSurface,
    KeyRanking,
    rank_guesses,
    trajectory_with_surface,
    correlate_position,
)
from .trace_store import TraceSet

DEFAULT_TOP_N = 5
DEFAULT_STRIDE = 8
FENCE_FACTOR = 1.5


class ComparisonError(ValueError):
    """The two channels' trace sets cannot be compared."""


def quartiles(values: Sequence[float]) -> tuple[float, float]:
    """Q1 and Q3 by linear interpolation between order statistics.

    The p-quantile of n sorted values sits at position ``p * (n - 1)``.
    """
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("quartiles of an empty sequence")

    def at(p: float) -> float:
        pos = p * (len(v) - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, len(v) - 1)
        return v[lo] + (pos - lo) * (v[hi] - v[lo])

    return at(0.25), at(0.75)


def iqr_fences(peaks: Sequence[tuple[int, float]], top_n: int = DEFAULT_TOP_N) -> tuple[list[tuple[int, float]], float, float]:
    """The ``top_n`` highest defined peaks and their (lower, upper) Tukey fences.

    Raises:
        ValueError: If ``top_n < 4`` or fewer than ``top_n`` defined peaks.
    """
    if top_n < 4:
        raise ValueError(f"top_n must be >= 4 for quartiles, got {top_n}")
    defined = [(int(g), float(p)) for g, p in peaks if math.isfinite(p)]
    if len(defined) < top_n:
        raise ValueError(f"need at least {top_n} defined peaks, got {len(defined)}")
    defined.sort(key=lambda gp: (-gp[1], gp[0]))
    top = defined[:top_n]
    q1, q3 = quartiles([p for _, p in top])
    iqr = q3 - q1
    return top, q1 - FENCE_FACTOR * iqr, q3 + FENCE_FACTOR * iqr


def iqr_outliers(peaks: Sequence[tuple[int, float]], top_n: int = DEFAULT_TOP_N) -> list[tuple[int, float]]:
    """Tukey-fence outliers (either side) among the ``top_n`` highest peaks.

    An empty result means the best guess cannot be told apart from the rest.
    """
    top, lower, upper = iqr_fences(peaks, top_n)
    return [(g, p) for g, p in top if p > upper or p < lower]


def correlation_ratio(surface: CorrelationSurface | KeyRanking, true_byte: int) -> float:
    """Peak |rho| of the true guess over the best peak among the 255 wrong ones.

    Returns ``inf`` (with a warning) when every wrong guess has zero peak.
    """
    ranking = surface if isinstance(surface, KeyRanking) else rank_guesses(surface)
    correct = ranking.peak_of(true_byte)
    if not math.isfinite(correct):
        raise ValueError(f"correlation for the true byte 0x{true_byte:02X} is undefined")
    wrong = ranking.peaks[ranking.guesses != true_byte]
    best_wrong = float(wrong.max())
    if best_wrong <= 0:
        warnings.warn("best wrong-guess peak is zero; correlation ratio is infinite", RuntimeWarning, stacklevel=2)
        return math.inf
    return correct / best_wrong


def mtd_from_trajectory(trajectory: Sequence[tuple[int, int]]) -> int | None:
    """First trace count from which the true byte stays rank 1 to the end."""
    mtd = None
    for n, rank in trajectory:
        if rank == 1:
            if mtd is None:
                mtd = n
        else:
            mtd = None
    return mtd


def mtd(traces: TraceSet, position: int, true_byte: int, stride: int = DEFAULT_STRIDE) -> int | None:
    traj, _ = trajectory_with_surface(traces, position, true_byte, stride)
    return mtd_from_trajectory(traj)


@dataclass
class SubkeyReport:
    channel: str
    position: int
    recovered: int
    max_rho: float
    true_byte: int | None = None
    max_rho_correct: float = math.nan
    max_rho_best_wrong: float = math.nan
    cr: float = math.nan
    mtd: int | None = None
    iqr_outliers: list[tuple[int, float]] = field(default_factory=list)
    iqr_upper_fence: float = math.nan
    trajectory: list[tuple[int, int]] = field(default_factory=list, repr=False)
    # signed rho at each guess's peak sample, for the guess-vs-correlation plot
    guess_peaks: list[tuple[int, float, int]] = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.true_byte is not None and self.recovered == self.true_byte

    @property
    def candidates(self) -> list[tuple[int, float]]:
        """Outliers above the upper fence: the plausible subkey values.

        A point below the lower fence is a weak wrong guess, not a candidate.
        """
        return [(g, p) for g, p in self.iqr_outliers if p > self.iqr_upper_fence]

    @property
    def outlier_count(self) -> int:
        return len(self.candidates)

    @property
    def iqr_label(self) -> str:
        """Candidate count, or 'F' when no guess stands out."""
        return str(self.outlier_count) if self.outlier_count else "F"


def subkey_report(
    traces: TraceSet,
    position: int,
    true_byte: int | None = None,
    stride: int = DEFAULT_STRIDE,
    top_n: int = DEFAULT_TOP_N,
    with_mtd: bool = True,
) -> SubkeyReport:
    """Metrics for one byte position; MTD needs ``true_byte`` and ``with_mtd``."""
    if true_byte is None or not with_mtd:
        trajectory = []
        surface = correlate_position(traces, position)
    else:
        trajectory, surface = trajectory_with_surface(traces, position, true_byte, stride)
    ranking = rank_guesses(surface)
    peak, idx = surface.peaks()
    signed = [
        (g, float(surface.rho[g, idx[g]]) if idx[g] >= 0 else math.nan, int(idx[g]))
        for g in range(len(peak))
    ]
    top, lower, upper = iqr_fences(list(zip(ranking.guesses.tolist(), ranking.peaks.tolist())), top_n)
    report = SubkeyReport(
        channel=traces.channel,
        position=position,
        recovered=ranking.recovered,
        max_rho=float(ranking.peaks[0]),
        iqr_outliers=[(g, p) for g, p in top if p > upper or p < lower],
        iqr_upper_fence=upper,
        guess_peaks=signed,
    )
    if true_byte is not None:
        wrong = ranking.peaks[ranking.guesses != true_byte]
        report.true_byte = int(true_byte)
        report.max_rho_correct = ranking.peak_of(true_byte)
        report.max_rho_best_wrong = float(wrong.max())
        report.cr = correlation_ratio(ranking, true_byte)
        if with_mtd:
            report.mtd = mtd_from_trajectory(trajectory)
            report.trajectory = trajectory
    return report


def channel_report(
    traces: TraceSet,
    true_key=None,
    stride: int = DEFAULT_STRIDE,
    top_n: int = DEFAULT_TOP_N,
    with_mtd: bool = True,
) -> list[SubkeyReport]:
    """Reports for all 16 positions of one channel."""
    key = None if true_key is None else as_block(true_key)
    return [
        subkey_report(traces, j, None if key is None else int(key[j]), stride, top_n, with_mtd)
        for j in range(BLOCK_SIZE)
    ]


@dataclass
class ComparisonReport:
    power: list[SubkeyReport]
    impedance: list[SubkeyReport]

    def rows(self) -> list[SubkeyReport]:
        return self.power + self.impedance

    def success_count(self, channel: str) -> int:
        return sum(r.success for r in getattr(self, channel))

    def single_outlier_count(self, channel: str) -> int:
        return sum(r.outlier_count == 1 for r in getattr(self, channel))

    def failure_count(self, channel: str) -> int:
        """Positions labelled 'F' (no IQR outlier)."""
        return sum(r.outlier_count == 0 for r in getattr(self, channel))


def build_report(
    traces_power: TraceSet,
    traces_imp: TraceSet,
    true_key,
    stride: int = DEFAULT_STRIDE,
    top_n: int = DEFAULT_TOP_N,
    with_mtd: bool = True,
) -> ComparisonReport:
    """Both channels, all 16 positions: recovered byte, peaks, CR, MTD, IQR."""
    if traces_power.channel != "power" or traces_imp.channel != "impedance":
        raise ComparisonError(
            f"expected (power, impedance) trace sets, got ({traces_power.channel}, {traces_imp.channel})")
    if traces_power.n_traces < 2 or traces_power.n_traces != traces_imp.n_traces:
        raise ComparisonError(
            f"trace counts must match and be >= 2, got {traces_power.n_traces} and {traces_imp.n_traces}")
    if not np.array_equal(traces_power.plaintexts, traces_imp.plaintexts):
        raise ComparisonError("the two trace sets were acquired with different plaintext sequences")
    return ComparisonReport(
        power=channel_report(traces_power, true_key, stride, top_n, with_mtd),
        impedance=channel_report(traces_imp, true_key, stride, top_n, with_mtd),
    )
