"""Correlation analysis over all 256 subkey guesses.

Pearson coefficients are accumulated in a single pass from the five running
sums (x, h, xh, x^2, h^2). Before accumulating, every sample column and every
hypothesis row is shifted by its first observation; Pearson's coefficient is
shift invariant and the shift keeps the raw-sum formula from cancelling
catastrophically on large baselines (e.g. 50 ohm impedance traces).

Entries with zero variance on either side are undefined (NaN), never 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .aes_target import BLOCK_SIZE, build_hypotheses
from .trace_store import TraceSet

N_GUESSES = 256


class NoSignalError(ValueError):
    """Every correlation entry is undefined; nothing can be ranked."""


@dataclass(eq=False)
class CorrelationSurface:
    """``rho[k, s]`` for guess k at sample s; NaN marks undefined entries."""

    rho: npt.NDArray[np.float64]
    subkey_position: int = 0
    axis_start: float = 0.0
    axis_step: float = 1.0

    @property
    def defined(self) -> npt.NDArray[np.bool_]:
        return ~np.isnan(self.rho)

    def peaks(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
        """Per-guess peak ``|rho|`` and its sample index (-inf / -1 if undefined)."""
        mag = np.abs(self.rho)
        mag[np.isnan(mag)] = -np.inf
        idx = np.argmax(mag, axis=1)
        peak = mag[np.arange(mag.shape[0]), idx]
        idx = np.where(np.isfinite(peak), idx, -1)
        return peak, idx

    def scaled(self, alpha: float) -> CorrelationSurface:
        return CorrelationSurface(self.rho * alpha, self.subkey_position, self.axis_start, self.axis_step)


@dataclass(eq=False)
class KeyRanking:
    """Guesses ordered by descending peak ``|rho|``; ties go to the lower byte."""

    guesses: npt.NDArray[np.int64]
    peaks: npt.NDArray[np.float64]
    peak_samples: npt.NDArray[np.int64]
    position: int = 0

    @property
    def recovered(self) -> int:
        return int(self.guesses[0])

    def rank_of(self, guess: int) -> int:
        """1-based rank of ``guess``."""
        return int(np.flatnonzero(self.guesses == guess)[0]) + 1

    def peak_of(self, guess: int) -> float:
        return float(self.peaks[self.rank_of(guess) - 1])

    def as_list(self) -> list[tuple[int, float, int]]:
        return [(int(g), float(p), int(s)) for g, p, s in zip(self.guesses, self.peaks, self.peak_samples)]

    def __len__(self) -> int:
        return len(self.guesses)


class CorrelationAccumulator:
    """Running sums for Pearson correlation of S samples against G hypotheses."""

    def __init__(self, n_samples: int, n_guesses: int = N_GUESSES):
        self.n = 0
        self.n_samples = n_samples
        self.n_guesses = n_guesses
        self._x0: npt.NDArray[np.float64] | None = None
        self._h0: npt.NDArray[np.float64] | None = None
        self.sum_x = np.zeros(n_samples)
        self.sum_xx = np.zeros(n_samples)
        self.sum_h = np.zeros(n_guesses)
        self.sum_hh = np.zeros(n_guesses)
        self.sum_hx = np.zeros((n_guesses, n_samples))

    def update(self, x: npt.ArrayLike, h: npt.ArrayLike) -> None:
        """Add measurements: ``x`` is (n, S) traces, ``h`` is (G, n) hypotheses."""
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_samples:
            raise ValueError(f"traces must have shape (n, {self.n_samples}), got {x.shape}")
        if h.shape != (self.n_guesses, x.shape[0]):
            raise ValueError(f"hypotheses must have shape ({self.n_guesses}, {x.shape[0]}), got {h.shape}")
        if x.shape[0] == 0:
            return
        if self._x0 is None:
            self._x0 = x[0].copy()
            self._h0 = h[:, 0].copy()
        xs = x - self._x0
        hs = h - self._h0[:, None]
        self.n += x.shape[0]
        self.sum_x += xs.sum(axis=0)
        self.sum_xx += np.einsum("ij,ij->j", xs, xs)
        self.sum_h += hs.sum(axis=1)
        self.sum_hh += np.einsum("ij,ij->i", hs, hs)
        self.sum_hx += hs @ xs

    def _denominators(self) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
        n = self.n
        dx = n * self.sum_xx - self.sum_x**2
        dh = n * self.sum_hh - self.sum_h**2
        return dx, dh

    def _numerator(self) -> npt.NDArray[np.float64]:
        num = self.n * self.sum_hx
        num -= np.outer(self.sum_h, self.sum_x)
        return num

    def finalize(self) -> npt.NDArray[np.float64]:
        """The (G, S) correlation matrix with NaN where undefined."""
        if self.n < 2:
            raise ValueError(f"need at least 2 measurements, have {self.n}")
        dx, dh = self._denominators()
        num = self._numerator()
        with np.errstate(invalid="ignore", divide="ignore"):
            inv_x = np.where(dx > 0, 1.0 / np.sqrt(np.where(dx > 0, dx, 1.0)), np.nan)
            inv_h = np.where(dh > 0, 1.0 / np.sqrt(np.where(dh > 0, dh, 1.0)), np.nan)
        num *= inv_h[:, None]
        num *= inv_x[None, :]
        return num

    def peaks(self) -> npt.NDArray[np.float64]:
        """Per-guess peak ``|rho|`` without materialising NaNs (-inf if undefined)."""
        if self.n < 2:
            raise ValueError(f"need at least 2 measurements, have {self.n}")
        dx, dh = self._denominators()
        num = self._numerator()
        ok_x = dx > 0
        if not ok_x.any():
            return np.full(self.n_guesses, -np.inf)
        inv_x = np.zeros_like(dx)
        inv_x[ok_x] = 1.0 / np.sqrt(dx[ok_x])
        np.abs(num, out=num)
        num *= inv_x[None, :]
        best = num.max(axis=1)
        out = np.full(self.n_guesses, -np.inf)
        ok_h = dh > 0
        out[ok_h] = best[ok_h] / np.sqrt(dh[ok_h])
        return out


def correlate(traces: TraceSet, hypotheses: npt.ArrayLike, position: int = 0) -> CorrelationSurface:
    """Correlation surface of ``traces`` against a (256, M) hypothesis matrix."""
    h = np.asarray(hypotheses)
    m = traces.n_traces
    if h.ndim != 2 or h.shape[1] != m:
        raise ValueError(f"hypotheses must have {m} columns to match the traces, got shape {h.shape}")
    if m < 2:
        raise ValueError(f"need at least 2 measurements, got {m}")
    acc = CorrelationAccumulator(traces.n_samples, h.shape[0])
    acc.update(traces.samples, h)
    return CorrelationSurface(acc.finalize(), position, traces.axis_start, traces.axis_step)


def _ranking_from_peaks(peaks, peak_samples, position: int) -> KeyRanking:
    if not np.any(np.isfinite(peaks)):
        raise NoSignalError(f"no defined correlation for any guess at position {position}")
    guesses = np.arange(len(peaks))
    order = np.lexsort((guesses, -peaks))
    return KeyRanking(guesses[order], peaks[order], peak_samples[order], position)


def rank_guesses(surface: CorrelationSurface) -> KeyRanking:
    peak, idx = surface.peaks()
    return _ranking_from_peaks(peak, idx, surface.subkey_position)


def rank_from_peaks(peaks: npt.ArrayLike, guess: int) -> int:
    """1-based rank of ``guess`` under the ranking order, from raw peaks."""
    peaks = np.asarray(peaks, dtype=np.float64)
    p = peaks[guess]
    higher = np.count_nonzero(peaks > p)
    tied_lower = np.count_nonzero(peaks[:guess] == p)
    return int(higher + tied_lower + 1)


def correlate_position(traces: TraceSet, position: int) -> CorrelationSurface:
    if not 0 <= position < BLOCK_SIZE:
        raise ValueError(f"position must be in [0, {BLOCK_SIZE}), got {position}")
    return correlate(traces, build_hypotheses(traces.plaintexts[:, position]), position)


def attack_block(traces: TraceSet) -> list[KeyRanking]:
    """Rank all guesses independently for each of the 16 byte positions."""
    if traces.plaintexts.shape[1] != BLOCK_SIZE:
        raise ValueError(f"traces must carry {BLOCK_SIZE}-byte plaintexts")
    return [rank_guesses(correlate_position(traces, j)) for j in range(BLOCK_SIZE)]


def recovered_key(rankings: list[KeyRanking]) -> bytes:
    return bytes(r.recovered for r in rankings)


def checkpoints(n_traces: int, stride: int) -> list[int]:
    """Trace counts ``stride, 2*stride, ...`` (at least 2), ending at ``n_traces``."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if n_traces < 2:
        raise ValueError(f"need at least 2 traces, got {n_traces}")
    points = [n for n in range(stride, n_traces + 1, stride) if n >= 2]
    if not points or points[-1] != n_traces:
        points.append(n_traces)
    return points


def trajectory_with_surface(
    traces: TraceSet, position: int, true_byte: int, stride: int
) -> tuple[list[tuple[int, int]], CorrelationSurface]:
    """Rank trajectory plus the full-set surface, sharing one accumulation."""
    if not 0 <= true_byte <= 0xFF:
        raise ValueError(f"true_byte must be a byte, got {true_byte}")
    h = build_hypotheses(traces.plaintexts[:, position])
    acc = CorrelationAccumulator(traces.n_samples)
    out: list[tuple[int, int]] = []
    done = 0
    for n in checkpoints(traces.n_traces, stride):
        acc.update(traces.samples[done:n], h[:, done:n])
        done = n
        peaks = acc.peaks()
        # a checkpoint with no defined entry at all carries no information
        rank = rank_from_peaks(peaks, true_byte) if np.any(np.isfinite(peaks)) else N_GUESSES
        out.append((n, rank))
    surface = CorrelationSurface(acc.finalize(), position, traces.axis_start, traces.axis_step)
    return out, surface


def rank_trajectory(traces: TraceSet, position: int, true_byte: int, stride: int) -> list[tuple[int, int]]:
    """Rank of ``true_byte`` when correlating over the first n traces, for each checkpoint n."""
    return trajectory_with_surface(traces, position, true_byte, stride)[0]
