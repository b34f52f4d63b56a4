"""Synthetic power and impedance traces from a Hamming-weight leakage law.

Every leaky sample of byte position ``j`` carries ``a * HW(SBOX(p[j] ^ k[j]))``
on top of a baseline ``b``. Measurement noise is Gaussian; each stored trace is
the average of ``repetitions`` raw captures, so the stored noise has standard
deviation ``noise_sigma / sqrt(repetitions)``.

Background activity (optional) comes from a bank of ten 5-bit LFSRs clocked
once per sample index. The power channel sees their switching (total Hamming
distance per step); the impedance channel sees their held state (total Hamming
weight). The bank's phase at sample 0 is drawn independently per measurement.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .aes_target import BLOCK_SIZE, HW_TABLE, SBOX, as_block
from .lfsr import DEFAULT_SEEDS, LfsrBank
from .trace_store import CHANNELS, TraceSet

POWER_SAMPLES = 2501
POWER_REPETITIONS = 128
POWER_SAMPLE_RATE = 5e9

IMPEDANCE_SAMPLES = 10001
IMPEDANCE_REPETITIONS = 100
IMPEDANCE_F_START = 100e3
IMPEDANCE_F_STOP = 3.2e9

LEAK_WIDTH = 5
# Fixed draw for the scattered impedance leak bins; part of the default model.
_IMPEDANCE_BIN_SEED = 0x1A5

_NOISE_STREAM = 0
_LFSR_STREAM = 1
_PLAINTEXT_STREAM = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LeakageConfig:
    """Simulator parameters. Immutable; derive variants with ``replace``.

    ``leak_positions`` holds one tuple of sample indices per byte position.
    ``a``, ``b`` and ``lfsr_coupling`` are in volts (power) or ohms
    (impedance). The ``resonance_*`` fields add a Lorentzian bump to the
    impedance baseline and are ignored for the power channel.
    """

    channel: str
    a: float
    b: float
    noise_sigma: float
    repetitions: int
    sample_count: int
    axis_start: float
    axis_step: float
    leak_positions: tuple[tuple[int, ...], ...]
    lfsr_enabled: bool = False
    lfsr_seeds: tuple[int, ...] = DEFAULT_SEEDS
    lfsr_coupling: float = 0.0
    rng_seed: int = 0
    resonance_amplitude: float = 0.0
    resonance_center: float = 1.6e9
    resonance_width: float = 1e8

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise ConfigError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if self.sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for name in ("a", "b", "noise_sigma", "lfsr_coupling", "axis_start", "axis_step",
                     "resonance_amplitude", "resonance_center", "resonance_width"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if self.resonance_amplitude and not self.resonance_width > 0:
            raise ConfigError("resonance_width must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")
        positions = tuple(tuple(int(i) for i in group) for group in self.leak_positions)
        for group in positions:
            for i in group:
                if not 0 <= i < self.sample_count:
                    raise ConfigError(f"leak position {i} outside [0, {self.sample_count})")
        object.__setattr__(self, "leak_positions", positions)
        seeds = tuple(int(s) for s in self.lfsr_seeds)
        if self.lfsr_enabled:
            if len(seeds) == 0:
                raise ConfigError("LFSR noise enabled but no seeds given")
            if any(not 0 < s < 32 for s in seeds):
                raise ConfigError(f"LFSR seeds must be nonzero 5-bit values, got {seeds}")
        object.__setattr__(self, "lfsr_seeds", seeds)

    def replace(self, **changes) -> LeakageConfig:
        """Copy with ``changes``; leak positions follow a new sample count
        unless given explicitly."""
        if "sample_count" in changes and "leak_positions" not in changes:
            changes["leak_positions"] = default_leak_positions(
                changes.get("channel", self.channel), changes["sample_count"])
        return dataclasses.replace(self, **changes)

    def axis(self) -> npt.NDArray[np.float64]:
        return self.axis_start + self.axis_step * np.arange(self.sample_count, dtype=np.float64)

    def averaged_noise_std(self) -> float:
        return self.noise_sigma / math.sqrt(self.repetitions)


def default_leak_positions(channel: str, sample_count: int) -> tuple[tuple[int, ...], ...]:
    """Default leaky samples: one contiguous window per byte for power,
    scattered bins for impedance."""
    if sample_count < 1:
        raise ConfigError(f"sample_count must be >= 1, got {sample_count}")
    if channel == "power":
        spacing = sample_count / BLOCK_SIZE
        width = max(1, min(LEAK_WIDTH, int(spacing)))
        groups = []
        for j in range(BLOCK_SIZE):
            start = int(j * spacing + (spacing - width) / 2)
            groups.append(tuple(min(start + w, sample_count - 1) for w in range(width)))
        return tuple(groups)
    if channel == "impedance":
        n = BLOCK_SIZE * LEAK_WIDTH
        rng = np.random.default_rng(_IMPEDANCE_BIN_SEED)
        bins = rng.permutation(sample_count)
        picks = [int(bins[i % sample_count]) for i in range(n)]
        return tuple(tuple(sorted(picks[j * LEAK_WIDTH:(j + 1) * LEAK_WIDTH])) for j in range(BLOCK_SIZE))
    raise ConfigError(f"channel must be one of {CHANNELS}, got {channel!r}")


# Calibrated defaults: per-sample correlation of the true key near 0.35 for
# power and 0.65 for impedance with uniform plaintexts; LFSR activity buries
# the power leak and barely touches the impedance one.
_DEFAULTS = {
    "power": dict(a=0.01, b=3.3, noise_sigma=0.43, lfsr_coupling=0.06),
    "impedance": dict(a=0.05, b=50.0, noise_sigma=0.83, lfsr_coupling=0.002),
}


def default_config(channel: str, **overrides) -> LeakageConfig:
    if channel == "power":
        base = dict(
            channel="power",
            repetitions=POWER_REPETITIONS,
            sample_count=POWER_SAMPLES,
            axis_start=0.0,
            axis_step=1.0 / POWER_SAMPLE_RATE,
            **_DEFAULTS["power"],
        )
    elif channel == "impedance":
        base = dict(
            channel="impedance",
            repetitions=IMPEDANCE_REPETITIONS,
            sample_count=IMPEDANCE_SAMPLES,
            axis_start=IMPEDANCE_F_START,
            axis_step=(IMPEDANCE_F_STOP - IMPEDANCE_F_START) / (IMPEDANCE_SAMPLES - 1),
            **_DEFAULTS["impedance"],
        )
    else:
        raise ConfigError(f"channel must be one of {CHANNELS}, got {channel!r}")
    base.update(overrides)
    if "leak_positions" not in base:
        base["leak_positions"] = default_leak_positions(channel, base["sample_count"])
    return LeakageConfig(**base)


def generate_plaintexts(count: int, seed: int, position: int | None = None) -> npt.NDArray[np.uint8]:
    """Uniform random plaintext blocks, deterministic in ``seed``.

    With ``position`` set, only that byte varies and the rest are zero
    (single-byte acquisition mode).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _PLAINTEXT_STREAM]))
    blocks = rng.integers(0, 256, size=(count, BLOCK_SIZE), dtype=np.uint8)
    if position is not None:
        if not 0 <= position < BLOCK_SIZE:
            raise ValueError(f"position must be in [0, {BLOCK_SIZE}), got {position}")
        single = np.zeros_like(blocks)
        single[:, position] = blocks[:, position]
        blocks = single
    return blocks


def _substream(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def averaged_noise(config: LeakageConfig, n_traces: int) -> npt.NDArray[np.float64]:
    """Per-measurement noise after averaging ``repetitions`` raw captures.

    The mean of R iid N(0, sigma^2) draws is N(0, sigma^2 / R); it is drawn
    directly. Each measurement has its own substream keyed by its index.
    """
    std = config.averaged_noise_std()
    out = np.empty((n_traces, config.sample_count), dtype=np.float64)
    for m in range(n_traces):
        out[m] = _substream(config.rng_seed, _NOISE_STREAM, m).normal(0.0, std, config.sample_count)
    return out


def _lfsr_phases(config: LeakageConfig, period: int, n_traces: int) -> npt.NDArray[np.int64]:
    return np.array(
        [_substream(config.rng_seed, _LFSR_STREAM, m).integers(0, period) for m in range(n_traces)],
        dtype=np.int64,
    )


def baseline(config: LeakageConfig) -> npt.NDArray[np.float64]:
    base = np.full(config.sample_count, float(config.b))
    if config.channel == "impedance" and config.resonance_amplitude:
        x = (config.axis() - config.resonance_center) / config.resonance_width
        base = base + config.resonance_amplitude / (1.0 + x * x)
    return base


def _synth(config: LeakageConfig, plaintexts, true_key) -> TraceSet:
    pts = np.asarray(plaintexts)
    if pts.ndim != 2 or pts.shape[1] != BLOCK_SIZE:
        raise ValueError(f"plaintexts must have shape (M, {BLOCK_SIZE}), got {pts.shape}")
    if pts.size and (pts.min() < 0 or pts.max() > 0xFF):
        raise ValueError("plaintext values must lie in [0, 255]")
    pts = pts.astype(np.uint8)
    m = pts.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 measurements, got {m}")
    key = as_block(true_key)
    if len(config.leak_positions) != BLOCK_SIZE:
        raise ConfigError(
            f"full-block synthesis needs leak positions for all {BLOCK_SIZE} bytes, "
            f"got {len(config.leak_positions)}")

    samples = averaged_noise(config, m)
    samples += baseline(config)[None, :]
    hw = HW_TABLE[SBOX[pts ^ key[None, :]]].astype(np.float64)
    for j, group in enumerate(config.leak_positions):
        for pos in group:
            samples[:, pos] += config.a * hw[:, j]

    if config.lfsr_enabled and config.lfsr_coupling:
        bank = LfsrBank(config.lfsr_seeds)
        phases = _lfsr_phases(config, bank.period, m)
        kind = "toggle" if config.channel == "power" else "weight"
        samples += config.lfsr_coupling * bank.activity(phases, config.sample_count, kind)

    return TraceSet(
        channel=config.channel,
        samples=samples,
        plaintexts=pts,
        axis_start=config.axis_start,
        axis_step=config.axis_step,
        true_key=key,
        repetitions=config.repetitions,
        provenance=(f"synthetic {config.channel} seed={config.rng_seed} "
                    f"lfsr={'on' if config.lfsr_enabled else 'off'}"),
    )


def synth_power_traces(config: LeakageConfig, plaintexts, true_key) -> TraceSet:
    if config.channel != "power":
        raise ConfigError(f"expected a power config, got channel {config.channel!r}")
    return _synth(config, plaintexts, true_key)


def synth_impedance_traces(config: LeakageConfig, plaintexts, true_key) -> TraceSet:
    if config.channel != "impedance":
        raise ConfigError(f"expected an impedance config, got channel {config.channel!r}")
    return _synth(config, plaintexts, true_key)


def synth_traces(config: LeakageConfig, plaintexts, true_key) -> TraceSet:
    """Dispatch on ``config.channel``."""
    return _synth(config, plaintexts, true_key)


def simulate(channel: str, key, n_traces: int, seed: int, lfsr: bool = False, **overrides) -> TraceSet:
    """Default-calibrated trace set for ``channel`` with fresh plaintexts."""
    config = default_config(channel, rng_seed=seed, lfsr_enabled=lfsr, **overrides)
    return _synth(config, generate_plaintexts(n_traces, seed), key)


def expected_correlation(config: LeakageConfig) -> float:
    """Per-sample correlation of the true hypothesis at a leaky sample,
    for uniform plaintexts (HW variance 2) and no LFSR activity."""
    signal = 2.0 * config.a**2
    noise = config.averaged_noise_std() ** 2
    if signal + noise == 0:
        return 0.0
    return math.sqrt(signal / (signal + noise))

