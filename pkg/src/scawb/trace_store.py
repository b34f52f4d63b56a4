"""Trace sets and their SCTR binary container, plus CSV exports.

SCTR layout (all little-endian)::

    magic "SCTR" | version u16 | channel u8 | flags u8 | M u32 | S u32
    | axis_start f64 | axis_step f64 | repetitions u32
    | samples M*S f64 (row-major) | plaintexts M*16 u8 | [true_key 16 u8]

``flags`` bit 0 marks the presence of the trailing key. The file length is
fully determined by the header; any mismatch is rejected.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import numpy.typing as npt

from .aes_target import BLOCK_SIZE, as_block

MAGIC = b"SCTR"
VERSION = 1
CHANNELS = ("power", "impedance")
FLAG_HAS_KEY = 0x01

_HEADER = struct.Struct("<4sHBBIIddI")
HEADER_SIZE = _HEADER.size  # 36


class TraceFormatError(ValueError):
    """Base class for malformed SCTR files."""


class BadMagicError(TraceFormatError):
    pass


class UnsupportedVersionError(TraceFormatError):
    pass


class TruncatedFileError(TraceFormatError):
    pass


class TrailingDataError(TraceFormatError):
    pass


class BadHeaderError(TraceFormatError):
    pass


class NonFiniteSampleError(TraceFormatError):
    pass


@dataclass(eq=False)
class TraceSet:
    """M measurements of S samples each, with their plaintext blocks.

    ``samples`` is float64 of shape (M, S) and ``plaintexts`` uint8 of shape
    (M, 16). The axis is time in seconds for the power channel and frequency
    in hertz for the impedance channel. ``provenance`` is an in-memory note and
    is not stored in SCTR files.
    """

    channel: str
    samples: npt.NDArray[np.float64]
    plaintexts: npt.NDArray[np.uint8]
    axis_start: float = 0.0
    axis_step: float = 1.0
    true_key: npt.NDArray[np.uint8] | None = None
    repetitions: int = 1
    provenance: str = field(default="")

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (M, S), got shape {samples.shape}")
        m, s = samples.shape
        if m < 1 or s < 1:
            raise ValueError(f"need M >= 1 and S >= 1, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            bad = np.argwhere(~np.isfinite(samples))[0]
            raise ValueError(f"non-finite sample at measurement {bad[0]}, index {bad[1]}")
        plaintexts = np.asarray(self.plaintexts)
        if plaintexts.shape != (m, BLOCK_SIZE):
            raise ValueError(f"plaintexts must have shape ({m}, {BLOCK_SIZE}), got {plaintexts.shape}")
        if plaintexts.size and (plaintexts.min() < 0 or plaintexts.max() > 0xFF):
            raise ValueError("plaintext values must lie in [0, 255]")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        self.samples = samples
        self.plaintexts = plaintexts.astype(np.uint8)
        if self.true_key is not None:
            self.true_key = as_block(self.true_key)
        self.axis_start = float(self.axis_start)
        self.axis_step = float(self.axis_step)
        self.repetitions = int(self.repetitions)

    @property
    def n_traces(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def axis(self) -> npt.NDArray[np.float64]:
        return self.axis_start + self.axis_step * np.arange(self.n_samples, dtype=np.float64)

    def subset(self, indices) -> TraceSet:
        """A new set with the selected measurements (same metadata)."""
        return TraceSet(
            channel=self.channel,
            samples=self.samples[indices],
            plaintexts=self.plaintexts[indices],
            axis_start=self.axis_start,
            axis_step=self.axis_step,
            true_key=self.true_key,
            repetitions=self.repetitions,
            provenance=self.provenance,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        keys_equal = (self.true_key is None and other.true_key is None) or (
            self.true_key is not None and other.true_key is not None
            and np.array_equal(self.true_key, other.true_key)
        )
        return (
            self.channel == other.channel
            and self.samples.shape == other.samples.shape
            # compare bit patterns so -0.0 != 0.0
            and np.array_equal(self.samples.view(np.uint64), other.samples.view(np.uint64))
            and np.array_equal(self.plaintexts, other.plaintexts)
            and _same_f64(self.axis_start, other.axis_start)
            and _same_f64(self.axis_step, other.axis_step)
            and self.repetitions == other.repetitions
            and keys_equal
        )


def _same_f64(a: float, b: float) -> bool:
    return struct.pack("<d", a) == struct.pack("<d", b)


def expected_file_size(m: int, s: int, has_key: bool) -> int:
    return HEADER_SIZE + 8 * m * s + BLOCK_SIZE * m + (BLOCK_SIZE if has_key else 0)


def encode_trace_set(traces: TraceSet) -> bytes:
    if not np.all(np.isfinite(traces.samples)):
        raise NonFiniteSampleError("trace set contains non-finite samples")
    m, s = traces.samples.shape
    if m > 0xFFFFFFFF or s > 0xFFFFFFFF or traces.repetitions > 0xFFFFFFFF:
        raise ValueError("trace set dimensions exceed the u32 header fields")
    flags = FLAG_HAS_KEY if traces.true_key is not None else 0
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, CHANNELS.index(traces.channel), flags, m, s,
            traces.axis_start, traces.axis_step, traces.repetitions,
        ),
        np.ascontiguousarray(traces.samples, dtype="<f8").tobytes(),
        np.ascontiguousarray(traces.plaintexts, dtype=np.uint8).tobytes(),
    ]
    if traces.true_key is not None:
        parts.append(traces.true_key.tobytes())
    return b"".join(parts)


def decode_trace_set(data: bytes, provenance: str = "") -> TraceSet:
    if len(data) < 4:
        raise TruncatedFileError(f"file too short for a header: expected at least {HEADER_SIZE} bytes, got {len(data)}")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {bytes(data[:4])!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(f"truncated header: expected {HEADER_SIZE} bytes, got {len(data)}")
    _, version, channel, flags, m, s, axis_start, axis_step, reps = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported SCTR version {version} (this reader handles {VERSION})")
    if channel >= len(CHANNELS):
        raise BadHeaderError(f"unknown channel code {channel}")
    if flags & ~FLAG_HAS_KEY:
        raise BadHeaderError(f"unknown flag bits 0x{flags:02x}")
    if m < 1 or s < 1:
        raise BadHeaderError(f"header declares an empty trace set (M={m}, S={s})")
    if reps < 1:
        raise BadHeaderError("header declares zero repetitions")
    has_key = bool(flags & FLAG_HAS_KEY)
    expected = expected_file_size(m, s, has_key)
    if len(data) < expected:
        raise TruncatedFileError(f"truncated file: expected {expected} bytes for M={m}, S={s}, got {len(data)}")
    if len(data) > expected:
        raise TrailingDataError(f"file has {len(data) - expected} unexpected trailing bytes (expected {expected})")
    off = HEADER_SIZE
    samples = np.frombuffer(data, dtype="<f8", count=m * s, offset=off).reshape(m, s).astype(np.float64)
    off += 8 * m * s
    if not np.all(np.isfinite(samples)):
        bad = np.argwhere(~np.isfinite(samples))[0]
        raise NonFiniteSampleError(f"non-finite sample at measurement {bad[0]}, index {bad[1]}")
    plaintexts = np.frombuffer(data, dtype=np.uint8, count=m * BLOCK_SIZE, offset=off).reshape(m, BLOCK_SIZE).copy()
    off += m * BLOCK_SIZE
    key = np.frombuffer(data, dtype=np.uint8, count=BLOCK_SIZE, offset=off).copy() if has_key else None
    return TraceSet(
        channel=CHANNELS[channel],
        samples=samples,
        plaintexts=plaintexts,
        axis_start=axis_start,
        axis_step=axis_step,
        true_key=key,
        repetitions=reps,
        provenance=provenance,
    )


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path: Path, payload: bytes | str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        mode = "wb" if isinstance(payload, bytes) else "w"
        kwargs = {} if isinstance(payload, bytes) else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as fh:
            fh.write(payload)
        os.chmod(tmp, 0o666 & ~_current_umask())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_trace_file(traces: TraceSet, path: str | os.PathLike) -> None:
    atomic_write(Path(path), encode_trace_set(traces))


def read_trace_file(path: str | os.PathLike) -> TraceSet:
    data = Path(path).read_bytes()
    return decode_trace_set(data, provenance=f"read from {path}")


def format_float(value: float | None) -> str:
    """17 significant digits: round-trip exact for float64."""
    if value is None:
        return ""
    return f"{float(value):.17g}"


REPORT_COLUMNS = (
    "channel", "position", "recovered", "true_byte", "max_rho", "max_rho_correct",
    "max_rho_best_wrong", "cr", "mtd", "outlier_count", "outliers", "low_outlier_count", "success",
)


def _surface_rows(surface) -> Iterable[list[str]]:
    s = surface.rho.shape[1]
    axis = surface.axis_start + surface.axis_step * np.arange(s, dtype=np.float64)
    yield ["guess"] + [format_float(v) for v in axis]
    for guess in range(surface.rho.shape[0]):
        yield [str(guess)] + [format_float(v) for v in surface.rho[guess]]


def _report_rows(reports) -> Iterable[list[str]]:
    yield list(REPORT_COLUMNS)
    for r in reports:
        known = r.true_byte is not None
        yield [
            r.channel,
            str(r.position),
            f"0x{r.recovered:02X}",
            f"0x{r.true_byte:02X}" if known else "",
            format_float(r.max_rho),
            format_float(r.max_rho_correct) if known else "",
            format_float(r.max_rho_best_wrong) if known else "",
            format_float(r.cr) if known else "",
            str(r.mtd) if (known and r.mtd is not None) else "",
            str(r.outlier_count),
            " ".join(f"0x{g:02X}" for g, _ in r.candidates),
            str(len(r.iqr_outliers) - r.outlier_count),
            ("1" if r.success else "0") if known else "",
        ]


def export_csv(surface_or_report, path: str | os.PathLike) -> None:
    """Write a correlation surface or a list of subkey reports as CSV.

    Surfaces become a header row of axis values followed by one row per guess.
    Reports become one row per (channel, position) with ``REPORT_COLUMNS``.
    """
    from .cpa_engine import CorrelationSurface

    if isinstance(surface_or_report, CorrelationSurface):
        rows = _surface_rows(surface_or_report)
    else:
        reports = list(surface_or_report)
        rows = _report_rows(reports)
    write_csv_rows(rows, path)


def write_csv_rows(rows: Iterable[Iterable[str]], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    atomic_write(Path(path), buf.getvalue())
