"""First-round AES-128 target: SubBytes output and Hamming weight.

The attacked intermediate is ``SBOX(p ^ k)`` for one plaintext byte ``p`` and
one subkey byte ``k``. Only the forward S-box is provided.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import numpy.typing as npt

# FIPS-197 forward S-box.
SBOX: npt.NDArray[np.uint8] = np.array([
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
], dtype=np.uint8)
SBOX.setflags(write=False)

HW_TABLE: npt.NDArray[np.uint8] = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)
HW_TABLE.setflags(write=False)

# HW(SBOX(x)) for every x; the hypothesis matrix is a gather from this table.
_HW_SBOX = HW_TABLE[SBOX]

BLOCK_SIZE = 16


def _check_byte(value: int, name: str) -> int:
    value = int(value)
    if not 0 <= value <= 0xFF:
        raise ValueError(f"{name} must be a byte in [0, 255], got {value}")
    return value


def sbox(value: int) -> int:
    """Forward AES S-box lookup."""
    return int(SBOX[_check_byte(value, "input")])


def intermediate(p: int, k: int) -> int:
    """Return ``SBOX(p ^ k)``, the first-round SubBytes output."""
    return int(SBOX[_check_byte(p, "plaintext byte") ^ _check_byte(k, "key byte")])


def hamming_weight(value: int) -> int:
    return int(HW_TABLE[_check_byte(value, "value")])


def build_hypotheses(plaintext_bytes: Sequence[int] | npt.ArrayLike) -> npt.NDArray[np.uint8]:
    """Hamming-weight hypotheses for every subkey guess.

    Args:
        plaintext_bytes: The M plaintext bytes at the attacked position.

    Returns:
        A ``(256, M)`` uint8 array whose entry ``(k, m)`` is
        ``HW(SBOX(plaintext_bytes[m] ^ k))``.

    Raises:
        ValueError: If fewer than two measurements are given or a value is
            not a byte.
    """
    p = np.asarray(plaintext_bytes)
    if p.ndim != 1:
        raise ValueError(f"plaintext bytes must be one-dimensional, got shape {p.shape}")
    if p.shape[0] < 2:
        raise ValueError(f"need at least 2 measurements for correlation, got {p.shape[0]}")
    if p.size and (p.min() < 0 or p.max() > 0xFF):
        raise ValueError("plaintext bytes must lie in [0, 255]")
    p = p.astype(np.uint8)
    guesses = np.arange(256, dtype=np.uint8)[:, None]
    return _HW_SBOX[p[None, :] ^ guesses]


def as_block(data: bytes | Sequence[int] | npt.ArrayLike) -> npt.NDArray[np.uint8]:
    """Validate a 16-byte block (plaintext or key) and return it as uint8."""
    if isinstance(data, (bytes, bytearray)):
        arr = np.frombuffer(bytes(data), dtype=np.uint8)
    else:
        arr = np.asarray(data)
        if arr.size and (arr.min() < 0 or arr.max() > 0xFF):
            raise ValueError("block values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    if arr.shape != (BLOCK_SIZE,):
        raise ValueError(f"a block is exactly {BLOCK_SIZE} bytes, got shape {arr.shape}")
    return arr.copy()


def parse_key_hex(text: str) -> npt.NDArray[np.uint8]:
    """Parse a 128-bit key written as 32 hex characters (spaces allowed)."""
    cleaned = "".join(text.split())
    if cleaned.lower().startswith("0x"):
        cleaned = cleaned[2:]
    if len(cleaned) != 2 * BLOCK_SIZE:
        raise ValueError(f"key must be {2 * BLOCK_SIZE} hex characters, got {len(cleaned)}")
    try:
        raw = bytes.fromhex(cleaned)
    except ValueError as exc:
        raise ValueError(f"malformed key hex {text!r}") from exc
    return as_block(raw)
