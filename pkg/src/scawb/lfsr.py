"""Five-bit left-shifting LFSRs used as background switching activity.

Bits are numbered 1..5 from the LSB. Each step shifts left by one, drops the
old bit 5 and feeds ``bit4 ^ bit5`` of the old state into bit 1. The feedback
polynomial x^5 + x^4 + 1 factors as (x^2 + x + 1)(x^3 + x + 1), so orbits are
short (lengths 3, 7 and 21) rather than a single maximal cycle.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import numpy.typing as npt

WIDTH = 5
MASK = (1 << WIDTH) - 1
DEFAULT_SEEDS = tuple(range(1, 11))


class InvalidLfsrState(ValueError):
    pass


def _check_state(state: int) -> int:
    state = int(state)
    if not 0 <= state <= MASK:
        raise InvalidLfsrState(f"LFSR state must fit in {WIDTH} bits, got {state}")
    if state == 0:
        raise InvalidLfsrState("the all-zero LFSR state is absorbing and not allowed")
    return state


def lfsr_step(state: int) -> int:
    state = _check_state(state)
    feedback = ((state >> 3) ^ (state >> 4)) & 1
    return ((state << 1) & MASK) | feedback


def orbit(seed: int) -> list[int]:
    """States visited from ``seed`` until it recurs (seed first)."""
    states = [_check_state(seed)]
    nxt = lfsr_step(seed)
    while nxt != seed:
        states.append(nxt)
        nxt = lfsr_step(nxt)
    return states


def orbit_period(seed: int) -> int:
    return len(orbit(seed))


class LfsrBank:
    """Ten (by default) LFSRs clocked in lockstep.

    The joint sequence is periodic with period equal to the lcm of the orbit
    lengths of the seeds, so the per-step activity is tabulated once.
    """

    def __init__(self, seeds: Sequence[int] = DEFAULT_SEEDS):
        self.seeds = tuple(_check_state(s) for s in seeds)
        if not self.seeds:
            raise InvalidLfsrState("an LFSR bank needs at least one register")
        periods = [orbit_period(s) for s in self.seeds]
        self.period = int(np.lcm.reduce(periods))
        states = np.empty((self.period + 1, len(self.seeds)), dtype=np.uint8)
        states[0] = self.seeds
        for t in range(self.period):
            states[t + 1] = [lfsr_step(int(v)) for v in states[t]]
        self._states = states

    def states(self, step: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self._states[step % self.period])

    def hamming_weight_table(self) -> npt.NDArray[np.float64]:
        """Sum of set bits over all registers, one entry per phase."""
        hw = np.unpackbits(self._states[: self.period, :, None], axis=2).sum(axis=(1, 2))
        return hw.astype(np.float64)

    def toggle_table(self) -> npt.NDArray[np.float64]:
        """Total Hamming distance across one step, one entry per phase."""
        diff = self._states[: self.period] ^ self._states[1 : self.period + 1]
        return np.unpackbits(diff[:, :, None], axis=2).sum(axis=(1, 2)).astype(np.float64)

    def activity(self, phases: npt.ArrayLike, n_samples: int, kind: str) -> npt.NDArray[np.float64]:
        """Activity seen at each sample when sample 0 sits at ``phases[m]``.

        The bank advances one step per sample index. ``kind`` is ``"toggle"``
        (switching, power channel) or ``"weight"`` (held state, impedance).
        """
        if kind == "toggle":
            table = self.toggle_table()
        elif kind == "weight":
            table = self.hamming_weight_table()
        else:
            raise ValueError(f"unknown activity kind {kind!r}")
        phases = np.asarray(phases, dtype=np.int64)
        idx = (phases[:, None] + np.arange(n_samples, dtype=np.int64)[None, :]) % self.period
        return table[idx]
