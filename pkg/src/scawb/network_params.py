"""One-port reflection coefficient <-> impedance conversion.

A VNA reports S11 against a reference impedance; the supply-side impedance is
``Z = Zref * (1 + S11) / (1 - S11)``. Only its magnitude is used downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

DEFAULT_Z_REF = 50.0
PASSIVITY_TOL = 1e-6
# |1 - s| below this is numerically close to the open-circuit pole.
NEAR_POLE_THRESHOLD = 1e-9


class SingularPointError(ValueError):
    """Raised when a sweep sample sits exactly on a conversion pole."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class FrequencyAxis:
    start: float
    step: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"axis count must be >= 1, got {self.count}")

    def values(self) -> npt.NDArray[np.float64]:
        return self.start + self.step * np.arange(self.count, dtype=np.float64)


def _as_complex(values: npt.ArrayLike, axis: FrequencyAxis, name: str) -> npt.NDArray[np.complex128]:
    arr = np.array(values, dtype=np.complex128).reshape(-1)
    if arr.shape[0] != axis.count:
        raise ValueError(f"{name} has {arr.shape[0]} samples but the axis has {axis.count}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReflectionSweep:
    s11: npt.NDArray[np.complex128]
    axis: FrequencyAxis
    z_ref: float = DEFAULT_Z_REF

    def __post_init__(self) -> None:
        if not self.z_ref > 0:
            raise ValueError(f"z_ref must be positive, got {self.z_ref}")
        object.__setattr__(self, "s11", _as_complex(self.s11, self.axis, "s11"))

    def is_passive(self, tol: float = PASSIVITY_TOL) -> bool:
        return bool(np.all(np.abs(self.s11) <= 1.0 + tol))


@dataclass(frozen=True, eq=False)
class ImpedanceSweep:
    z: npt.NDArray[np.complex128]
    axis: FrequencyAxis

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", _as_complex(self.z, self.axis, "z"))

    def is_passive(self, tol: float = PASSIVITY_TOL) -> bool:
        return bool(np.all(self.z.real >= -tol * np.maximum(1.0, np.abs(self.z))))


def s11_to_impedance(sweep: ReflectionSweep) -> ImpedanceSweep:
    """Convert a reflection sweep to impedance.

    Raises:
        SingularPointError: If any sample is exactly ``1 + 0j`` (open circuit).
    """
    s = sweep.s11
    hits = np.flatnonzero(s == 1.0)
    if hits.size:
        i = int(hits[0])
        raise SingularPointError(f"s11[{i}] = 1 is the open-circuit pole of the conversion", i)
    near = np.flatnonzero(np.abs(1.0 - s) < NEAR_POLE_THRESHOLD)
    if near.size:
        warnings.warn(
            f"{near.size} s11 sample(s) within {NEAR_POLE_THRESHOLD:g} of the pole, first at index {near[0]}",
            RuntimeWarning,
            stacklevel=2,
        )
    z = sweep.z_ref * (1.0 + s) / (1.0 - s)
    return ImpedanceSweep(z, sweep.axis)


def impedance_to_s11(sweep: ImpedanceSweep, z_ref: float = DEFAULT_Z_REF) -> ReflectionSweep:
    if not z_ref > 0:
        raise ValueError(f"z_ref must be positive, got {z_ref}")
    z = sweep.z
    hits = np.flatnonzero(z == -z_ref)
    if hits.size:
        i = int(hits[0])
        raise SingularPointError(f"z[{i}] = -z_ref is a pole of the inverse conversion", i)
    s = (z - z_ref) / (z + z_ref)
    return ReflectionSweep(s, sweep.axis, z_ref)


def magnitude(sweep: ImpedanceSweep) -> npt.NDArray[np.float64]:
    """Pointwise ``|Z|`` in ohms."""
    return np.abs(sweep.z)
