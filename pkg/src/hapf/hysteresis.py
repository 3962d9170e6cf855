"""Independent per-phase hysteresis band comparators for the VSC legs.

Currents here use the converter-output convention: a HIGH leg raises the
phase current, a LOW leg lowers it.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

import numba


class Leg(IntEnum):
    LOW = 0
    HIGH = 1


class SwitchCommand(NamedTuple):
    r: Leg
    y: Leg
    b: Leg


@dataclass(frozen=True)
class HysteresisBand:
    half_width: float = 0.5  # A

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")


@numba.njit(cache=True)
def _leg(err, half_width, prev):
    if err > half_width:
        return 0
    if err < -half_width:
        return 1
    return prev


def update(band: HysteresisBand, i_actual, i_ref, prev: SwitchCommand) -> SwitchCommand:
    hw = band.half_width
    return SwitchCommand(
        *(Leg(_leg(float(a) - float(r), hw, int(p))) for a, r, p in zip(i_actual, i_ref, prev))
    )
