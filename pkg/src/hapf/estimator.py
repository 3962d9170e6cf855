"""Average/oscillating power split and compensation current reference.

The load power is separated with a trailing one-period moving average, which
removes every integer harmonic of the fundamental exactly in periodic steady
state. The reference compensates the oscillating real power and the whole
imaginary power, and adds the DC-bus loss power on top.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numba
import numpy as np

from .frames import (
    EPS_SING,
    AlphaBeta,
    PhaseTriple,
    PowerPair,
    SingularVoltageError,
    _clarke_inv,
    _pq_inv,
    instantaneous_power,
)

# full-window resum period, in windows
RECOMPUTE_WINDOWS = 10

# ring metadata slots
_IDX, _COUNT, _SUM, _SINCE = range(4)


class PowerSplit(NamedTuple):
    p_avg: float
    p_osc: float
    q_avg: float
    q_osc: float


ReferenceCurrents = PhaseTriple


@numba.njit(cache=True)
def _ma_push(ring, meta, x):
    n = ring.shape[0]
    idx = int(meta[_IDX])
    count = int(meta[_COUNT])
    if count == n:
        meta[_SUM] -= ring[idx]
    else:
        count += 1
    ring[idx] = x
    meta[_SUM] += x
    idx += 1
    if idx == n:
        idx = 0
    meta[_SINCE] += 1.0
    if meta[_SINCE] >= RECOMPUTE_WINDOWS * n:
        # ring fills from slot 0, so the first `count` slots are live
        s = 0.0
        for k in range(count):
            s += ring[k]
        meta[_SUM] = s
        meta[_SINCE] = 0.0
    meta[_IDX] = idx
    meta[_COUNT] = count
    return meta[_SUM] / count


@numba.njit(cache=True)
def _reference(ea, eb, p_osc, q_total, p_ave, eps):
    """Compensator current (drawn from the PCC) in alpha-beta and phase frames.

    Returns zeros when the voltage vector is below ``eps``.
    """
    if ea * ea + eb * eb <= eps:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    ia, ib = _pq_inv(ea, eb, -p_osc + p_ave, -q_total)
    r, y, b = _clarke_inv(ia, ib)
    return ia, ib, r, y, b


class MovingAverage:
    """Trailing mean over a fixed sample window.

    Before the window fills, the mean of the samples seen so far is reported.
    The running sum is rebuilt from the ring every ``RECOMPUTE_WINDOWS``
    windows so it cannot drift.
    """

    def __init__(self, window_length: int):
        if window_length < 1:
            raise ValueError("window_length must be >= 1")
        self.ring = np.zeros(window_length)
        self.meta = np.zeros(4)

    @classmethod
    def for_period(cls, f1: float, dt: float) -> "MovingAverage":
        return cls(int(round(1.0 / (f1 * dt))))

    @property
    def window_length(self) -> int:
        return self.ring.shape[0]

    @property
    def count(self) -> int:
        return int(self.meta[_COUNT])

    @property
    def running_sum(self) -> float:
        return float(self.meta[_SUM])

    def push(self, x: float) -> float:
        return _ma_push(self.ring, self.meta, float(x))

    def window(self) -> np.ndarray:
        """Stored samples, oldest first."""
        n, c, i = self.window_length, self.count, int(self.meta[_IDX])
        if c < n:
            return self.ring[:c].copy()
        return np.concatenate([self.ring[i:], self.ring[:i]])


@dataclass
class PowerSeparator:
    """Pair of moving averages splitting (p, q) into average + oscillating."""

    p_avg: MovingAverage
    q_avg: MovingAverage = field(default=None)

    def __post_init__(self):
        if self.q_avg is None:
            self.q_avg = MovingAverage(self.p_avg.window_length)

    @classmethod
    def for_period(cls, f1: float, dt: float) -> "PowerSeparator":
        return cls(MovingAverage.for_period(f1, dt))

    def push(self, s: PowerPair) -> PowerSplit:
        p, q = float(s[0]), float(s[1])
        pa = self.p_avg.push(p)
        qa = self.q_avg.push(q)
        return PowerSplit(pa, p - pa, qa, q - qa)


def load_power(e: AlphaBeta, i_load: AlphaBeta) -> PowerPair:
    return instantaneous_power(e, i_load)


def separate(stream: Iterable[PowerPair], state: PowerSeparator) -> list[PowerSplit]:
    return [state.push(s) for s in stream]


def compensation_reference_ab(
    e: AlphaBeta, split: PowerSplit, q_total: float, p_ave: float, eps: float = EPS_SING
) -> AlphaBeta:
    """Reference current in the alpha-beta frame (before the inverse Clarke map)."""
    ea, eb = float(e[0]), float(e[1])
    if ea * ea + eb * eb <= eps:
        raise SingularVoltageError(
            f"|e|^2 = {ea * ea + eb * eb:.3e} below singular floor {eps:.3e}"
        )
    ia, ib, *_ = _reference(ea, eb, float(split.p_osc), float(q_total), float(p_ave), eps)
    return AlphaBeta(ia, ib)


def compensation_reference(
    e: AlphaBeta, split: PowerSplit, q_total: float, p_ave: float, eps: float = EPS_SING
) -> ReferenceCurrents:
    """Phase currents the compensator must draw from the PCC.

    Real-power target is ``-p_osc + p_ave`` and imaginary-power target is
    ``-q_total`` (the full imaginary power, average part included).
    """
    return ReferenceCurrents(*_clarke_inv(*compensation_reference_ab(e, split, q_total, p_ave, eps)))
