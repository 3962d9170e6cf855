"""Proportional DC-bus voltage controller.

The capacitor voltage is smoothed by a first-order lag, compared with a
constant reference, and the error times a gain is the loss power the active
filter draws from the grid. Positive output charges the capacitor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba


@numba.njit(cache=True)
def _lag(v_filt, v_meas, dt, tau):
    # backward-Euler first-order lag
    return v_filt + dt / (tau + dt) * (v_meas - v_filt)


@dataclass
class DcBusController:
    v_ref: float = 750.0
    gain: float = 50.0  # W/V
    v_meas_filter_tau: float = 5e-3
    v_filtered: float | None = None

    def __post_init__(self):
        if self.gain <= 0 or self.v_ref <= 0:
            raise ValueError("gain and v_ref must be positive")
        if self.v_meas_filter_tau < 0:
            raise ValueError("v_meas_filter_tau must be non-negative")

    def output(self) -> float:
        v = self.v_ref if self.v_filtered is None else self.v_filtered
        return self.gain * (self.v_ref - v)

    def regulate(self, v_dc_measured: float, dt: float) -> float:
        """Advance the measurement filter by ``dt`` and return p_ave in watts.

        The filter starts at the first measurement it sees.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        if self.v_filtered is None:
            self.v_filtered = float(v_dc_measured)
        else:
            self.v_filtered = _lag(self.v_filtered, float(v_dc_measured), dt, self.v_meas_filter_tau)
        return self.output()


def regulate(ctrl: DcBusController, v_dc_measured: float, dt: float) -> float:
    return ctrl.regulate(v_dc_measured, dt)
