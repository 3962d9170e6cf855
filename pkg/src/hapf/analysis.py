"""Integer-cycle DFT spectrum, THD, RMS and the IEEE-519 THD verdict.

A rectangular window over a whole number of fundamental periods makes the
harmonic bins exact for periodic signals, so no leakage window is used.
Magnitudes are peak values; phases are cosine-referenced, i.e. the signal
is ``sum(mag[h] * cos(2*pi*h*f1*t + phase[h]))`` with ``t = 0`` at the first
sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

H_MAX = 50
THD_LIMIT = 0.05

# IEEE-519 current distortion limits, percent of fundamental, by Isc/IL row;
# bands 2-10, 11-16, 17-22, 23-34, 35-50 (odd orders; evens at 25%)
IEEE519_CURRENT_LIMITS = (
    (20.0, (4.0, 2.0, 1.5, 0.6, 0.3)),
    (50.0, (7.0, 3.5, 2.5, 1.0, 0.5)),
    (100.0, (10.0, 4.5, 4.0, 1.5, 0.7)),
    (1000.0, (12.0, 5.5, 5.0, 2.0, 1.0)),
    (float("inf"), (15.0, 7.0, 6.0, 2.5, 1.4)),
)


class WindowMisalignmentError(ValueError):
    """Sample window is not a whole number of fundamental periods."""


class ZeroFundamentalError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class Spectrum:
    f1: float
    magnitudes: np.ndarray  # peak, index = harmonic order
    phases: np.ndarray
    n_cycles: int

    @property
    def h_max(self) -> int:
        return len(self.magnitudes) - 1

    @property
    def thd(self) -> float:
        return thd(self)

    def relative(self) -> np.ndarray:
        """Magnitudes divided by the fundamental."""
        if not self.magnitudes[1] > 0:
            raise ZeroFundamentalError("fundamental magnitude is zero")
        return self.magnitudes / self.magnitudes[1]


def samples_per_cycle(dt: float, f1: float) -> int:
    spc = 1.0 / (f1 * dt)
    n = int(round(spc))
    if n < 1 or abs(spc - n) > 1e-6 * spc:
        raise WindowMisalignmentError(
            f"1/(f1*dt) = {spc:.9g} is not an integer sample count"
        )
    return n


def dft_spectrum(samples, dt: float, f1: float, n_cycles: int, h_max: int = H_MAX) -> Spectrum:
    x = np.asarray(samples, dtype=float)
    if n_cycles < 5:
        raise WindowMisalignmentError("need at least 5 fundamental cycles")
    spc = samples_per_cycle(dt, f1)
    n = x.shape[0]
    if n != spc * n_cycles:
        raise WindowMisalignmentError(
            f"{n} samples do not span {n_cycles} cycles of {spc} samples"
        )
    if 2 * h_max * n_cycles > n:
        raise ValueError(f"h_max={h_max} lies above the Nyquist frequency")
    X = np.fft.rfft(x)[: h_max * n_cycles + 1 : n_cycles]
    mag = np.abs(X) * (2.0 / n)
    mag[0] *= 0.5
    if 2 * h_max * n_cycles == n:
        mag[-1] *= 0.5
    return Spectrum(float(f1), mag, np.angle(X), int(n_cycles))


def thd(spec: Spectrum, h_max: int | None = None) -> float:
    m = spec.magnitudes
    if not m[1] > 0:
        raise ZeroFundamentalError("THD undefined: fundamental magnitude is zero")
    top = spec.h_max if h_max is None else min(h_max, spec.h_max)
    return float(np.sqrt(np.sum(m[2 : top + 1] ** 2)) / m[1])


def rms(samples) -> float:
    x = np.asarray(samples, dtype=float)
    return float(np.sqrt(np.mean(x * x)))


def parseval_check(samples, spec: Spectrum) -> float:
    """|rms^2 - (dc^2 + sum(mag^2)/2)|; zero for band-limited integer-harmonic signals."""
    m = spec.magnitudes
    return float(abs(rms(samples) ** 2 - (m[0] ** 2 + 0.5 * np.sum(m[1:] ** 2))))


def displacement_power_factor(v_spec: Spectrum, i_spec: Spectrum) -> float:
    return float(np.cos(v_spec.phases[1] - i_spec.phases[1]))


def _limit_row(isc_over_il: float | None):
    if isc_over_il is None:
        return IEEE519_CURRENT_LIMITS[0]
    for upper, row in IEEE519_CURRENT_LIMITS:
        if isc_over_il <= upper:
            return upper, row
    return IEEE519_CURRENT_LIMITS[-1]


def harmonic_limit(h: int, isc_over_il: float | None = None) -> float:
    """Per-harmonic current limit in percent of fundamental (reported, not gated)."""
    _, row = _limit_row(isc_over_il)
    band = 0 if h < 11 else 1 if h < 17 else 2 if h < 23 else 3 if h < 35 else 4
    lim = row[band]
    return lim * 0.25 if h % 2 == 0 else lim


@dataclass(frozen=True)
class Verdict:
    passed: bool
    thd: float
    thd_limit: float
    report: str


def ieee519_verdict(spec: Spectrum, thd_limit: float = THD_LIMIT,
                    isc_over_il: float | None = None) -> Verdict:
    """Pass iff THD is strictly below ``thd_limit``.

    The report lists every harmonic with its magnitude relative to the
    fundamental next to the IEEE-519 table limit for ``isc_over_il`` (the
    strictest row when not given); only THD is gated.
    """
    t = thd(spec)
    passed = t < thd_limit
    rel = spec.relative()
    lines = [
        f"thd = {t:.6f} ({'PASS' if passed else 'FAIL'}, limit {thd_limit:.4f}, strict)",
        f"window = {spec.n_cycles} cycles at f1 = {spec.f1:g} Hz, harmonics 2..{spec.h_max}",
        "h  rel_%  limit_%",
    ]
    for h in range(2, spec.h_max + 1):
        lines.append(f"{h} {100 * rel[h]:.4f} {harmonic_limit(h, isc_over_il):.2f}")
    return Verdict(passed, t, thd_limit, "\n".join(lines))
