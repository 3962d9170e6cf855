"""Phase (r, y, b) <-> stationary alpha-beta transforms and pq powers.

The scalar kernels (``_clarke``, ``_clarke_inv``, ``_pq``, ``_pq_inv``) are
numba-compiled so the circuit loop can call them directly; the public
functions wrap them in small immutable value types.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numba
import numpy as np

SQRT_2_3 = math.sqrt(2.0 / 3.0)
SQRT3_2 = math.sqrt(3.0) / 2.0

# power-invariant Clarke matrix; rows are orthonormal
H = SQRT_2_3 * np.array([[1.0, -0.5, -0.5], [0.0, SQRT3_2, -SQRT3_2]])
H_INV = H.T.copy()


class SingularVoltageError(ArithmeticError):
    """Raised when |e_alpha_beta|^2 is below the singularity floor."""


class PhaseTriple(NamedTuple):
    r: float
    y: float
    b: float


class AlphaBeta(NamedTuple):
    a: float
    b: float


class PowerPair(NamedTuple):
    p: float
    q: float


def singular_floor(v_peak: float) -> float:
    """Absolute floor on e_a^2 + e_b^2 below which K cannot be inverted."""
    return 1e-6 * v_peak * v_peak


# 220 V rms phase mains
EPS_SING = singular_floor(220.0 * math.sqrt(2.0))


@numba.njit(cache=True)
def _clarke(r, y, b):
    return SQRT_2_3 * (r - 0.5 * y - 0.5 * b), SQRT_2_3 * SQRT3_2 * (y - b)


@numba.njit(cache=True)
def _clarke_inv(a, b):
    k = SQRT_2_3
    return k * a, k * (-0.5 * a + SQRT3_2 * b), k * (-0.5 * a - SQRT3_2 * b)


@numba.njit(cache=True)
def _pq(ea, eb, ia, ib):
    return ea * ia + eb * ib, -eb * ia + ea * ib


@numba.njit(cache=True)
def _pq_inv(ea, eb, p, q):
    # K^-1 = K^T / (ea^2 + eb^2); caller guards the denominator
    d = ea * ea + eb * eb
    return (ea * p - eb * q) / d, (eb * p + ea * q) / d


def clarke_forward(x: PhaseTriple) -> AlphaBeta:
    return AlphaBeta(*_clarke(float(x[0]), float(x[1]), float(x[2])))


def clarke_inverse(x: AlphaBeta) -> PhaseTriple:
    return PhaseTriple(*_clarke_inv(float(x[0]), float(x[1])))


def instantaneous_power(e: AlphaBeta, i: AlphaBeta) -> PowerPair:
    """(p, q) = K (i_a, i_b) with K = [[e_a, e_b], [-e_b, e_a]]."""
    return PowerPair(*_pq(float(e[0]), float(e[1]), float(i[0]), float(i[1])))


def currents_from_power(e: AlphaBeta, s: PowerPair, eps: float = EPS_SING) -> AlphaBeta:
    """Invert :func:`instantaneous_power` for the current.

    ``eps`` is the floor on ``e_a**2 + e_b**2``; the default is sized for
    220 V rms mains, pass :func:`singular_floor` for other ratings.
    """
    ea, eb = float(e[0]), float(e[1])
    if ea * ea + eb * eb <= eps:
        raise SingularVoltageError(
            f"|e|^2 = {ea * ea + eb * eb:.3e} below singular floor {eps:.3e}"
        )
    return AlphaBeta(*_pq_inv(ea, eb, float(s[0]), float(s[1])))
