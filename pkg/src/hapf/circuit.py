"""Fixed-step solver for the hybrid filter plant.

Topology (per phase, star point at the source neutral)::

    e_s --R_s--L_s--+-- PCC --L_L--+ six-pulse diode bridge -- C_L || R_L
                    |              |
                    +-- 5th branch:  R-L-C in series
                    +-- 7th branch:  R-L-C in series
                    +-- HP branch:   C in series with (R || L)
                    +-- L_f (+R_f) -- two-level VSC legs -- C_dc

Every step builds the 8-node conductance matrix (3 PCC nodes, 3 bridge AC
nodes, DC+ and DC-) from companion models and solves it. Storage elements
on the switched part use backward Euler. The three linear passive branches
use the trapezoidal rule so that their tuned impedance is not shifted by
numerical damping. Diodes are two-valued resistors whose on/off pattern is
iterated to consistency inside the step.

All state lives in one flat float64 array (see the ``X_*`` offsets) so the
whole loop runs inside numba.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import IntEnum

import numba
import numpy as np

from .dc_bus import DcBusController, _lag
from .estimator import PowerSeparator, _ma_push, _reference
from .frames import PhaseTriple, _clarke, _pq, singular_floor
from .hysteresis import HysteresisBand, Leg, SwitchCommand, _leg


class SolverError(RuntimeError):
    """The diode conduction pattern did not settle within a step."""


class Mode(IntEnum):
    BASELINE = 0
    PASSIVE_ONLY = 1
    HYBRID = 2

    @classmethod
    def parse(cls, name) -> "Mode":
        if isinstance(name, Mode):
            return name
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValueError(
                f"unknown mode {name!r}; expected baseline, passive_only or hybrid"
            ) from None


@dataclass(frozen=True)
class BranchParams:
    C: float
    L: float
    R: float

    def tuned_frequency(self) -> float:
        return 1.0 / (2.0 * math.pi * math.sqrt(self.L * self.C))


@dataclass(frozen=True)
class CircuitParams:
    V_s: float = 220.0  # phase rms
    f1: float = 50.0
    L_s: float = 0.0016
    R_s: float = 0.01
    L_L: float = 0.023
    C_L: float = 50e-6
    R_L: float = 78.0
    C_dc: float = 4500e-6
    fifth: BranchParams = field(default_factory=lambda: BranchParams(20e-6, 0.0199, 0.629))
    seventh: BranchParams = field(default_factory=lambda: BranchParams(10e-6, 0.0204, 0.902))
    high_pass: BranchParams = field(default_factory=lambda: BranchParams(3.25e-6, 0.025, 260.0))
    L_f: float = 2.5e-3
    R_f: float = 0.0
    R_on: float = 1e-3
    R_off: float = 1e6
    dt: float = 2e-6
    max_diode_iters: int = 20

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, BranchParams):
                if min(v.C, v.L, v.R) <= 0:
                    raise ValueError(f"{f.name} branch values must be positive")
            elif f.name in ("R_s", "R_f", "V_s"):
                if v < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive")
        if self.dt > 5e-6:
            raise ValueError("dt must be <= 5e-6 s")

    @property
    def v_peak(self) -> float:
        return self.V_s * math.sqrt(2.0)

    @property
    def period_steps(self) -> int:
        return int(round(1.0 / (self.f1 * self.dt)))


@dataclass(frozen=True)
class ControllerParams:
    v_ref: float = 750.0
    gain: float = 50.0
    tau: float = 5e-3
    half_width: float = 0.5
    # "source": supply-terminal voltages feed the estimator; "pcc": PCC voltages
    voltage_sense: str = "source"
    v_dc_init: float | None = None  # None: pre-charged to v_ref

    def __post_init__(self):
        DcBusController(self.v_ref, self.gain, self.tau)
        HysteresisBand(self.half_width)
        if self.voltage_sense not in ("source", "pcc"):
            raise ValueError("voltage_sense must be 'source' or 'pcc'")
        if self.v_dc_init is not None and self.v_dc_init < 0:
            raise ValueError("v_dc_init must be non-negative")


# ---- coefficient vector -------------------------------------------------
(C_DT, C_W, C_VPK, C_RS, C_LS, C_LL, C_CL, C_RL, C_CDC,
 C_R5, C_L5, C_C5, C_R7, C_L7, C_C7, C_RHP, C_LHP, C_CHP,
 C_LF, C_RF, C_GON, C_GOFF, C_MAXIT,
 C_VREF, C_GAIN, C_TAU, C_HW, C_SENSE, C_EPS, N_COEF) = range(30)


def coefficients(p: CircuitParams, k: ControllerParams) -> np.ndarray:
    c = np.zeros(N_COEF)
    c[C_DT], c[C_W], c[C_VPK] = p.dt, 2 * math.pi * p.f1, p.v_peak
    c[C_RS], c[C_LS], c[C_LL] = p.R_s, p.L_s, p.L_L
    c[C_CL], c[C_RL], c[C_CDC] = p.C_L, p.R_L, p.C_dc
    c[C_R5], c[C_L5], c[C_C5] = p.fifth.R, p.fifth.L, p.fifth.C
    c[C_R7], c[C_L7], c[C_C7] = p.seventh.R, p.seventh.L, p.seventh.C
    c[C_RHP], c[C_LHP], c[C_CHP] = p.high_pass.R, p.high_pass.L, p.high_pass.C
    c[C_LF], c[C_RF] = p.L_f, p.R_f
    c[C_GON], c[C_GOFF], c[C_MAXIT] = 1.0 / p.R_on, 1.0 / p.R_off, p.max_diode_iters
    c[C_VREF], c[C_GAIN], c[C_TAU], c[C_HW] = k.v_ref, k.gain, k.tau, k.half_width
    c[C_SENSE] = 0.0 if k.voltage_sense == "source" else 1.0
    c[C_EPS] = singular_floor(p.v_peak)
    return c


# ---- state vector -------------------------------------------------------
X_T = 0
X_IS = 1      # source line currents
X_ILL = 4     # rectifier AC-side currents (through L_L)
X_VCL = 7     # rectifier DC capacitor voltage
X_DIO = 8     # diode pattern: upper r,y,b then lower r,y,b
X_I5 = 14
X_VC5 = 17
X_I7 = 20
X_VC7 = 23
X_ILHP = 26   # HP inductor current (the R || L part)
X_VCHP = 29
X_VPCC = 32
X_IF = 35     # active filter current, drawn from the PCC
X_VDC = 38
X_SW = 39     # latched leg states, 1 = HIGH
N_STATE = 42

# ---- per-step record ----------------------------------------------------
CHANNELS = (
    "time_s",
    "e_r_V", "e_y_V", "e_b_V",
    "v_pcc_r_V", "v_pcc_y_V", "v_pcc_b_V",
    "i_s_r_A", "i_s_y_A", "i_s_b_A",
    "i_load_r_A", "i_load_y_A", "i_load_b_A",
    "i_passive_r_A", "i_passive_y_A", "i_passive_b_A",
    "i_filter_r_A", "i_filter_y_A", "i_filter_b_A",
    "i_ref_r_A", "i_ref_y_A", "i_ref_b_A",
    "v_dc_V", "v_CL_V",
    "p_L_W", "q_L_var", "p_avg_W", "p_ave_W",
    "kcl_residual_A",
    "sw_r", "sw_y", "sw_b",
    "diodes_on",
)
CH = {name: i for i, name in enumerate(CHANNELS)}
R_T, R_E, R_VPCC, R_IS, R_ILOAD, R_IPASS, R_IF, R_IREF = 0, 1, 4, 7, 10, 13, 16, 19
R_VDC, R_VCL, R_P, R_Q, R_PAVG, R_PAVE, R_KCL, R_SW, R_NDIO = 22, 23, 24, 25, 26, 27, 28, 29, 32
N_REC = len(CHANNELS)


@numba.njit(cache=True)
def _source(t, vpk, w):
    return (vpk * math.sin(w * t),
            vpk * math.sin(w * t - 2.0 * math.pi / 3.0),
            vpk * math.sin(w * t + 2.0 * math.pi / 3.0))


@numba.njit(cache=True)
def _terminal(s0, s1, s2, vdc):
    l0 = (s0 - 0.5) * vdc
    l1 = (s1 - 0.5) * vdc
    l2 = (s2 - 0.5) * vdc
    cm = (l0 + l1 + l2) / 3.0
    return l0 - cm, l1 - cm, l2 - cm


@numba.njit(cache=True)
def _series_coef(R, L, C, dt, v0, i0, vc0):
    # trapezoidal series R-L-C: i1 = g*v1 + j
    z = L / dt + 0.5 * R + 0.25 * dt / C
    g = 0.5 / z
    j = (0.5 * v0 + i0 * (L / dt - 0.5 * R - 0.25 * dt / C) - vc0) / z
    return g, j


@numba.njit(cache=True)
def _series_advance(C, dt, i0, vc0, i1):
    return vc0 + 0.5 * dt / C * (i0 + i1)


@numba.njit(cache=True)
def _hp_coef(R, L, C, dt, v0, il0, vc0):
    # trapezoidal C in series with (R || L): i1 = g*v1 + j
    a = 0.5 * dt / L
    bb = 0.5 * dt / C
    gp = 1.0 / R + a
    vx0 = v0 - vc0
    i0 = vx0 / R + il0
    d = 1.0 + gp * bb
    return gp / d, (-gp * vc0 - gp * bb * i0 + il0 + a * vx0) / d


@numba.njit(cache=True)
def _hp_current(R, v, il, vc):
    return (v - vc) / R + il


@numba.njit(cache=True)
def _hp_advance(R, L, C, dt, v0, il0, vc0, v1, i1):
    i0 = (v0 - vc0) / R + il0
    vc1 = vc0 + 0.5 * dt / C * (i0 + i1)
    il1 = il0 + 0.5 * dt / L * ((v0 - vc0) + (v1 - vc1))
    return il1, vc1


@numba.njit(cache=True)
def _gauss(A, b):
    """Solve A x = b in place (partial pivoting); returns x in b."""
    n = b.shape[0]
    for k in range(n):
        p = k
        m = abs(A[k, k])
        for r in range(k + 1, n):
            if abs(A[r, k]) > m:
                m = abs(A[r, k])
                p = r
        if p != k:
            for col in range(n):
                tmp = A[k, col]
                A[k, col] = A[p, col]
                A[p, col] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        piv = A[k, k]
        for r in range(k + 1, n):
            f = A[r, k] / piv
            if f != 0.0:
                for col in range(k, n):
                    A[r, col] -= f * A[k, col]
                b[r] -= f * b[k]
    for k in range(n - 1, -1, -1):
        s = b[k]
        for col in range(k + 1, n):
            s -= A[k, col] * b[col]
        b[k] = s / A[k, k]
    return b


@numba.njit(cache=True)
def _stamp(G, i, j, g):
    G[i, i] += g
    G[j, j] += g
    G[i, j] -= g
    G[j, i] -= g


@numba.njit(cache=True)
def _stamp_rectifier(G, rhs, x, c):
    """L_L branches and the DC-side C_L || R_L (diodes excluded)."""
    dt = c[C_DT]
    gl = dt / c[C_LL]
    for k in range(3):
        _stamp(G, k, 3 + k, gl)
        rhs[k] -= x[X_ILL + k]
        rhs[3 + k] += x[X_ILL + k]
    gc = c[C_CL] / dt
    _stamp(G, 6, 7, gc + 1.0 / c[C_RL])
    rhs[6] += gc * x[X_VCL]
    rhs[7] -= gc * x[X_VCL]


@numba.njit(cache=True)
def _solve_diodes(G, rhs, x, c, fixed_pcc, vp, sol):
    """Iterate the diode pattern to consistency; returns iterations or -1."""
    gon = c[C_GON]
    goff = c[C_GOFF]
    pat = np.empty(6)
    for d in range(6):
        pat[d] = x[X_DIO + d]
    A = np.empty((8, 8))
    b = np.empty(8)
    maxit = int(c[C_MAXIT])
    for it in range(maxit):
        A[:, :] = G
        b[:] = rhs
        for k in range(3):
            _stamp(A, 3 + k, 6, gon if pat[k] > 0.5 else goff)
            _stamp(A, 7, 3 + k, gon if pat[3 + k] > 0.5 else goff)
        if fixed_pcc:
            Ar = np.empty((5, 5))
            br = np.empty(5)
            for r in range(5):
                br[r] = b[3 + r]
                for k in range(3):
                    br[r] -= A[3 + r, k] * vp[k]
                for col in range(5):
                    Ar[r, col] = A[3 + r, 3 + col]
            _gauss(Ar, br)
            for k in range(3):
                sol[k] = vp[k]
            for r in range(5):
                sol[3 + r] = br[r]
        else:
            _gauss(A, b)
            for r in range(8):
                sol[r] = b[r]
        changed = False
        for k in range(3):
            up = 1.0 if sol[3 + k] - sol[6] > 0.0 else 0.0
            lo = 1.0 if sol[7] - sol[3 + k] > 0.0 else 0.0
            if up != pat[k] or lo != pat[3 + k]:
                changed = True
            pat[k] = up
            pat[3 + k] = lo
        if not changed:
            for d in range(6):
                x[X_DIO + d] = pat[d]
            return it + 1
    return -1


@numba.njit(cache=True)
def _advance_rectifier(x, c, sol):
    gl = c[C_DT] / c[C_LL]
    for k in range(3):
        x[X_ILL + k] += gl * (sol[k] - sol[3 + k])
    x[X_VCL] = sol[6] - sol[7]


@numba.njit(cache=True)
def _rectifier_fixed(x, c, vp):
    G = np.zeros((8, 8))
    rhs = np.zeros(8)
    _stamp_rectifier(G, rhs, x, c)
    sol = np.empty(8)
    it = _solve_diodes(G, rhs, x, c, True, vp, sol)
    if it < 0:
        return -1
    _advance_rectifier(x, c, sol)
    x[X_T] += c[C_DT]
    return it


@numba.njit(cache=True)
def _step(x, c, mode, ring_p, meta_p, ring_q, meta_q, dc, rec):
    """Advance ``x`` by one step in place and fill ``rec``; returns 0 or -1."""
    dt = c[C_DT]
    t1 = x[X_T] + dt
    e0, e1, e2 = _source(t1, c[C_VPK], c[C_W])
    G = np.zeros((8, 8))
    rhs = np.zeros(8)

    gs = 1.0 / (c[C_RS] + c[C_LS] / dt)
    rhs[0] += gs * (e0 + c[C_LS] / dt * x[X_IS])
    rhs[1] += gs * (e1 + c[C_LS] / dt * x[X_IS + 1])
    rhs[2] += gs * (e2 + c[C_LS] / dt * x[X_IS + 2])
    for k in range(3):
        G[k, k] += gs

    passive = mode >= 1
    hybrid = mode == 2
    if passive:
        for k in range(3):
            v0 = x[X_VPCC + k]
            g, j = _series_coef(c[C_R5], c[C_L5], c[C_C5], dt, v0, x[X_I5 + k], x[X_VC5 + k])
            G[k, k] += g
            rhs[k] -= j
            g, j = _series_coef(c[C_R7], c[C_L7], c[C_C7], dt, v0, x[X_I7 + k], x[X_VC7 + k])
            G[k, k] += g
            rhs[k] -= j
            g, j = _hp_coef(c[C_RHP], c[C_LHP], c[C_CHP], dt, v0, x[X_ILHP + k], x[X_VCHP + k])
            G[k, k] += g
            rhs[k] -= j

    vdc0 = x[X_VDC]
    vt0, vt1, vt2 = _terminal(x[X_SW], x[X_SW + 1], x[X_SW + 2], vdc0)
    gf = 1.0 / (c[C_RF] + c[C_LF] / dt)
    if hybrid:
        G[0, 0] += gf
        G[1, 1] += gf
        G[2, 2] += gf
        rhs[0] -= gf * (-vt0 + c[C_LF] / dt * x[X_IF])
        rhs[1] -= gf * (-vt1 + c[C_LF] / dt * x[X_IF + 1])
        rhs[2] -= gf * (-vt2 + c[C_LF] / dt * x[X_IF + 2])

    _stamp_rectifier(G, rhs, x, c)
    sol = np.empty(8)
    vp = np.zeros(3)
    if _solve_diodes(G, rhs, x, c, False, vp, sol) < 0:
        return -1

    # state update
    vt = (vt0, vt1, vt2)
    ev = (e0, e1, e2)
    kcl = 0.0
    ipass = np.zeros(3)
    gl = dt / c[C_LL]
    for k in range(3):
        v1 = sol[k]
        v0 = x[X_VPCC + k]
        x[X_IS + k] = gs * (ev[k] - v1 + c[C_LS] / dt * x[X_IS + k])
        x[X_ILL + k] += gl * (v1 - sol[3 + k])
        if passive:
            g, j = _series_coef(c[C_R5], c[C_L5], c[C_C5], dt, v0, x[X_I5 + k], x[X_VC5 + k])
            i1 = g * v1 + j
            x[X_VC5 + k] = _series_advance(c[C_C5], dt, x[X_I5 + k], x[X_VC5 + k], i1)
            x[X_I5 + k] = i1
            ipass[k] += i1
            g, j = _series_coef(c[C_R7], c[C_L7], c[C_C7], dt, v0, x[X_I7 + k], x[X_VC7 + k])
            i1 = g * v1 + j
            x[X_VC7 + k] = _series_advance(c[C_C7], dt, x[X_I7 + k], x[X_VC7 + k], i1)
            x[X_I7 + k] = i1
            ipass[k] += i1
            g, j = _hp_coef(c[C_RHP], c[C_LHP], c[C_CHP], dt, v0, x[X_ILHP + k], x[X_VCHP + k])
            i1 = g * v1 + j
            il1, vc1 = _hp_advance(c[C_RHP], c[C_LHP], c[C_CHP], dt, v0,
                                   x[X_ILHP + k], x[X_VCHP + k], v1, i1)
            x[X_ILHP + k] = il1
            x[X_VCHP + k] = vc1
            ipass[k] += i1
        if hybrid:
            x[X_IF + k] = gf * (v1 - vt[k] + c[C_LF] / dt * x[X_IF + k])
        x[X_VPCC + k] = v1
        r = abs(x[X_IS + k] - x[X_ILL + k] - ipass[k] - x[X_IF + k])
        if r > kcl:
            kcl = r
    x[X_VCL] = sol[6] - sol[7]
    if hybrid:
        ich = 0.0
        for k in range(3):
            ich += x[X_SW + k] * x[X_IF + k]
        x[X_VDC] = vdc0 + dt / c[C_CDC] * ich
    x[X_T] = t1

    # control: estimator -> dc bus -> hysteresis
    if c[C_SENSE] == 0.0:
        ea, eb = _clarke(e0, e1, e2)
    else:
        ea, eb = _clarke(sol[0], sol[1], sol[2])
    il0 = x[X_ILL] + ipass[0]
    il1_ = x[X_ILL + 1] + ipass[1]
    il2 = x[X_ILL + 2] + ipass[2]
    ia, ib = _clarke(il0, il1_, il2)
    p, q = _pq(ea, eb, ia, ib)
    p_avg = _ma_push(ring_p, meta_p, p)
    _ma_push(ring_q, meta_q, q)
    if dc[1] == 0.0:
        dc[0] = x[X_VDC]
        dc[1] = 1.0
    else:
        dc[0] = _lag(dc[0], x[X_VDC], dt, c[C_TAU])
    p_ave = c[C_GAIN] * (c[C_VREF] - dc[0])
    _, _, r0, r1, r2 = _reference(ea, eb, p - p_avg, q, p_ave, c[C_EPS])
    ref = (r0, r1, r2)
    if hybrid:
        for k in range(3):
            x[X_SW + k] = _leg(ref[k] - x[X_IF + k], c[C_HW], int(x[X_SW + k]))

    rec[R_T] = t1
    for k in range(3):
        rec[R_E + k] = ev[k]
        rec[R_VPCC + k] = x[X_VPCC + k]
        rec[R_IS + k] = x[X_IS + k]
        rec[R_ILOAD + k] = x[X_ILL + k]
        rec[R_IPASS + k] = ipass[k]
        rec[R_IF + k] = x[X_IF + k]
        rec[R_IREF + k] = ref[k]
        rec[R_SW + k] = x[X_SW + k]
    rec[R_VDC] = x[X_VDC]
    rec[R_VCL] = x[X_VCL]
    rec[R_P] = p
    rec[R_Q] = q
    rec[R_PAVG] = p_avg
    rec[R_PAVE] = p_ave
    rec[R_KCL] = kcl
    nd = 0.0
    for d in range(6):
        nd += x[X_DIO + d]
    rec[R_NDIO] = nd
    return 0


@numba.njit(cache=True)
def _initial_record(x, c, rec):
    rec[:] = 0.0
    rec[R_T] = x[X_T]
    e0, e1, e2 = _source(x[X_T], c[C_VPK], c[C_W])
    rec[R_E] = e0
    rec[R_E + 1] = e1
    rec[R_E + 2] = e2
    for k in range(3):
        rec[R_VPCC + k] = x[X_VPCC + k]
        rec[R_IS + k] = x[X_IS + k]
        rec[R_ILOAD + k] = x[X_ILL + k]
        rec[R_IF + k] = x[X_IF + k]
        rec[R_SW + k] = x[X_SW + k]
    rec[R_VDC] = x[X_VDC]
    rec[R_VCL] = x[X_VCL]


@numba.njit(cache=True)
def _run(x, c, mode, ring_p, meta_p, ring_q, meta_q, dc, log):
    """Fill ``log`` row by row; returns the failing step index or -1."""
    _initial_record(x, c, log[0])
    for n in range(1, log.shape[0]):
        if _step(x, c, mode, ring_p, meta_p, ring_q, meta_q, dc, log[n]) != 0:
            return n
    return -1


# ---- Python-facing API --------------------------------------------------
class SimState:
    """Snapshot of the full circuit state; wraps the flat solver vector."""

    def __init__(self, x: np.ndarray):
        self.x = np.asarray(x, dtype=float)
        if self.x.shape != (N_STATE,):
            raise ValueError(f"state vector must have length {N_STATE}")

    @classmethod
    def initial(cls, params: CircuitParams, ctrl: ControllerParams | None = None) -> "SimState":
        ctrl = ctrl or ControllerParams()
        x = np.zeros(N_STATE)
        x[X_VDC] = ctrl.v_ref if ctrl.v_dc_init is None else ctrl.v_dc_init
        x[X_SW:X_SW + 3] = 1.0
        return cls(x)

    def copy(self) -> "SimState":
        return SimState(self.x.copy())

    def _tri(self, off):
        return PhaseTriple(*self.x[off:off + 3])

    time = property(lambda s: float(s.x[X_T]))
    i_source = property(lambda s: s._tri(X_IS))
    i_rectifier = property(lambda s: s._tri(X_ILL))
    v_CL = property(lambda s: float(s.x[X_VCL]))
    v_pcc = property(lambda s: s._tri(X_VPCC))
    i_filter = property(lambda s: s._tri(X_IF))
    v_dc = property(lambda s: float(s.x[X_VDC]))

    @property
    def diodes(self) -> tuple[bool, ...]:
        return tuple(bool(v > 0.5) for v in self.x[X_DIO:X_DIO + 6])

    @property
    def switch_command(self) -> SwitchCommand:
        return SwitchCommand(*(Leg(int(v)) for v in self.x[X_SW:X_SW + 3]))

    def i_passive(self, params: CircuitParams) -> PhaseTriple:
        x, r_hp = self.x, params.high_pass.R
        return PhaseTriple(*(
            x[X_I5 + k] + x[X_I7 + k]
            + _hp_current(r_hp, x[X_VPCC + k], x[X_ILHP + k], x[X_VCHP + k])
            for k in range(3)
        ))

    def stored_energy(self, params: CircuitParams) -> float:
        """Sum of 1/2 L i^2 + 1/2 C v^2 over every storage element."""
        x, p = self.x, params
        e = 0.5 * p.L_s * np.sum(x[X_IS:X_IS + 3] ** 2)
        e += 0.5 * p.L_L * np.sum(x[X_ILL:X_ILL + 3] ** 2)
        e += 0.5 * p.C_L * x[X_VCL] ** 2
        e += 0.5 * p.fifth.L * np.sum(x[X_I5:X_I5 + 3] ** 2)
        e += 0.5 * p.fifth.C * np.sum(x[X_VC5:X_VC5 + 3] ** 2)
        e += 0.5 * p.seventh.L * np.sum(x[X_I7:X_I7 + 3] ** 2)
        e += 0.5 * p.seventh.C * np.sum(x[X_VC7:X_VC7 + 3] ** 2)
        e += 0.5 * p.high_pass.L * np.sum(x[X_ILHP:X_ILHP + 3] ** 2)
        e += 0.5 * p.high_pass.C * np.sum(x[X_VCHP:X_VCHP + 3] ** 2)
        e += 0.5 * p.L_f * np.sum(x[X_IF:X_IF + 3] ** 2)
        e += 0.5 * p.C_dc * x[X_VDC] ** 2
        return float(e)


class Controllers:
    """Estimator, DC-bus controller and hysteresis band for one simulation."""

    def __init__(self, params: CircuitParams, ctrl: ControllerParams | None = None):
        self.ctrl = ctrl or ControllerParams()
        self.separator = PowerSeparator.for_period(params.f1, params.dt)
        self.dc_bus = DcBusController(self.ctrl.v_ref, self.ctrl.gain, self.ctrl.tau)
        self.band = HysteresisBand(self.ctrl.half_width)

    def _dc_array(self) -> np.ndarray:
        v = self.dc_bus.v_filtered
        return np.array([0.0, 0.0]) if v is None else np.array([v, 1.0])

    def _store_dc(self, dc: np.ndarray) -> None:
        if dc[1]:
            self.dc_bus.v_filtered = float(dc[0])

    def kernel_args(self):
        s = self.separator
        return s.p_avg.ring, s.p_avg.meta, s.q_avg.ring, s.q_avg.meta


def source_voltage(t: float, params: CircuitParams) -> PhaseTriple:
    if t < 0:
        raise ValueError("t must be non-negative")
    return PhaseTriple(*_source(float(t), params.v_peak, 2 * math.pi * params.f1))


def vsc_terminal_voltage(cmd: SwitchCommand, v_dc: float) -> PhaseTriple:
    """Leg voltages +-v_dc/2 with the three-phase common mode removed."""
    if v_dc < 0:
        raise ValueError("v_dc must be non-negative")
    return PhaseTriple(*_terminal(float(cmd[0]), float(cmd[1]), float(cmd[2]), float(v_dc)))


def dc_link_step(v_dc: float, cmd: SwitchCommand, i_filter, dt: float, C_dc: float) -> float:
    """Backward-Euler capacitor update.

    ``i_filter`` is the phase current drawn from the PCC by the converter;
    it enters the positive rail through every HIGH leg.
    """
    i_charge = sum(float(s) * float(i) for s, i in zip(cmd, i_filter))
    return v_dc + dt / C_dc * i_charge


def rectifier_step(state: SimState, v_pcc, params: CircuitParams,
                   ctrl: ControllerParams | None = None) -> SimState:
    """Advance only the rectifier, with the PCC held at ``v_pcc``."""
    c = coefficients(params, ctrl or ControllerParams())
    new = state.copy()
    if _rectifier_fixed(new.x, c, np.asarray(v_pcc, dtype=float)) < 0:
        raise SolverError(
            f"diode pattern did not converge in {params.max_diode_iters} iterations "
            f"at t={new.time:.9f}s; reduce dt"
        )
    return new


@dataclass(frozen=True)
class BranchState:
    """One phase of a passive branch.

    ``i_l`` is the inductor current (for series branches also the branch
    current), ``v_c`` the capacitor voltage and ``v_prev`` the terminal
    voltage at the previous step.
    """
    i_l: float = 0.0
    v_c: float = 0.0
    v_prev: float = 0.0


def branch_current(kind: str, state: BranchState, branch: BranchParams) -> float:
    if kind == "hp":
        return _hp_current(branch.R, state.v_prev, state.i_l, state.v_c)
    return state.i_l


def passive_branch_step(kind: str, state: BranchState, v_pcc: float,
                        branch: BranchParams, dt: float) -> BranchState:
    """One trapezoidal step of a series R-L-C (``kind="series"``) or
    C + (R || L) high-pass (``kind="hp"``) branch driven at ``v_pcc``."""
    R, L, C = branch.R, branch.L, branch.C
    if kind == "series":
        g, j = _series_coef(R, L, C, dt, state.v_prev, state.i_l, state.v_c)
        i1 = g * v_pcc + j
        return BranchState(i1, _series_advance(C, dt, state.i_l, state.v_c, i1), v_pcc)
    if kind == "hp":
        g, j = _hp_coef(R, L, C, dt, state.v_prev, state.i_l, state.v_c)
        i1 = g * v_pcc + j
        il1, vc1 = _hp_advance(R, L, C, dt, state.v_prev, state.i_l, state.v_c, v_pcc, i1)
        return BranchState(il1, vc1, v_pcc)
    raise ValueError(f"unknown branch kind {kind!r}")


@numba.njit(cache=True)
def _branch_response(hp, R, L, C, dt, v, il0, vc0, v0):
    out = np.empty(v.shape[0])
    il, vc, vprev = il0, vc0, v0
    for n in range(v.shape[0]):
        if hp:
            g, j = _hp_coef(R, L, C, dt, vprev, il, vc)
            i1 = g * v[n] + j
            il, vc = _hp_advance(R, L, C, dt, vprev, il, vc, v[n], i1)
        else:
            g, j = _series_coef(R, L, C, dt, vprev, il, vc)
            i1 = g * v[n] + j
            vc = _series_advance(C, dt, il, vc, i1)
            il = i1
        vprev = v[n]
        out[n] = i1
    return out


def branch_response(kind: str, branch: BranchParams, v: np.ndarray, dt: float,
                    state: BranchState = BranchState()) -> np.ndarray:
    """Branch current for a sampled terminal-voltage sequence (same
    discretization as :func:`passive_branch_step`)."""
    if kind not in ("series", "hp"):
        raise ValueError(f"unknown branch kind {kind!r}")
    return _branch_response(kind == "hp", branch.R, branch.L, branch.C, dt,
                            np.asarray(v, dtype=float), state.i_l, state.v_c, state.v_prev)


def step(state: SimState, params: CircuitParams, mode, controllers: Controllers,
         record: np.ndarray | None = None) -> SimState:
    """One fixed step of the whole plant and its control.

    ``controllers`` is mutated (moving averages, DC-bus filter). If
    ``record`` is given it receives the per-step channels of ``CHANNELS``.
    """
    mode = Mode.parse(mode)
    c = coefficients(params, controllers.ctrl)
    new = state.copy()
    rec = np.zeros(N_REC) if record is None else record
    dc = controllers._dc_array()
    if _step(new.x, c, int(mode), *controllers.kernel_args(), dc, rec) != 0:
        raise SolverError(
            f"diode pattern did not converge in {params.max_diode_iters} iterations "
            f"at t={new.time + params.dt:.9f}s; reduce dt"
        )
    controllers._store_dc(dc)
    return new


def simulate(params: CircuitParams, ctrl: ControllerParams, mode, n_steps: int,
             state: SimState | None = None,
             controllers: Controllers | None = None) -> tuple[SimState, np.ndarray]:
    """Run ``n_steps`` steps; returns the final state and the full
    (n_steps + 1, N_REC) record, row 0 being the initial state."""
    mode = Mode.parse(mode)
    state = (state or SimState.initial(params, ctrl)).copy()
    controllers = controllers or Controllers(params, ctrl)
    c = coefficients(params, ctrl)
    log = np.empty((n_steps + 1, N_REC))
    dc = controllers._dc_array()
    failed = _run(state.x, c, int(mode), *controllers.kernel_args(), dc, log)
    controllers._store_dc(dc)
    if failed >= 0:
        raise SolverError(
            f"diode pattern did not converge in {params.max_diode_iters} iterations "
            f"at step {failed} (t={failed * params.dt:.9f}s); reduce dt"
        )
    return state, log


def branch_impedance(kind: str, branch: BranchParams, f: float, dt: float = 2e-6,
                     settle: float = 1.0, fit_cycles: int = 20) -> complex:
    """Steady-state V/I of a simulated branch driven by a sinusoid at ``f``.

    The current phasor is a least-squares sin/cos fit over the last
    ``fit_cycles`` periods, so ``f`` need not divide the step grid.
    """
    w = 2 * math.pi * f
    n_fit = int(round(fit_cycles / (f * dt)))
    n = int(round(settle / dt)) + n_fit
    t = np.arange(1, n + 1) * dt
    i = branch_response(kind, branch, np.sin(w * t), dt)
    tt = t[-n_fit:]
    basis = np.column_stack([np.sin(w * tt), np.cos(w * tt)])
    (a, b), *_ = np.linalg.lstsq(basis, i[-n_fit:], rcond=None)
    return 1.0 / complex(a, b)
