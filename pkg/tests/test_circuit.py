import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hapf.circuit import (
    CH,
    BranchParams,
    BranchState,
    CircuitParams,
    ControllerParams,
    Controllers,
    Mode,
    SimState,
    SolverError,
    X_I7,
    X_ILL,
    X_IS,
    X_VC5,
    X_VCHP,
    X_VCL,
    branch_current,
    branch_impedance,
    dc_link_step,
    passive_branch_step,
    rectifier_step,
    simulate,
    source_voltage,
    step,
    vsc_terminal_voltage,
)
from hapf.hysteresis import Leg, SwitchCommand

P = CircuitParams()
H, L = Leg.HIGH, Leg.LOW


# ---- source -------------------------------------------------------------
def test_source_voltage_examples():
    np.testing.assert_allclose(source_voltage(0.0, P), (0.0, -269.44, 269.44), atol=5e-3)
    assert source_voltage(5e-3, P).r == pytest.approx(311.127, abs=1e-3)
    with pytest.raises(ValueError):
        source_voltage(-1.0, P)


@given(st.floats(0, 10))
def test_source_is_balanced(t):
    assert abs(sum(source_voltage(t, P))) < 1e-9


# ---- converter terminal / DC link --------------------------------------
def _terminal_oracle(cmd, v_dc):
    legs = np.array([(v_dc / 2 if s == H else -v_dc / 2) for s in cmd])
    return legs - legs.mean()


def test_terminal_examples():
    np.testing.assert_allclose(vsc_terminal_voltage(SwitchCommand(H, H, H), 750), 0.0, atol=1e-12)
    np.testing.assert_allclose(vsc_terminal_voltage(SwitchCommand(H, L, L), 750), (500, -250, -250))


@pytest.mark.parametrize("cmd", list(itertools.product([H, L], repeat=3)))
def test_terminal_matches_oracle_and_sums_to_zero(cmd):
    vt = vsc_terminal_voltage(SwitchCommand(*cmd), 733.0)
    np.testing.assert_allclose(vt, _terminal_oracle(cmd, 733.0), atol=1e-12)
    assert abs(sum(vt)) < 1e-12


def test_dc_link_examples():
    cmd = SwitchCommand(H, L, L)
    assert dc_link_step(750.0, cmd, (0, 0, 0), 2e-6, 4500e-6) == 750.0
    # converter injects 10 A into phase r, i.e. draws -10 A: 10 A leave the bus
    v = 750.0
    for _ in range(500):
        v = dc_link_step(v, cmd, (-10.0, 5.0, 5.0), 2e-6, 4500e-6)
    assert v - 750.0 == pytest.approx(-10 * 1e-3 / 4500e-6, rel=1e-9)
    assert dc_link_step(750.0, SwitchCommand(L, L, L), (3.0, 2.0, 1.0), 2e-6, 4500e-6) <= 750.0


@pytest.mark.parametrize("cmd", list(itertools.product([H, L], repeat=3)))
@pytest.mark.parametrize("i", [(4.0, -1.0, -3.0), (-2.0, 5.0, -3.0), (1.0, 1.0, -2.0)])
def test_dc_link_sign_audit(cmd, i):
    # power drawn by the converter from the PCC must charge the capacitor
    cmd = SwitchCommand(*cmd)
    p_ac = float(np.dot(vsc_terminal_voltage(cmd, 750.0), i))
    dv = dc_link_step(750.0, cmd, i, 2e-6, 4500e-6) - 750.0
    assert np.sign(round(dv, 12)) == np.sign(round(p_ac, 6))


# ---- passive branches ---------------------------------------------------
def test_branch_tuning_analytic():
    assert P.fifth.tuned_frequency() == pytest.approx(252.3, rel=1e-3)
    assert P.seventh.tuned_frequency() == pytest.approx(352.4, rel=1e-3)


def test_fifth_branch_impedance_at_tuning():
    z = branch_impedance("series", P.fifth, 252.3)
    assert abs(z) == pytest.approx(P.fifth.R, rel=0.02)


def test_series_branch_matches_phasor_off_tune():
    for f in (50.0, 150.0, 600.0):
        w = 2 * math.pi * f
        b = P.seventh
        z_exact = b.R + 1j * (w * b.L - 1 / (w * b.C))
        assert abs(branch_impedance("series", b, f)) == pytest.approx(abs(z_exact), rel=1e-3)


def test_hp_branch_matches_phasor():
    b = P.high_pass
    for f in (50.0, 550.0, 2500.0):
        w = 2 * math.pi * f
        z_exact = 1 / (1j * w * b.C) + 1 / (1 / b.R + 1 / (1j * w * b.L))
        z = branch_impedance("hp", b, f, settle=0.2)
        assert abs(z - z_exact) <= 1e-3 * abs(z_exact)


@pytest.mark.parametrize("kind", ["series", "hp"])
def test_branch_quiescent(kind):
    s = BranchState()
    for _ in range(100):
        s = passive_branch_step(kind, s, 0.0, P.fifth, 2e-6)
    assert s == BranchState()
    assert branch_current(kind, s, P.fifth) == 0.0


def test_unknown_branch_kind():
    with pytest.raises(ValueError):
        passive_branch_step("notch", BranchState(), 1.0, P.fifth, 2e-6)


# ---- rectifier ----------------------------------------------------------
def test_rectifier_quiescent():
    s = SimState.initial(P)
    for _ in range(50):
        s = rectifier_step(s, (0.0, 0.0, 0.0), P)
    assert np.all(s.x[X_ILL:X_ILL + 3] == 0.0) and s.v_CL == 0.0
    assert not any(s.diodes)


def _ideal_pairs(t):
    """Conducting (upper, lower) phases of an ideal bridge: max and min voltage."""
    v = np.array(source_voltage(t, P))
    return int(np.argmax(v)), int(np.argmin(v))


def _cyclic_sequence(items):
    seq = [items[0]]
    for it in items[1:]:
        if it != seq[-1]:
            seq.append(it)
    while len(seq) > 1 and seq[-1] == seq[0]:
        seq.pop()
    return seq


def _same_cycle(a, b):
    return len(a) == len(b) and any(a[k:] + a[:k] == b for k in range(len(a)))


@pytest.fixture(scope="module")
def driven_rectifier():
    p = CircuitParams(dt=5e-6)
    s = SimState.initial(p)
    n_settle = int(round(0.1 / p.dt))
    for n in range(n_settle):
        s = rectifier_step(s, source_voltage((n + 1) * p.dt, p), p)
    states = []
    for n in range(n_settle, n_settle + p.period_steps):
        s = rectifier_step(s, source_voltage((n + 1) * p.dt, p), p)
        states.append(s)
    return p, states


def test_rectifier_six_pulse_sequence(driven_rectifier):
    p, states = driven_rectifier
    pairs = []
    for s in states:
        d = s.diodes
        on = sum(d)
        assert on in (2, 3)  # 3 only during commutation overlap
        if on == 2:
            up, lo = d[:3].index(True), d[3:].index(True)
            assert up != lo
            pairs.append((up, lo))
    seq = _cyclic_sequence(pairs)
    ideal = _cyclic_sequence([_ideal_pairs(s.time) for s in states])
    assert len(seq) == 6
    assert _same_cycle(seq, ideal)


def test_rectifier_dc_level(driven_rectifier):
    _, states = driven_rectifier
    v_mean = np.mean([s.v_CL for s in states])
    assert v_mean == pytest.approx(1.35 * 381, rel=0.15)


def test_rectifier_nonconvergence_is_reported():
    p = CircuitParams(max_diode_iters=1)
    with pytest.raises(SolverError, match="reduce dt"):
        simulate(p, ControllerParams(), Mode.BASELINE, 100)


# ---- whole plant --------------------------------------------------------
def test_baseline_disables_filters():
    _, log = simulate(P, ControllerParams(), Mode.BASELINE, 5000)
    for ch in ("i_passive_r_A", "i_filter_r_A", "i_filter_y_A", "i_passive_b_A"):
        assert np.all(log[:, CH[ch]] == 0.0)
    assert np.all(log[:, CH["v_dc_V"]] == 750.0)


def test_python_step_matches_compiled_loop():
    ctrl = ControllerParams()
    _, log = simulate(P, ctrl, Mode.HYBRID, 400)
    s, c = SimState.initial(P, ctrl), Controllers(P, ctrl)
    rec = np.zeros(log.shape[1])
    for n in range(1, 401):
        s = step(s, P, "hybrid", c, rec)
        assert np.array_equal(rec, log[n])


def test_line_currents_sum_to_zero(hybrid_run):
    log = hybrid_run.log
    for prefix in ("i_s", "i_load", "i_filter", "i_passive"):
        total = sum(log[:, CH[f"{prefix}_{ph}_A"]] for ph in "ryb")
        assert np.abs(total).max() < 1e-6


def test_kcl_every_step(hybrid_run, baseline_run):
    assert hybrid_run.log[1:, CH["kcl_residual_A"]].max() <= 1e-6
    assert baseline_run.log[1:, CH["kcl_residual_A"]].max() <= 1e-6
    # independent recomputation from logged branch currents
    log = hybrid_run.log
    for ph in "ryb":
        res = log[:, CH[f"i_s_{ph}_A"]] - log[:, CH[f"i_load_{ph}_A"]] \
            - log[:, CH[f"i_passive_{ph}_A"]] - log[:, CH[f"i_filter_{ph}_A"]]
        assert np.abs(res).max() <= 1e-6


def test_capacitor_voltages_non_negative(hybrid_run):
    log = hybrid_run.log
    n0 = int(round(0.02 / P.dt))
    assert log[:, CH["v_dc_V"]].min() >= 0
    assert log[n0:, CH["v_CL_V"]].min() >= 0


@pytest.mark.parametrize("mode", [Mode.BASELINE, Mode.PASSIVE_ONLY])
def test_passivity_with_source_zeroed(mode):
    p = CircuitParams(V_s=0.0)
    ctrl = ControllerParams()
    s = SimState.initial(p, ctrl)
    s.x[X_IS:X_IS + 3] = (1.0, -2.0, 1.0)
    s.x[X_ILL:X_ILL + 3] = (3.0, -1.0, -2.0)
    s.x[X_VCL] = 300.0
    s.x[X_VC5:X_VC5 + 3] = (100.0, -50.0, -50.0)
    s.x[X_I7:X_I7 + 3] = (0.5, 0.0, -0.5)
    s.x[X_VCHP:X_VCHP + 3] = (20.0, -10.0, -10.0)
    c = Controllers(p, ctrl)
    energy = [s.stored_energy(p)]
    for _ in range(5000):
        s = step(s, p, mode, c)
        energy.append(s.stored_energy(p))
    assert np.all(np.diff(energy) <= 0.0)


def test_dc_energy_bookkeeping(hybrid_run):
    """Capacitor energy change vs converter AC-side energy, per step."""
    log = hybrid_run.log[100000:110000]
    c = P.C_dc
    v0, v1 = log[:-1, CH["v_dc_V"]], log[1:, CH["v_dc_V"]]
    sw = log[:-1, CH["sw_r"]:CH["sw_b"] + 1]
    i1 = log[1:, CH["i_filter_r_A"]:CH["i_filter_b_A"] + 1]
    legs = (sw - 0.5) * v0[:, None]
    vt = legs - legs.mean(axis=1, keepdims=True)
    e_ac = P.dt * np.sum(vt * i1, axis=1)
    d_cap = 0.5 * c * (v1 ** 2 - v0 ** 2)
    i_ch = np.sum(sw * i1, axis=1)
    tol = P.dt ** 2 * i_ch ** 2 / (2 * c) * (1 + 1e-6) + 1e-9 * np.abs(d_cap) + 1e-12
    assert np.all(np.abs(d_cap - e_ac) <= tol)


def test_switching_at_most_once_per_step(hybrid_run):
    sw = hybrid_run.log[:, CH["sw_r"]:CH["sw_b"] + 1]
    assert np.abs(np.diff(sw, axis=0)).max() <= 1.0
    assert hybrid_run.summary.switching_frequency > 0


def test_dc_bus_step_down_recovers():
    ctrl = ControllerParams(v_dc_init=0.95 * 750.0)
    _, log = simulate(P, ctrl, Mode.HYBRID, 2 * P.period_steps)
    assert log[1, CH["p_ave_W"]] > 0
    # rising within one fundamental period
    v = log[:, CH["v_dc_V"]]
    assert v[P.period_steps] > v[0]


def _periodic_error(log, ch, dt, f1=50.0):
    n0, n_per = int(round(0.1 / dt)), int(round(1 / (f1 * dt)))
    x = log[n0:, CH[ch]]
    d = np.abs(x[n_per:] - x[:-n_per]).max()
    return d / max(np.abs(x).max(), 1e-12)


@pytest.mark.parametrize("ch", [
    "i_s_r_A", "i_s_b_A", "i_load_y_A", "v_pcc_r_V", "v_CL_V", "p_L_W", "q_L_var",
])
def test_baseline_is_grid_periodic(baseline_run, ch):
    assert _periodic_error(baseline_run.log, ch, P.dt) < 5e-3


@pytest.mark.parametrize("ch", ["v_CL_V", "v_dc_V"])
def test_hybrid_smooth_states_are_grid_periodic(hybrid_run, ch):
    assert _periodic_error(hybrid_run.log, ch, P.dt) < 5e-3


@pytest.mark.parametrize("ch", ["i_load_r_A", "i_load_b_A"])
def test_hybrid_load_current_jitter_is_switching_ripple(hybrid_run, ch):
    # hysteresis switching is not grid-synchronous; ripple leaks into the load
    assert _periodic_error(hybrid_run.log, ch, P.dt) < 3e-2


def test_step_size_convergence_baseline():
    from hapf.runner import Scenario, execute
    a = execute(Scenario(mode=Mode.BASELINE))
    b = execute(Scenario(circuit=CircuitParams(dt=1e-6), mode=Mode.BASELINE))
    assert abs(a.summary.thd - b.summary.thd) < 1e-3


def test_deterministic_trajectories():
    ctrl = ControllerParams()
    _, a = simulate(P, ctrl, Mode.HYBRID, 3000)
    _, b = simulate(P, ctrl, Mode.HYBRID, 3000)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("bad", [{"dt": 1e-5}, {"L_s": 0.0}, {"R_s": -1.0}])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        CircuitParams(**bad)


def test_branch_params_validation():
    with pytest.raises(ValueError):
        CircuitParams(fifth=BranchParams(0.0, 1.0, 1.0))
