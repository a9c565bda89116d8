import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ferrosram.device import (
    CalibrationError, Curve, ExtractionError, FeFetParams, FeFetState, MosfetParams, Polarity,
    ProgramPulse, SweepProtocol, SwitchingKinetics, apply_program_pulse, calibrate_drive,
    calibrate_kinetics, fefet_conduction_vth, fefet_current, fefet_effective_vth, idvg_sweep,
    memory_window, mosfet_current, mosfet_current_derivs, step_polarization,
    switching_boundary_width,
)

# Hand-derived oracles, computed before the model was written.
# Drive current that discharges 17 fF by 100 mV in 70 ps.
I_READ = 17e-15 * 0.1 / 70e-12  # 24.2857 uA
# Merz constants through (4 V, 10 ns) and (2 V, 100 s):
#   v0 = ln(1e-8 / 1e2) / (1/4 - 1/2) = 4 ln(1e10), tau0 = 1e-8 / (ln2 exp(v0/4))
V0 = 4.0 * math.log(1e10)  # 92.1034 V
TAU0 = 1e-8 / (math.log(2.0) * 1e10)  # 1.4427e-18 s

NMOS = MosfetParams(Polarity.N, 0.4, 1e-4, 1.5, 0.1)
KIN = SwitchingKinetics(TAU0, V0)


def pfefet(vth0=-1.0, mw=1.0, kprime=1e-3):
    return FeFetParams(MosfetParams(Polarity.P, vth0, kprime, 1.5, 0.1), mw, KIN)


# --- transistor model --------------------------------------------------------


def test_oracle_values():
    assert I_READ == pytest.approx(24.2857e-6, rel=1e-5)
    assert V0 == pytest.approx(92.1034, rel=1e-6)
    assert TAU0 == pytest.approx(1.4427e-18, rel=1e-4)


def test_calibrated_drive_hits_read_current():
    p = calibrate_drive(24e-6, 1.0, 1.0, NMOS)
    assert p.kprime > 0
    assert mosfet_current(p, 1.0, 1.0, 0.0) == pytest.approx(24e-6, rel=1e-3)
    assert mosfet_current(p, 1.0, 1.0, 0.0) == pytest.approx(I_READ, rel=0.1)


def test_calibration_fixed_point_and_unreachable():
    i0 = mosfet_current(NMOS, 1.0, 1.0, 0.0)
    assert calibrate_drive(i0, 1.0, 1.0, NMOS).kprime == pytest.approx(NMOS.kprime, rel=1e-12)
    with pytest.raises(CalibrationError):
        calibrate_drive(1.0, 0.1, 1.0, NMOS)
    with pytest.raises(CalibrationError):
        calibrate_drive(0.0, 1.0, 1.0, NMOS)


def test_threshold_continuity():
    p = calibrate_drive(24e-6, 1.0, 1.0, NMOS)
    i_th = mosfet_current(p, 0.4, 1.0, 0.0)
    i_on = mosfet_current(p, 1.0, 1.0, 0.0)
    assert 0.0 < i_th < 0.01 * i_on


def test_off_current_at_zero_gate():
    p = calibrate_drive(24e-6, 1.0, 1.0, NMOS)
    assert abs(mosfet_current(p, 0.0, 1.0, 0.0)) < 1e-9


def test_zero_vds_gives_zero_current():
    assert mosfet_current(NMOS, 1.0, 0.3, 0.3) == 0.0
    assert fefet_current(FeFetState.lvt(4), pfefet(), -1.0, 0.2, 0.2) == 0.0


def test_source_drain_symmetry():
    assert mosfet_current(NMOS, 1.0, 0.2, 0.7) == pytest.approx(-mosfet_current(NMOS, 1.0, 0.7, 0.2))


def test_p_device_mirrors_n():
    pmos = MosfetParams(Polarity.P, -0.4, 1e-4, 1.5, 0.1)
    assert mosfet_current(pmos, -1.0, -1.0, 0.0) == pytest.approx(mosfet_current(NMOS, 1.0, 1.0, 0.0))


@pytest.mark.parametrize("kwargs", [dict(kprime=0.0), dict(n_sub=0.5), dict(lam=-1.0), dict(vth0=-0.4)])
def test_param_validation(kwargs):
    base = dict(polarity=Polarity.N, vth0=0.4, kprime=1e-4)
    base.update(kwargs)
    with pytest.raises(ValueError):
        MosfetParams(**base)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_analytic_derivatives_match_finite_differences(vg, vd, vs):
    h = 1e-6
    if abs(vd - vs) < 10 * h:
        return  # |vds| kink of the length-modulation factor
    i, dg, dd, ds = mosfet_current_derivs(NMOS, vg, vd, vs)
    fd = [(mosfet_current(NMOS, *(np.add((vg, vd, vs), e * h))) -
           mosfet_current(NMOS, *(np.add((vg, vd, vs), -e * h)))) / (2 * h) for e in np.eye(3)]
    for a, n in zip((dg, dd, ds), fd):
        assert a == pytest.approx(n, rel=1e-4, abs=1e-15)


# --- FeFET -------------------------------------------------------------------


def test_effective_vth_examples():
    params = pfefet()
    assert fefet_effective_vth(FeFetState.lvt(8), params) == pytest.approx(-0.5)
    assert fefet_effective_vth(FeFetState.hvt(8), params) == pytest.approx(-1.5)
    mixed = FeFetState((1, 1, 1, 1, -1, -1, -1, -1))
    assert fefet_effective_vth(mixed, params) == pytest.approx(-1.0)


def test_conduction_vth_is_dominated_by_least_conductive_segment():
    params = pfefet()
    mixed = FeFetState((1, 1, 1, 1, -1, -1, -1, -1))
    vc = fefet_conduction_vth(mixed, params)
    assert -1.5 < vc < fefet_effective_vth(mixed, params)
    assert fefet_conduction_vth(FeFetState.lvt(8), params) == pytest.approx(-0.5)


def test_lvt_on_and_hvt_off(nv_config):
    params = nv_config.pu_params
    n = nv_config.segments
    assert abs(fefet_current(FeFetState.lvt(n), params, -1.0, -1.0, 0.0)) >= 10e-6
    assert abs(fefet_current(FeFetState.hvt(n), params, 0.0, -1.0, 0.0)) < 1e-9


def test_state_validation():
    with pytest.raises(ValueError):
        FeFetState((1.2,))
    with pytest.raises(ValueError):
        FeFetState(())


def test_full_gate_writes_saturate():
    params = pfefet()
    hvt = step_polarization(FeFetState.lvt(8), params, 4.0, 0.0, 0.0, 10 * KIN.tau(4.0))
    assert max(hvt.segments) <= -0.9999
    reset = apply_program_pulse(FeFetState.lvt(8), params, ProgramPulse(4.0, 0.0, 0.0, 1e-3))
    assert max(reset.segments) < -0.9999
    setp = apply_program_pulse(FeFetState.hvt(8), params, ProgramPulse(-4.5, 0.0, 0.0, 1e-3))
    assert min(setp.segments) > 0.9999


def test_partial_write_is_graded_toward_source():
    # field only near the source: gate and drain at 4 V, source grounded
    s = step_polarization(FeFetState.lvt(8), pfefet(), 4.0, 4.0, 0.0, 10e-9)
    p = np.array(s.segments)
    assert np.all(np.diff(p) >= 0)
    assert p[0] < 0.9 and p[-1] > 0.999
    assert -1.0 < s.mean < 1.0


def test_zero_width_pulse_is_identity():
    s = FeFetState((0.3, -0.2, 1.0, -1.0))
    assert apply_program_pulse(s, pfefet(), ProgramPulse(4.0, 0.0, 0.0, 0.0)) == s
    with pytest.raises(ValueError):
        step_polarization(s, pfefet(), 1.0, 0.0, 0.0, -1.0)


def test_scheme_equivalence():
    params = pfefet()
    gate = apply_program_pulse(FeFetState.hvt(8), params, ProgramPulse(-4.0, 0.0, 0.0, 50e-9))
    sd = apply_program_pulse(FeFetState.hvt(8), params, ProgramPulse(0.0, 4.0, 4.0, 50e-9))
    assert max(abs(a - b) for a, b in zip(gate.segments, sd.segments)) < 1e-9


segments = st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=8).map(tuple).map(FeFetState)
volts = st.floats(-6.0, 6.0)


@settings(max_examples=200, deadline=None)
@given(segments, volts, volts, volts, st.floats(0.0, 1e6))
def test_polarization_stays_bounded(state, vg, vd, vs, dt):
    out = step_polarization(state, pfefet(), vg, vd, vs, dt)
    assert all(-1.0 <= p <= 1.0 for p in out.segments)


@settings(max_examples=200, deadline=None)
@given(segments, st.floats(-6.0, 6.0), st.floats(0.0, 1e6))
def test_zero_field_persistence(state, v, dt):
    assert step_polarization(state, pfefet(), v, v, v, dt) == state


@settings(max_examples=200, deadline=None)
@given(segments, st.floats(0.5, 6.0), st.floats(0.0, 2.0), st.floats(1e-12, 1e3))
def test_stronger_field_never_switches_less(state, amp, extra, dt):
    params = pfefet()
    weak = step_polarization(state, params, amp, 0.0, 0.0, dt)
    strong = step_polarization(state, params, amp + extra, 0.0, 0.0, dt)
    for p0, pw, ps in zip(state.segments, weak.segments, strong.segments):
        assert abs(ps - (-1.0)) <= abs(pw - (-1.0)) + 1e-12 or p0 == -1.0


# --- kinetics ----------------------------------------------------------------


def test_kinetics_calibration_matches_oracle():
    kin = calibrate_kinetics((4.0, 10e-9), (2.0, 100.0))
    assert kin.v0 == pytest.approx(V0, rel=1e-12)
    assert kin.tau0 == pytest.approx(TAU0, rel=1e-12)
    assert switching_boundary_width(kin, 4.0) == pytest.approx(10e-9, rel=1e-12)
    assert switching_boundary_width(kin, -2.0) == pytest.approx(100.0, rel=1e-12)
    assert switching_boundary_width(kin, 1.0) > 1e20


def test_kinetics_errors():
    with pytest.raises(ValueError):
        calibrate_kinetics((4.0, 1e-8), (4.0, 1.0))
    with pytest.raises(ValueError):
        calibrate_kinetics((4.0, 1.0), (2.0, 1.0))  # equal widths give v0 = 0
    with pytest.raises(ValueError):
        switching_boundary_width(KIN, 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 10.0), st.floats(1e-12, 1e-3), st.floats(0.1, 0.9), st.floats(2.0, 1e6))
def test_calibration_round_trip(a1, w1, ratio, factor):
    a2, w2 = a1 * ratio, w1 * factor
    kin = calibrate_kinetics((a1, w1), (a2, w2))
    assert switching_boundary_width(kin, a1) == pytest.approx(w1, rel=1e-9)
    assert switching_boundary_width(kin, a2) == pytest.approx(w2, rel=1e-9)


# --- measurement protocols ---------------------------------------------------


def test_memory_window_from_programmed_sweeps():
    params = pfefet(kprime=1e-4)
    proto = dict(start=1.0, stop=-1.5, step=-0.05, vds=-0.05, vs=0.8)
    lvt, _ = idvg_sweep(params, FeFetState.hvt(8), SweepProtocol(
        pulses=(ProgramPulse(4.0, 0, 0, 1e-3), ProgramPulse(-4.5, 0, 0, 1e-3)), **proto))
    hvt, _ = idvg_sweep(params, FeFetState.lvt(8), SweepProtocol(
        pulses=(ProgramPulse(-4.5, 0, 0, 1e-3), ProgramPulse(4.0, 0, 0, 1e-3)), **proto))
    assert memory_window(lvt, hvt) == pytest.approx(1.0, abs=0.05)
    assert memory_window(lvt, lvt) == 0.0


def test_reverse_sweep_does_not_disturb_lvt():
    s0 = FeFetState.lvt(8)
    _, s1 = idvg_sweep(pfefet(), s0, SweepProtocol(1.0, -1.5, -0.05, dwell=1e-3))
    assert abs(s1.mean - s0.mean) < 1e-6


def test_empty_sweep_and_bad_protocols():
    curve, _ = idvg_sweep(NMOS, None, SweepProtocol(0.5, 0.5, 0.05))
    assert len(curve) == 0
    with pytest.raises(ValueError):
        SweepProtocol(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        SweepProtocol(0.0, 1.0, -0.1)


def test_memory_window_without_crossing_names_curve():
    flat = Curve(np.linspace(0, 1, 5), np.full(5, 1e-12))
    with pytest.raises(ExtractionError, match="LVT"):
        memory_window(flat, flat, 1e-7)
