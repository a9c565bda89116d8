import math

import numpy as np
import pytest

from ferrosram.cellbench import CellState, build_cell
from ferrosram.engine import (
    Circuit, SingularMatrixError, SolverConfig, SourceWaveform, dc_operating_point, dc_sweep,
    transient,
)

R, C = 1e3, 1e-12
TAU = R * C


def rc_circuit(v_src=1.0, v0=0.0):
    c = Circuit("rc")
    c.add_vsource("v1", "in", "0", SourceWaveform.dc(v_src))
    c.add_resistor("r1", "in", "out", R)
    c.add_capacitor("c1", "out", "0", C)
    c.ic = {"out": v0}
    return c


def rc_max_error(dt, method="be", tstop=5 * TAU):
    wave = transient(rc_circuit(), tstop, SolverConfig(dtmax=dt, method=method))
    exact = 1.0 - np.exp(-wave.times / TAU)
    return float(np.max(np.abs(wave.v("out") - exact))), wave


def inverter(nmos, pmos, vdd=1.0):
    c = Circuit("inv")
    c.add_vsource("vdd", "vdd", "0", SourceWaveform.dc(vdd))
    c.add_vsource("vin", "in", "0", SourceWaveform.dc(0.0))
    c.add_mosfet("mn", "in", "out", "0", nmos)
    c.add_mosfet("mp", "in", "out", "vdd", pmos)
    return c


def test_divider_exact():
    c = Circuit()
    c.add_vsource("v1", "a", "0", SourceWaveform.dc(1.0))
    c.add_resistor("r1", "a", "mid", 1e3)
    c.add_resistor("r2", "mid", "gnd", 1e3)
    op = dc_operating_point(c)
    assert abs(op.v("mid") - 0.5) < 1e-6
    assert op.i("v1") == pytest.approx(-0.5e-3, rel=1e-6)
    assert op.residual < 1e-9


def test_divider_sweep_is_linear():
    c = Circuit()
    c.add_vsource("v1", "a", "0", SourceWaveform.dc(0.0))
    c.add_resistor("r1", "a", "mid", 1e3)
    c.add_resistor("r2", "mid", "0", 1e3)
    sw = dc_sweep(c, "v1", 0.0, 2.0, 0.1)
    assert np.allclose(np.diff(sw.v("mid")) / np.diff(sw.values), 0.5, atol=1e-6)
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError):
            dc_sweep(c, "v1", 0.0, 1.0, bad)


def test_rc_against_analytic():
    err, wave = rc_max_error(TAU / 100)
    # first-order integrator: max error ~ dt/(2 tau e) = 0.18 %
    assert err < 0.002
    assert np.all(np.diff(wave.times) > 0)
    assert np.max(wave.kcl_residual) < 1e-9


def test_rc_first_order_convergence():
    e1, _ = rc_max_error(TAU / 100)
    e2, _ = rc_max_error(TAU / 200)
    assert 1.5 <= e1 / e2 <= 2.5


def test_trapezoidal_is_more_accurate():
    e_be, _ = rc_max_error(TAU / 100)
    e_tr, _ = rc_max_error(TAU / 100, method="trap")
    assert e_tr < 1e-4 < 1e-3 < e_be


def test_rc_discharge_energy_decreases():
    wave = transient(rc_circuit(v_src=0.0, v0=1.0), 5 * TAU, SolverConfig(dtmax=TAU / 50))
    energy = 0.5 * C * wave.v("out") ** 2
    assert np.all(np.diff(energy) < 0)


def test_tstop_zero_gives_single_point():
    wave = transient(rc_circuit(), 0.0)
    assert len(wave.times) == 1 and wave.times[0] == 0.0


def test_pwl_breakpoints_are_hit():
    c = rc_circuit()
    c.set_source("v1", SourceWaveform.pwl([(0, 0), (0.37e-9, 0), (0.5e-9, 1)]))
    wave = transient(c, 1e-9, SolverConfig(dtmax=0.3e-9))
    assert 0.37e-9 in wave.times and 0.5e-9 in wave.times


def test_waveform_csv(tmp_path):
    _, wave = rc_max_error(TAU / 10, tstop=TAU)
    path = tmp_path / "rc.csv"
    wave.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_seconds,v(in),v(out),i(v1)"
    assert len(lines) == len(wave.times) + 1


def test_capacitor_only_node():
    c = Circuit()
    c.add_vsource("v1", "a", "0", SourceWaveform.dc(1.0))
    c.add_resistor("r1", "a", "0", 1e3)
    c.add_capacitor("c1", "float", "0", 1e-15)
    assert dc_operating_point(c).v("float") == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(SingularMatrixError):
        dc_operating_point(c, SolverConfig(gmin=0.0))


def test_inverter_vtc_monotone_and_warm_start_independent(base_config):
    c = inverter(base_config.pd_params, base_config.pu_params)
    fwd = dc_sweep(c, "vin", 0.0, 1.0, 0.01)
    out = fwd.v("out")
    assert np.all(np.diff(out) <= 1e-9)
    assert out[0] > 0.99 and out[-1] < 0.01
    back = dc_sweep(c, "vin", 1.0, 0.0, -0.01)
    assert np.max(np.abs(back.v("out")[::-1] - out)) < 2 * SolverConfig().vntol


def test_baseline_latch_holds_initial_condition(base_config):
    c = build_cell(base_config, CellState(1.0, 0.0, 1.0))
    clamped = dc_operating_point(c, ic={"q": 1.0})
    op = dc_operating_point(c, ic={}, initial_guess=clamped.x)
    assert op.v("q") == pytest.approx(1.0, abs=1e-3)
    assert op.v("qb") <= 1e-3
    assert op.residual < 1e-9


def test_source_waveform_validation():
    with pytest.raises(ValueError):
        SourceWaveform.pwl([(0, 0), (0, 1)])
    with pytest.raises(ValueError):
        SourceWaveform("PULSE", (0, 1, 0, 0, 1e-9, 1e-9, 1e-8))
    p = SourceWaveform("PULSE", (0, 1, 1e-9, 1e-10, 1e-10, 1e-9, 4e-9))
    assert p.value(0.0) == 0.0 and p.value(1.5e-9) == 1.0
    assert p.value(1.05e-9) == pytest.approx(0.5)
    assert SourceWaveform.pwl([(0, 0), (1, 2)]).value(0.25) == pytest.approx(0.5)
    assert math.isclose(SourceWaveform.pwl([(0, 0), (1, 2)]).value(5.0), 2.0)
