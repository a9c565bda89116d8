import csv
import json
import math

import numpy as np
import pytest

from ferrosram import analysis
from ferrosram.analysis import (
    Mode, butterfly, disturb_projection, emit_halid, fixed_points, programming_scheme_curves,
    read_latency, snm_from_vtcs,
)
from ferrosram.cellbench import fresh_state, run_silicon_protocol
from ferrosram.device import ExtractionError, calibrate_kinetics
from ferrosram.engine import Waveform

KIN = calibrate_kinetics((4.0, 10e-9), (2.0, 100.0))


def pwl_inverter(a, b):
    """Ideal inverter: 1 below a, linear to 0 at b, 0 above."""
    return np.array([0.0, a, b, 1.0]), np.array([1.0, 1.0, 0.0, 0.0])


@pytest.mark.parametrize("a,b", [(0.4, 0.6), (0.3, 0.7), (0.5, 0.5)])
def test_snm_exact_for_symmetric_pwl(a, b):
    # the largest square in each lobe sits in the corner with side a
    x, y = pwl_inverter(a, b)
    lobes = snm_from_vtcs(x, y, y, x)
    assert lobes["zero"] == pytest.approx(a, abs=1e-12)
    assert lobes["one"] == pytest.approx(a, abs=1e-12)


def corner_square(a_top, b_top, b_left):
    """Side of the square wedged between a rail-level left edge and a falling top edge.

    The left edge is the other inverter at q = 0 for qb >= b_left; the top-right
    corner lands on the transition qb = (b_top - q) / (b_top - a_top).
    """
    k = 1.0 / (b_top - a_top)
    return (b_top * k - b_left) / (1.0 + k)


def test_corner_square_reduces_to_symmetric_case():
    assert corner_square(0.4, 0.6, 0.6) == pytest.approx(0.4)


def test_snm_exact_for_asymmetric_pwl():
    a1, b1, a2, b2 = 0.3, 0.5, 0.45, 0.65
    x1, y1 = pwl_inverter(a1, b1)
    x2, y2 = pwl_inverter(a2, b2)
    lobes = snm_from_vtcs(x1, y1, y2, x2)
    assert lobes["zero"] == pytest.approx(corner_square(a1, b1, b2), abs=1e-12)
    assert lobes["one"] == pytest.approx(corner_square(a2, b2, b1), abs=1e-12)


def test_snm_resampling_invariance():
    x, y = pwl_inverter(0.4, 0.6)
    xs = np.linspace(0, 1, 1001)
    ys = np.interp(xs, x, y)
    assert snm_from_vtcs(xs, ys, ys, xs)["zero"] == pytest.approx(0.4, abs=1e-9)


def test_monostable_pwl_has_one_lobe():
    # inverter 2 never pulls Q below 0.7, so only the lobe storing 1 survives
    x1, y1 = pwl_inverter(0.4, 0.6)
    qb2 = np.array([0.0, 0.9, 1.0])
    q2 = np.array([1.0, 1.0, 0.7])
    lobes = snm_from_vtcs(x1, y1, q2, qb2)
    assert lobes["zero"] == 0.0 and lobes["one"] > 0.0
    pts = fixed_points(x1, y1, qb2, q2)
    assert len([p for p in pts if p.stable]) == 1


def test_fixed_point_classification():
    q = np.linspace(0, 1, 201)
    f = 1.0 / (1.0 + np.exp((q - 0.5) / 0.03))
    pts = fixed_points(q, f, q, f)
    stable = [p for p in pts if p.stable]
    assert len(pts) == 3 and len(stable) == 2
    meta = [p for p in pts if not p.stable][0]
    assert meta.q == pytest.approx(0.5, abs=1e-3) and abs(meta.loop_gain) >= 1


def synthetic_read(slope=1e-3 / 1e-12, t_end=300e-12):
    t = np.arange(0.0, t_end, 1e-12)
    wl = np.clip(t / 10e-12, 0.0, 1.0)
    diff = np.clip((t - 5e-12) * slope, 0.0, None)
    volts = np.stack([wl, np.ones_like(t), 1.0 - diff], axis=1)
    return Waveform(t, ["wl", "bl", "blb"], volts, [], np.zeros((len(t), 0)), {}, np.zeros(len(t)),
                    volts[-1])


def test_latency_of_linear_ramp():
    rep = read_latency(synthetic_read(), 0.1)
    assert rep.latency == pytest.approx(100e-12, rel=1e-9)
    assert rep.t_wl == pytest.approx(5e-12)
    assert read_latency(synthetic_read(), 0.0).latency == 0.0
    with pytest.raises(ExtractionError):
        read_latency(synthetic_read(t_end=50e-12), 0.1)


def test_halid_curve():
    curve = emit_halid(KIN, [1.0, 2.0, 3.0, 4.0, 5.0])
    widths = dict(zip(curve.x, curve.meta["raw"]))
    assert widths[4.0] == pytest.approx(10e-9, rel=1e-9)
    assert widths[-4.0] == pytest.approx(10e-9, rel=1e-9)
    assert widths[2.0] == pytest.approx(100.0, rel=1e-9)
    assert widths[1.0] > 1e20
    pos = curve.x > 0
    assert np.all(np.diff(curve.meta["raw"][pos]) < 0)
    assert curve.y.max() == 1e12 and curve.meta["clamped"][curve.x == 1.0][0]
    assert set(curve.meta["branch"]) == {"HVT", "LVT"}
    with pytest.raises(ValueError):
        emit_halid(KIN, [0.0])


def test_disturb_projection():
    assert disturb_projection(KIN, 1.0, 3.156e8) < 1e-10
    assert disturb_projection(KIN, 1.0, 0.0) == 0.0
    assert disturb_projection(KIN, 4.0, 10e-9) == pytest.approx(0.5, rel=1e-12)
    assert disturb_projection(KIN, 1.0, 1000.0) == pytest.approx(1000.0 / KIN.tau(1.0), rel=1e-6)
    with pytest.raises(ValueError):
        disturb_projection(KIN, 1.0, -1.0)


@pytest.mark.parametrize("mode", ["hold", "read"])
@pytest.mark.parametrize("bit", [0, 1])
def test_nvsram_butterflies_are_monostable(nv_config, nv_states, mode, bit):
    res = butterfly(nv_config, nv_states[bit], mode)
    assert res.monostable
    (pt,) = res.stable_points
    assert (pt.q > pt.qb) == bool(bit)
    lobe = "one" if bit else "zero"
    assert res.snm_lobes[lobe] > 0.1


def test_nvsram_state_swap_mirrors_lobes(nv_config, nv_states):
    r0 = butterfly(nv_config, nv_states[0], Mode.HOLD)
    r1 = butterfly(nv_config, nv_states[1], Mode.HOLD)
    assert r0.snm_lobes["zero"] == pytest.approx(r1.snm_lobes["one"], abs=1e-6)


@pytest.mark.parametrize("mode", [Mode.HOLD, Mode.READ])
def test_baseline_butterfly_symmetric(base_config, mode):
    res = butterfly(base_config, fresh_state(base_config), mode)
    assert len(res.stable_points) == 2
    assert abs(res.snm_lobes["zero"] - res.snm_lobes["one"]) < 1e-3
    assert all(abs(p.loop_gain) < 1 for p in res.stable_points)


def test_hold_snm_exceeds_read_snm(base_config):
    hold = butterfly(base_config, fresh_state(base_config), Mode.HOLD).snm
    read = butterfly(base_config, fresh_state(base_config), Mode.READ).snm
    assert hold > read > 0


def test_write_mode_is_comparison_only(nv_config, nv_states):
    res = butterfly(nv_config, nv_states[1], Mode.WRITE)
    assert res.comparison_only
    assert res.to_dict()["comparison_only"] is True


def test_programming_schemes(nv_config):
    curves = programming_scheme_curves(nv_config.pu_params, nv_config.t_program)
    assert curves["gate-drain"].meta["mw"] < curves["gate"].meta["mw"]
    assert abs(curves["gate"].meta["i_vgs0"]) < 1e-9
    assert abs(curves["gate-drain"].meta["i_vgs0"]) < 1e-9


def test_emitters_write_files(tmp_path, nv_config, nv_states):
    files = analysis.emit_fig10(KIN, tmp_path)
    rows = list(csv.DictReader(open(files[0])))
    row4 = [r for r in rows if float(r["amplitude_volts"]) == 4.0][0]
    assert float(row4["width_seconds"]) == pytest.approx(1e-8, rel=1e-8)
    files += analysis.emit_fig3(nv_config, tmp_path)
    summary = json.loads((tmp_path / "fig3_summary.json").read_text())
    assert summary["mw_gate_drain_volts"] < summary["mw_gate_volts"]
    files += analysis.emit_fig7(butterfly(nv_config, nv_states[1]), tmp_path)
    assert json.loads((tmp_path / "fig7_summary.json").read_text())["monostable"] is True
    files += analysis.emit_fig9(run_silicon_protocol(nv_config, nv_states[1], targets=[0.5]), tmp_path)
    assert all(f.exists() for f in files)


def test_kinetics_cliff_between_one_and_two_volts():
    assert math.log10(disturb_projection(KIN, 1.0, 1000.0)) < -18
    assert disturb_projection(KIN, 2.0, 1000.0) > 0.99
