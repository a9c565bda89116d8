"""Metric extraction: butterfly curves and SNM, read latency, memory window,
halid boundary and disturb projections, plus CSV/JSON emitters per figure."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cellbench
from .cellbench import CellConfig, CellState, Report, StepTrace, _jsonable
from .device import (Curve, ExtractionError, FeFetParams, FeFetState, ProgramPulse, SweepProtocol,
                     apply_program_pulse,
                     SwitchingKinetics, fefet_current, idvg_sweep, memory_window,
                     switching_boundary_width)
from .engine import Circuit, Waveform, dc_sweep
from .units import format_number

__all__ = [
    "Mode", "StablePoint", "ButterflyResult", "LatencyReport", "ExtractionError",
    "butterfly", "snm_from_vtcs", "fixed_points", "read_latency", "emit_halid",
    "disturb_projection", "programming_scheme_curves", "emit_fig3", "emit_fig5",
    "emit_fig7", "emit_fig9", "emit_fig10", "write_curve_csv",
]


# --- read latency ----------------------------------------------------------


@dataclass
class LatencyReport:
    latency: float
    threshold: float
    t_wl: float
    t_cross: float
    waveform: Optional[Waveform] = None


def _crossing(t: np.ndarray, y: np.ndarray, level: float, start: int = 0) -> float:
    """Linear-interpolated first upward crossing of ``level`` at or after index ``start``."""
    if y[start] >= level:
        return float(t[start])
    for i in range(start + 1, len(t)):
        if y[i] >= level:
            y0, y1 = y[i - 1], y[i]
            return float(t[i - 1] + (level - y0) / (y1 - y0) * (t[i] - t[i - 1]))
    raise ExtractionError(f"signal never reaches {level:g}")


def read_latency(waveform: Waveform, threshold: float = 0.1,
                 vdd: Optional[float] = None) -> LatencyReport:
    """Time from the wordline's 50 % crossing to |BL - BLB| >= threshold."""
    t = waveform.times
    wl = waveform.v("wl")
    if vdd is None:
        vdd = float(np.max(wl))
    t_wl = _crossing(t, wl, 0.5 * vdd)
    if threshold <= 0:
        return LatencyReport(0.0, threshold, t_wl, t_wl, waveform)
    diff = np.abs(waveform.v("bl") - waveform.v("blb"))
    start = max(int(np.searchsorted(t, t_wl)) - 1, 0)
    try:
        t_cross = _crossing(t, diff, threshold, start)
    except ExtractionError:
        raise ExtractionError(f"bitline differential never reaches {threshold:g} V") from None
    return LatencyReport(t_cross - t_wl, threshold, t_wl, t_cross, waveform)


# --- kinetics ------------------------------------------------------------


def emit_halid(kinetics: SwitchingKinetics, amplitudes: Sequence[float], clamp: float = 1e12) -> Curve:
    """Switching-boundary width for both polarities of every amplitude.

    Widths above ``clamp`` are clipped and flagged in ``meta['clamped']``.
    """
    amps = []
    for a in amplitudes:
        if a == 0:
            raise ValueError("amplitudes must be nonzero")
        amps.extend([abs(a), -abs(a)])
    amps = np.array(sorted(set(amps)))
    widths = np.array([switching_boundary_width(kinetics, a) for a in amps])
    clamped = widths > clamp
    return Curve(amps, np.minimum(widths, clamp), "amplitude_volts", "width_seconds",
                 {"clamped": clamped, "raw": widths,
                  "branch": np.where(amps > 0, "HVT", "LVT")})


def disturb_projection(kinetics: SwitchingKinetics, bias: float, horizon: float) -> float:
    """Switched fraction after ``horizon`` seconds at constant ``bias``."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return 0.0
    tau = kinetics.tau(bias)
    return 0.0 if math.isinf(tau) else -math.expm1(-horizon / tau)


# --- butterfly -------------------------------------------------------------


class Mode(enum.Enum):
    HOLD = "hold"
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class StablePoint:
    q: float
    qb: float
    loop_gain: float

    @property
    def stable(self) -> bool:
        return abs(self.loop_gain) < 1.0


@dataclass
class ButterflyResult:
    vtc_forward: Curve
    vtc_mirrored: Curve
    snm_lobes: dict
    points: list
    mode: Mode
    comparison_only: bool = False

    @property
    def stable_points(self) -> list:
        return [p for p in self.points if p.stable]

    @property
    def monostable(self) -> bool:
        return len(self.stable_points) == 1

    @property
    def snm(self) -> float:
        """Smallest lobe; zero when a lobe is missing."""
        return min(self.snm_lobes.values())

    def to_dict(self) -> dict:
        return _jsonable({
            "mode": self.mode.value, "snm_volts": self.snm_lobes, "snm_min_volts": self.snm,
            "monostable": self.monostable, "comparison_only": self.comparison_only,
            "points": [{"q": p.q, "qb": p.qb, "loop_gain": p.loop_gain, "stable": p.stable}
                       for p in self.points]})


def snm_from_vtcs(x1, y1, x2, y2) -> dict:
    """Largest axis-aligned square per lobe between ``y1 = f1(x1)`` and ``x2 = f2(y2)``.

    Opposite corners of an inscribed square lie on one 45-degree line
    ``x - y = w``, one on each curve, so the side equals half the gap in
    ``x + y`` between the curves at equal ``w``. Positive gaps form the lobe
    storing 0 (Q low), negative gaps the lobe storing 1.
    """
    x1, y1, x2, y2 = (np.asarray(a, dtype=float) for a in (x1, y1, x2, y2))
    wa, ua = x1 - y1, x1 + y1
    wb, ub = x2 - y2, x2 + y2
    oa, ob = np.argsort(wa), np.argsort(wb)
    wa, ua, wb, ub = wa[oa], ua[oa], wb[ob], ub[ob]
    lo, hi = max(wa[0], wb[0]), min(wa[-1], wb[-1])
    if lo >= hi:
        return {"zero": 0.0, "one": 0.0}
    grid = np.union1d(wa, wb)
    grid = grid[(grid >= lo) & (grid <= hi)]
    gap = np.interp(grid, wa, ua) - np.interp(grid, wb, ub)
    return {"zero": max(0.0, float(gap.max()) / 2.0), "one": max(0.0, float(-gap.min()) / 2.0)}


def fixed_points(q, f1, qb, f2) -> list:
    """Intersections of ``qb = f1(q)`` with ``q = f2(qb)`` and their loop gains."""
    q, f1, qb, f2 = (np.asarray(a, dtype=float) for a in (q, f1, qb, f2))
    g = np.interp(f1, qb, f2) - q
    d1 = np.gradient(f1, q)
    d2 = np.gradient(f2, qb)
    out = []
    for i in range(len(q) - 1):
        a, b = g[i], g[i + 1]
        if a == 0.0 or a * b < 0:
            frac = 0.0 if a == 0.0 else a / (a - b)
            qs = q[i] + frac * (q[i + 1] - q[i])
            qbs = float(np.interp(qs, q, f1))
            gain = float(np.interp(qs, q, d1) * np.interp(qbs, qb, d2))
            out.append(StablePoint(float(qs), qbs, gain))
    if g[-1] == 0.0:
        gain = float(d1[-1] * np.interp(f1[-1], qb, d2))
        out.append(StablePoint(float(q[-1]), float(f1[-1]), gain))
    return out


def _half_circuit(config: CellConfig, state: CellState, side: str, mode: Mode) -> Circuit:
    """One inverter of the latch with its access device; input node 'vin'."""
    vn = config.vdd_nominal
    c = Circuit(f"half {side}")
    c.add_vsource("vvdd", "vdd", "0", vn)
    c.add_vsource("vin_src", "vin", "0", 0.0)
    wl = 0.0 if mode is Mode.HOLD else vn
    c.add_vsource("vwl", "wl", "0", wl)
    # forward: input q drives m3/m2, output qb through m6 to blb
    pd, pu, pg = ("m3", "m2", "m6") if side == "forward" else ("m1", "m4", "m5")
    bitline = vn
    if mode is Mode.WRITE and side == "mirrored":
        bitline = 0.0  # bl pulled low to write 0 into q
    c.add_vsource("vbit", "bit", "0", bitline)
    c.add_mosfet(pd, "vin", "out", "0", config.pd_params)
    if config.is_nv:
        fe_state = state.m2_state if pu == "m2" else state.m4_state
        c.add_fefet(pu, "vin", "out", "vdd", config.pu_params, fe_state)
    else:
        c.add_mosfet(pu, "vin", "out", "vdd", config.pu_params)
    c.add_mosfet(pg, "wl", "bit", "out", config.pg_params)
    for name, params in config.overrides:
        if any(d.name == name for d in c.devices):
            c.device(name).params = params
    return c


def butterfly(config: CellConfig, state: CellState, mode: Mode = Mode.HOLD,
              step: float = 5e-3, margin: float = 0.1) -> ButterflyResult:
    """Break the loop, sweep each inverter, and extract fixed points and per-lobe SNM.

    Polarization stays frozen during the sweeps.
    """
    mode = Mode(mode)
    vn = config.vdd_nominal
    sweeps = {}
    for side in ("forward", "mirrored"):
        c = _half_circuit(config, state, side, mode)
        sw = dc_sweep(c, "vin_src", -margin, vn + margin, step, config.solver)
        sweeps[side] = (sw.values, sw.v("out"))
    q, f1 = sweeps["forward"]
    qb, f2 = sweeps["mirrored"]
    fwd = Curve(q, f1, "q_volts", "qb_volts")
    mir = Curve(f2, qb, "q_volts", "qb_volts")
    # the over-range tails exist for root finding only; they would form a spurious lobe
    ia = (q >= 0.0) & (q <= vn)
    ib = (qb >= 0.0) & (qb <= vn)
    lobes = snm_from_vtcs(q[ia], f1[ia], f2[ib], qb[ib])
    points = fixed_points(q, f1, qb, f2)
    return ButterflyResult(fwd, mir, lobes, points, mode,
                           comparison_only=mode is Mode.WRITE and config.is_nv)


# --- programming schemes -----------------------------------------------------


def programming_scheme_curves(params: FeFetParams, width: float, segments: int = 8,
                              i_crit: float = 1e-7, set_volts: float = -4.5,
                              reset_volts: float = 4.0, v_source: float = 0.8,
                              vds: float = -0.05) -> dict:
    """Id-Vg curves after LVT set, full-gate HVT reset and gate-drain HVT reset.

    The sweep runs from +1 V down to -1.5 V on the gate with the source at
    ``v_source`` and the drain ``vds`` below it.
    """
    proto = dict(start=1.0, stop=-1.5, step=-0.05, vds=vds, vs=v_source)
    lvt0, hvt0 = FeFetState.lvt(segments), FeFetState.hvt(segments)
    schemes = {
        "lvt": (hvt0, ProgramPulse(set_volts, 0.0, 0.0, width)),
        "gate": (lvt0, ProgramPulse(reset_volts, 0.0, 0.0, width)),
        "gate-drain": (lvt0, ProgramPulse(reset_volts, reset_volts, 0.0, width)),
    }
    out = {}
    for name, (start, pulse) in schemes.items():
        curve, _ = idvg_sweep(params, start, SweepProtocol(pulses=(pulse,), **proto))
        # state right after programming, before the sweep disturbs it
        programmed = apply_program_pulse(start, params, pulse)
        curve.meta.update({"state": programmed,
                           "i_vgs0": fefet_current(programmed, params, v_source, v_source + vds, v_source)})
        out[name] = curve
    for name in ("gate", "gate-drain"):
        out[name].meta["mw"] = memory_window(out["lvt"], out[name], i_crit)
    return out


# --- emitters --------------------------------------------------------------


def write_curve_csv(path, columns: dict) -> None:
    """Columns of equal length; floats at 9 significant digits."""
    names = list(columns)
    n = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            row = []
            for name in names:
                v = columns[name][i]
                if isinstance(v, (bool, np.bool_)):
                    row.append("1" if v else "0")
                elif isinstance(v, str):
                    row.append(v)
                else:
                    row.append(format_number(float(v)))
            w.writerow(row)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def emit_fig3(config: CellConfig, out_dir, i_crit: float = 1e-7) -> list:
    """Memory window of full-gate versus gate-drain programming."""
    out_dir = Path(out_dir)
    curves = programming_scheme_curves(config.pu_params, config.t_program, i_crit=i_crit)
    files = [out_dir / "fig3_idvg.csv", out_dir / "fig3_summary.json"]
    cols = {"vg_volts": curves["lvt"].x}
    for name, c in curves.items():
        cols[f"id_{name}_amperes"] = c.y
    write_curve_csv(files[0], cols)
    _write_json(files[1], {
        "mw_gate_volts": curves["gate"].meta["mw"],
        "mw_gate_drain_volts": curves["gate-drain"].meta["mw"],
        "i_at_vgs0_gate_amperes": curves["gate"].meta["i_vgs0"],
        "i_at_vgs0_gate_drain_amperes": curves["gate-drain"].meta["i_vgs0"],
        "i_crit_amperes": i_crit})
    return files


def emit_fig5(config: CellConfig, out_dir) -> list:
    """Id-Vg of both pull-ups after writing 0 then 1 (the devices swap roles)."""
    out_dir = Path(out_dir)
    params = config.pu_params
    proto = SweepProtocol(1.0, -1.5, -0.05, vds=-0.05, vs=0.8)
    s0 = cellbench.programmed_state(config, 0)
    s1, _ = cellbench.run_write(config, s0, 1)
    cols = {}
    for tag, st in (("after_write0", s0), ("after_write1", s1)):
        for dev in ("m2", "m4"):
            curve, _ = idvg_sweep(params, getattr(st, f"{dev}_state"), proto)
            cols.setdefault("vg_volts", curve.x)
            cols[f"id_{dev}_{tag}_amperes"] = curve.y
    path = out_dir / "fig5_idvg_sequence.csv"
    write_curve_csv(path, cols)
    return [path]


def emit_fig7(result: ButterflyResult, out_dir, stem: str = "fig7") -> list:
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}_butterfly.csv"
    n = len(result.vtc_forward.x)
    write_curve_csv(csv_path, {
        "sweep_volts": result.vtc_forward.x, "forward_qb_volts": result.vtc_forward.y,
        "mirrored_q_volts": result.vtc_mirrored.x[:n], "mirrored_qb_volts": result.vtc_mirrored.y[:n]})
    json_path = out_dir / f"{stem}_summary.json"
    _write_json(json_path, result.to_dict())
    return [csv_path, json_path]


def emit_fig9(trace: StepTrace, out_dir, stem: str = "fig9") -> list:
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{stem}_steps.csv"
    trace.to_csv(csv_path)
    json_path = out_dir / f"{stem}_readouts.json"
    _write_json(json_path, {"correct": trace.correct_count, "total": len(trace.readouts),
                            "readouts": trace.readouts})
    return [csv_path, json_path]


def emit_fig10(kinetics: SwitchingKinetics, out_dir, amplitudes: Optional[Sequence[float]] = None,
               clamp: float = 1e12) -> list:
    out_dir = Path(out_dir)
    if amplitudes is None:
        amplitudes = np.round(np.arange(1.0, 5.0001, 0.25), 6)
    curve = emit_halid(kinetics, amplitudes, clamp)
    path = out_dir / "fig10_halid.csv"
    write_curve_csv(path, {"amplitude_volts": curve.x, "width_seconds": curve.y,
                           "branch": list(curve.meta["branch"]), "clamped": curve.meta["clamped"]})
    return [path]
