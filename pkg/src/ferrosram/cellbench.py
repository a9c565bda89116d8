"""6T SRAM and 6T nvSRAM cells with executable bias schedules.

Node names: q, qb, bl, blb, wl, vdd. Devices: m1/m3 pull-downs, m2/m4
pull-ups (p-FeFETs in the nvSRAM), m5/m6 access transistors.
"""

from __future__ import annotations

import enum
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .config import Config, load_config
from .device import (FeFetParams, FeFetState, MosfetParams, Polarity, calibrate_drive,
                     calibrate_kinetics, fefet_conduction_vth, fefet_current, segment_positions,
                     step_polarization)
from .engine import (Circuit, SimulationError, SolverConfig, SourceWaveform, Waveform,
                     dc_operating_point, transient)
from .units import format_number

RAILS = ("vdd", "wl", "bl", "blb")
LOGIC_FRACTION = 0.8
MIN_RAMP = 10e-12


class Topology(enum.Enum):
    BASELINE = "baseline"
    NVSRAM = "nvsram"


class Logic(enum.Enum):
    ONE = 1
    ZERO = 0
    INVALID = -1

    @property
    def bit(self) -> Optional[int]:
        return None if self is Logic.INVALID else self.value


class ReadFailure(SimulationError):
    pass


@dataclass(frozen=True)
class CellTiming:
    edge: float = 1e-9
    dt_edge: float = 100e-12
    program_dt: float = 500e-9
    read_edge: float = 10e-12
    read_dt: float = 1e-12
    read_window: float = 200e-12
    read_threshold: float = 0.1
    read_timeout: float = 10e-9
    settle: float = 100e-12
    power_off_ramp: float = 1e-9
    power_off_hold: float = 10e-9
    hold_dt: float = 500e-12
    restore_ramp: float = 1e-6
    restore_dt: float = 5e-9
    restore_hold: float = 100e-9
    two_phase_precharge: float = 10e-9


@dataclass(frozen=True)
class ProtocolConfig:
    vdd_step: float = 0.1
    i_bias: float = 1e-6
    wl_on: float = 2.0
    compliance: float = -0.2
    compliance_soft: float = 0.02
    repetitions: int = 2
    targets: tuple = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CellConfig:
    topology: Topology
    pd_params: MosfetParams
    pg_params: MosfetParams
    pu_params: Union[MosfetParams, FeFetParams]
    c_bitline: float = 17e-15
    c_node: float = 0.1e-15
    vdd_nominal: float = 1.0
    vdd_program: float = 4.0
    t_program: float = 4e-6
    segments: int = 4
    timing: CellTiming = field(default_factory=CellTiming)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    # (device name, params) pairs replacing the nominal parameters, e.g. Monte Carlo draws
    overrides: tuple = ()

    def __post_init__(self):
        if not (self.c_bitline > 0 and self.c_node > 0):
            raise ValueError("capacitances must be > 0")
        if not self.vdd_program > self.vdd_nominal > 0:
            raise ValueError("need vdd_program > vdd_nominal > 0")
        if self.t_program <= 0:
            raise ValueError("t_program must be > 0")
        is_fe = isinstance(self.pu_params, FeFetParams)
        if is_fe != (self.topology is Topology.NVSRAM):
            raise ValueError("nvSRAM needs FeFetParams pull-ups, baseline needs MosfetParams")

    @property
    def is_nv(self) -> bool:
        return self.topology is Topology.NVSRAM

    @classmethod
    def from_config(cls, cfg: Optional[Config] = None,
                    topology: Union[Topology, str] = Topology.NVSRAM) -> "CellConfig":
        cfg = cfg or load_config()
        topology = Topology(topology)
        pg = _calibrated(cfg, "nmos", Polarity.N)
        pg, pd = calibrate_read_current(pg, cfg.float("nmos", "cell_ratio"),
                                        cfg.float("nmos", "read_current"), cfg.float("cell", "vdd_nominal"))
        if topology is Topology.NVSRAM:
            kin = calibrate_kinetics((cfg.float("kinetics", "anchor1_volts"), cfg.float("kinetics", "anchor1_width")),
                                     (cfg.float("kinetics", "anchor2_volts"), cfg.float("kinetics", "anchor2_width")))
            mw = cfg.float("pfefet", "mw")
            vth0 = cfg.float("pfefet", "vth0")
            # calibrate the drive in the LVT state, then restore the window centre
            lvt = _calibrated(cfg, "pfefet", Polarity.P, vth_override=vth0 + mw / 2.0)
            pu = FeFetParams(replace(lvt, vth0=vth0), mw, kin)
        else:
            pu = _calibrated(cfg, "pmos", Polarity.P)
        c = "cell"
        timing = CellTiming(**{f.name: cfg.float(c, f.name) for f in CellTiming.__dataclass_fields__.values()})
        p = "protocol"
        protocol = ProtocolConfig(
            vdd_step=cfg.float(p, "vdd_step"), i_bias=cfg.float(p, "i_bias"), wl_on=cfg.float(p, "wl_on"),
            compliance=cfg.float(p, "compliance"), compliance_soft=cfg.float(p, "compliance_soft"),
            repetitions=cfg.int(p, "repetitions"), targets=tuple(cfg.floats(p, "targets")))
        return cls(topology=topology, pd_params=pd, pg_params=pg, pu_params=pu,
                   c_bitline=cfg.float(c, "c_bitline"), c_node=cfg.float(c, "c_node"),
                   vdd_nominal=cfg.float(c, "vdd_nominal"), vdd_program=cfg.float(c, "vdd_program"),
                   t_program=cfg.float(c, "t_program"), segments=cfg.int("pfefet", "segments"),
                   timing=timing, protocol=protocol, solver=SolverConfig.from_config(cfg))


def read_stack_current(pg: MosfetParams, pd: MosfetParams, vdd: float) -> float:
    """Current drawn from a bitline at ``vdd`` through access plus pull-down, WL on, Q at 0."""
    c = Circuit("read stack")
    c.add_vsource("vbl", "bl", "0", vdd)
    c.add_vsource("vwl", "wl", "0", vdd)
    c.add_vsource("vqb", "qb", "0", vdd)
    c.add_mosfet("m5", "wl", "bl", "q", pg)
    c.add_mosfet("m1", "qb", "q", "0", pd)
    return abs(dc_operating_point(c).i("vbl"))


def calibrate_read_current(pg: MosfetParams, cell_ratio: float, target: float,
                           vdd: float) -> tuple:
    """Scale access and pull-down together so the read stack sinks ``target``.

    Both currents are linear in a shared kprime factor at fixed ratio, so one
    rescale is exact.
    """
    pd = replace(pg, kprime=pg.kprime * cell_ratio)
    factor = target / read_stack_current(pg, pd, vdd)
    return replace(pg, kprime=pg.kprime * factor), replace(pd, kprime=pd.kprime * factor)


def _calibrated(cfg: Config, section: str, polarity: Polarity, vth_override=None) -> MosfetParams:
    template = MosfetParams(polarity, cfg.float(section, "vth0") if vth_override is None else vth_override,
                            1e-4, cfg.float(section, "n_sub"), cfg.float(section, "lambda"))
    return calibrate_drive(cfg.float(section, "drive_current"), cfg.float(section, "drive_vgs"),
                           cfg.float(section, "drive_vds"), template)


@dataclass(frozen=True)
class CellState:
    q: float
    qb: float
    vdd: float
    m2_state: Optional[FeFetState] = None
    m4_state: Optional[FeFetState] = None

    @property
    def logic(self) -> Logic:
        if self.vdd <= 0:
            return Logic.INVALID
        if self.q - self.qb > LOGIC_FRACTION * self.vdd:
            return Logic.ONE
        if self.qb - self.q > LOGIC_FRACTION * self.vdd:
            return Logic.ZERO
        return Logic.INVALID

    def to_dict(self) -> dict:
        out = {"q": self.q, "qb": self.qb, "vdd": self.vdd, "logic": self.logic.name}
        if self.m2_state is not None:
            out["m2_segments"] = list(self.m2_state.segments)
            out["m4_segments"] = list(self.m4_state.segments)
        return out


def fresh_state(config: CellConfig, bit: int = 0) -> CellState:
    """Latched cell at nominal supply; FeFETs in the factory-reset HVT state."""
    vn = config.vdd_nominal
    q, qb = (vn, 0.0) if bit else (0.0, vn)
    if not config.is_nv:
        return CellState(q, qb, vn)
    hvt = FeFetState.hvt(config.segments)
    return CellState(q, qb, vn, hvt, hvt)


def programmed_state(config: CellConfig, bit: int) -> CellState:
    """Cell that stored the opposite bit before ``bit`` was written."""
    state, _ = run_write(config, fresh_state(config, bit), 1 - bit)
    state, _ = run_write(config, state, bit)
    return state


def stored_bit(config: CellConfig, state: CellState) -> Optional[int]:
    """Bit encoded by the polarization: the more conductive pull-up drives its node high."""
    if not config.is_nv:
        return None
    v2 = fefet_conduction_vth(state.m2_state, config.pu_params)
    v4 = fefet_conduction_vth(state.m4_state, config.pu_params)
    if abs(v2 - v4) < 1e-3 * config.pu_params.mw:
        return None
    # P devices: less negative threshold conducts more
    return 1 if v4 > v2 else 0


# --- schedules -----------------------------------------------------------


@dataclass(frozen=True)
class Phase:
    """Rails ramp linearly from their previous values to ``targets`` across ``duration``."""

    duration: float
    targets: dict
    dtmax: float
    label: str = ""


@dataclass(frozen=True)
class OperationSchedule:
    initial: dict
    phases: tuple

    def __post_init__(self):
        current = dict(self.initial)
        for ph in self.phases:
            if not ph.duration > 0:
                raise ValueError(f"phase '{ph.label}' needs a positive duration")
            if not ph.dtmax > 0:
                raise ValueError(f"phase '{ph.label}' needs a positive dtmax")
            for rail, value in ph.targets.items():
                if rail not in current:
                    raise ValueError(f"phase '{ph.label}' drives unknown rail {rail}")
                if value != current[rail] and ph.duration < MIN_RAMP:
                    raise ValueError(f"phase '{ph.label}' ramps {rail} faster than {MIN_RAMP:g} s")
                current[rail] = value

    @property
    def duration(self) -> float:
        return sum(ph.duration for ph in self.phases)

    def levels(self) -> list:
        """Rail values at every phase boundary, starting with ``initial``."""
        current = dict(self.initial)
        out = [dict(current)]
        for ph in self.phases:
            current.update(ph.targets)
            out.append(dict(current))
        return out

    def waveform(self, rail: str) -> SourceWaveform:
        times = np.concatenate([[0.0], np.cumsum([ph.duration for ph in self.phases])])
        return SourceWaveform.pwl(zip(times, (lv[rail] for lv in self.levels())))

    def final(self, rail: str) -> float:
        return self.levels()[-1][rail]

    def dtmax_at(self, t: float) -> float:
        end = 0.0
        for ph in self.phases:
            end += ph.duration
            if t < end * (1 - 1e-12):
                return ph.dtmax
        return self.phases[-1].dtmax

    def phase_end(self, label: str) -> float:
        end = 0.0
        for ph in self.phases:
            end += ph.duration
            if ph.label == label:
                return end
        raise KeyError(label)


class _Builder:
    def __init__(self, initial: dict):
        self.initial = dict(initial)
        self.phases = []

    def add(self, label, duration, dtmax, **targets):
        self.phases.append(Phase(duration, targets, min(dtmax, duration), label))
        return self

    def build(self) -> OperationSchedule:
        return OperationSchedule(self.initial, tuple(self.phases))


# --- circuit construction ------------------------------------------------


def build_cell(config: CellConfig, state: Optional[CellState] = None,
               schedule: Optional[OperationSchedule] = None, floating_bitlines: bool = False,
               sinks: bool = False) -> Circuit:
    """Cell netlist with rail sources driven by ``schedule`` (DC at the state's supply otherwise).

    Floating bitlines carry only their capacitance (plus the optional
    compliance-limited current sinks) and start from ``.ic`` values.
    """
    state = state or fresh_state(config)
    c = Circuit(f"{config.topology.value} 6T cell")
    c.add_mosfet("m1", "qb", "q", "0", config.pd_params)
    c.add_mosfet("m3", "q", "qb", "0", config.pd_params)
    if config.is_nv:
        c.add_fefet("m2", "q", "qb", "vdd", config.pu_params, state.m2_state)
        c.add_fefet("m4", "qb", "q", "vdd", config.pu_params, state.m4_state)
    else:
        c.add_mosfet("m2", "q", "qb", "vdd", config.pu_params)
        c.add_mosfet("m4", "qb", "q", "vdd", config.pu_params)
    c.add_mosfet("m5", "wl", "bl", "q", config.pg_params)
    c.add_mosfet("m6", "wl", "blb", "qb", config.pg_params)
    c.add_capacitor("cq", "q", "0", config.c_node)
    c.add_capacitor("cqb", "qb", "0", config.c_node)
    c.add_capacitor("cbl", "bl", "0", config.c_bitline)
    c.add_capacitor("cblb", "blb", "0", config.c_bitline)
    rails = ("vdd", "wl") if floating_bitlines else RAILS
    for rail in rails:
        wave = schedule.waveform(rail) if schedule else SourceWaveform.dc(
            state.vdd if rail == "vdd" else 0.0)
        c.add_vsource(f"v{rail}", rail, "0", wave)
    if sinks:
        p = config.protocol
        c.add_sink("ibl", "bl", p.i_bias, p.compliance, p.compliance_soft)
        c.add_sink("iblb", "blb", p.i_bias, p.compliance, p.compliance_soft)
    for name, params in config.overrides:
        c.device(name).params = params
    c.ic = {"q": state.q, "qb": state.qb}
    return c


def _state_from(circuit: Circuit, config: CellConfig, q: float, qb: float, vdd: float) -> CellState:
    if config.is_nv:
        return CellState(q, qb, vdd, circuit.device("m2").state, circuit.device("m4").state)
    return CellState(q, qb, vdd)


def _simulate(config: CellConfig, state: CellState, schedule: OperationSchedule,
              floating_bitlines=False, bitline_ic: Optional[dict] = None):
    circuit = build_cell(config, state, schedule, floating_bitlines)
    if bitline_ic:
        circuit.ic.update(bitline_ic)
    wave = transient(circuit, schedule.duration, config.solver, dtmax_fn=schedule.dtmax_at)
    new = _state_from(circuit, config, wave.final("q"), wave.final("qb"), schedule.final("vdd"))
    return circuit, wave, new


def _max_delta(before: CellState, after: CellState) -> float:
    if before.m2_state is None:
        return 0.0
    return max(before.m2_state.max_delta(after.m2_state), before.m4_state.max_delta(after.m4_state))


# --- reports -------------------------------------------------------------


@dataclass
class Report:
    scenario: str
    metrics: dict = field(default_factory=dict)
    assertions: dict = field(default_factory=dict)
    waveform: Optional[Waveform] = None

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def failing(self) -> list:
        return [name for name, ok in self.assertions.items() if not ok]

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "passed": self.passed,
                "assertions": dict(self.assertions), "metrics": _jsonable(self.metrics)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    """Fixed 9-significant-digit floats so reports are byte-stable."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(format_number(v)) if math.isfinite(v) else str(v)
    if isinstance(obj, enum.Enum):
        return obj.name
    return obj


# --- operations ----------------------------------------------------------


def write_schedule(config: CellConfig, state: CellState, bit: int) -> OperationSchedule:
    t = config.timing
    vn = config.vdd_nominal
    b = _Builder({"vdd": state.vdd, "wl": 0.0, "bl": 0.0, "blb": 0.0})
    if config.is_nv:
        vp = config.vdd_program
        # flip the latch at nominal supply with the boosted wordline, then program at 4 V
        b.add("flip", t.edge, t.dt_edge, wl=vp, bl=vn if bit else 0.0, blb=0.0 if bit else vn)
        b.add("raise", t.edge, t.dt_edge, vdd=vp, bl=vp if bit else 0.0, blb=0.0 if bit else vp)
        b.add("program", config.t_program, t.program_dt)
    else:
        b.add("raise", t.edge, t.dt_edge, vdd=vn, wl=vn, bl=vn if bit else 0.0, blb=0.0 if bit else vn)
        b.add("program", t.edge, t.dt_edge)
    b.add("release_wl", t.edge, t.dt_edge, wl=0.0)
    b.add("lower_vdd", t.edge, t.dt_edge, vdd=vn)
    b.add("release_bitlines", t.edge, t.dt_edge, bl=0.0, blb=0.0)
    return b.build()


def run_write(config: CellConfig, state: CellState, bit: int, keep_waveform=False):
    """Program ``bit``: 4 V supply, wordline and data bitline for t_program, then back to nominal."""
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    sched = write_schedule(config, state, bit)
    circuit, wave, new = _simulate(config, state, sched)
    rep = Report("write", {"data": bit, "before": state.to_dict(), "after": new.to_dict()})
    rep.assertions["logic_matches_data"] = new.logic.bit == bit
    if config.is_nv:
        lvt_dev, hvt_dev = ("m4", "m2") if bit else ("m2", "m4")
        lvt_state = getattr(new, f"{lvt_dev}_state")
        hvt_state = getattr(new, f"{hvt_dev}_state")
        rep.metrics.update({
            "m2_mean": new.m2_state.mean, "m4_mean": new.m4_state.mean,
            "m2_vth": fefet_conduction_vth(new.m2_state, config.pu_params),
            "m4_vth": fefet_conduction_vth(new.m4_state, config.pu_params),
            "max_delta_p": _max_delta(state, new),
        })
        rep.assertions["lvt_device_saturated"] = lvt_state.mean >= 0.95
        rep.assertions["hvt_device_switched"] = min(hvt_state.segments) < 0.0
        rep.assertions["stored_bit_matches"] = stored_bit(config, new) == bit
    if keep_waveform:
        rep.waveform = wave
    return new, rep


def run_power_off(config: CellConfig, state: CellState, keep_waveform=False, equilibrate=True):
    """Ramp VDD to 0 and hold. Node checks use the end of the simulated window.

    With ``equilibrate`` the returned state is the unpowered DC equilibrium,
    i.e. what remains after an arbitrarily long off period; otherwise it is
    the end of the window, residual node charge included.
    """
    t = config.timing
    sched = _Builder({"vdd": state.vdd, "wl": 0.0, "bl": 0.0, "blb": 0.0}) \
        .add("ramp_down", t.power_off_ramp, t.dt_edge, vdd=0.0) \
        .add("off", t.power_off_hold, t.hold_dt).build()
    circuit, wave, new = _simulate(config, state, sched)
    window_end = new
    if equilibrate:
        op = dc_operating_point(circuit, config.solver, initial_guess=wave.final_x,
                                t=sched.duration, ic={})
        new = replace(new, q=op.v("q"), qb=op.v("qb"))
    rep = Report("power_off", {"before": state.to_dict(), "after": new.to_dict(),
                               "max_node_volts": max(abs(window_end.q), abs(window_end.qb)),
                               "max_delta_p": _max_delta(state, new)})
    rep.assertions["nodes_collapsed"] = rep.metrics["max_node_volts"] < 0.05
    if config.is_nv:
        rep.assertions["polarization_preserved"] = _max_delta(state, new) < 1e-6
    if keep_waveform:
        rep.waveform = wave
    return new, rep


def _restore_report(name, config, before, new, wave, keep):
    expect = stored_bit(config, before)
    rep = Report(name, {"before": before.to_dict(), "after": new.to_dict(),
                        "expected": expect, "logic": new.logic.name,
                        "max_delta_p": _max_delta(before, new)})
    rep.assertions["restored_correctly"] = expect is not None and new.logic.bit == expect
    if keep:
        rep.waveform = wave
    return rep


def run_restore_one_step(config: CellConfig, state: CellState, target_vdd: Optional[float] = None,
                         ramp_time: Optional[float] = None, keep_waveform=False):
    """Ramp VDD from 0 to ``target_vdd`` with WL low and let the latch settle."""
    t = config.timing
    target = config.vdd_nominal if target_vdd is None else target_vdd
    ramp = t.restore_ramp if ramp_time is None else ramp_time
    b = _Builder({"vdd": 0.0, "wl": 0.0, "bl": 0.0, "blb": 0.0})
    b.add("ramp_up", ramp, min(t.restore_dt, ramp / 10.0), vdd=target)
    b.add("hold", t.restore_hold, t.restore_hold / 10.0)
    circuit, wave, new = _simulate(config, replace(state, vdd=0.0), b.build())
    return new, _restore_report("restore_one_step", config, state, new, wave, keep_waveform)


def run_restore_two_phase(config: CellConfig, state: CellState, target_vdd: Optional[float] = None,
                          ramp_time: Optional[float] = None, keep_waveform=False):
    """Clear Q/QB through the access devices with both bitlines at 0 V, then ramp VDD."""
    t = config.timing
    target = config.vdd_nominal if target_vdd is None else target_vdd
    ramp = t.restore_ramp if ramp_time is None else ramp_time
    vn = config.vdd_nominal
    b = _Builder({"vdd": 0.0, "wl": 0.0, "bl": 0.0, "blb": 0.0})
    b.add("wl_on", t.edge, t.dt_edge, wl=vn)
    b.add("clear", t.two_phase_precharge, t.hold_dt)
    b.add("wl_off", t.edge, t.dt_edge, wl=0.0)
    b.add("ramp_up", ramp, min(t.restore_dt, ramp / 10.0), vdd=target)
    b.add("hold", t.restore_hold, t.restore_hold / 10.0)
    circuit, wave, new = _simulate(config, replace(state, vdd=0.0), b.build())
    return new, _restore_report("restore_two_phase", config, state, new, wave, keep_waveform)


def find_mislatch_offset(config: CellConfig, state: CellState, target_vdd: Optional[float] = None,
                         ramp_time: Optional[float] = None, hi: Optional[float] = None,
                         resolution: float = 0.01) -> Optional[float]:
    """Smallest residual voltage on the wrong node that defeats one-step restore.

    The residual sits on the node that should end low. Returns None when even
    ``hi`` restores correctly.
    """
    bit = stored_bit(config, state)
    if bit is None:
        raise ValueError("cell holds no complementary polarization")
    hi = config.vdd_nominal if hi is None else hi

    def fails(offset):
        start = replace(state, q=0.0 if bit else offset, qb=offset if bit else 0.0, vdd=0.0)
        new, _ = run_restore_one_step(config, start, target_vdd, ramp_time)
        return new.logic.bit != bit

    if not fails(hi):
        return None
    lo = 0.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if fails(mid):
            hi = mid
        else:
            lo = mid
    return hi


def ramp_rate_sweep(config: CellConfig, state: CellState, ramp_times: Sequence[float],
                    target_vdd: Optional[float] = None) -> list:
    """One-step restore outcome per ramp time, to chart the speed limit."""
    out = []
    for ramp in ramp_times:
        new, rep = run_restore_one_step(config, state, target_vdd, ramp)
        out.append({"ramp_time": ramp, "logic": new.logic.name,
                    "correct": rep.assertions["restored_correctly"]})
    return out


def run_read(config: CellConfig, state: CellState, keep_waveform=False, window: Optional[float] = None):
    """Assert WL on precharged floating bitlines; latency to a 100 mV differential."""
    from . import analysis

    t = config.timing
    vn = config.vdd_nominal
    window = t.read_window if window is None else window
    dt = t.read_dt if window <= t.read_window else 10 * t.read_dt
    b = _Builder({"vdd": state.vdd, "wl": 0.0})
    b.add("wl_on", t.read_edge, t.read_dt, wl=vn)
    b.add("sense", window, dt)
    b.add("wl_off", t.read_edge, t.read_dt, wl=0.0)
    b.add("settle", t.settle, 5 * t.read_dt)
    circuit, wave, new = _simulate(config, state, b.build(), floating_bitlines=True,
                                   bitline_ic={"bl": vn, "blb": vn})
    try:
        lat = analysis.read_latency(wave, t.read_threshold, vn)
    except analysis.ExtractionError:
        if window < t.read_timeout:
            return run_read(config, state, keep_waveform, window=t.read_timeout)
        raise ReadFailure(f"bitline differential never reached {t.read_threshold:g} V "
                          f"within {t.read_timeout:g} s") from None
    k = int(np.searchsorted(wave.times, lat.t_cross))
    value = 1 if wave.v("bl")[k] > wave.v("blb")[k] else 0
    after = replace(new, vdd=state.vdd)
    disturb = _max_delta(state, new)
    rep = Report("read", {"latency": lat.latency, "value": value, "before": state.to_dict(),
                          "after": after.to_dict(), "max_delta_p": disturb})
    rep.assertions["value_matches_logic"] = value == state.logic.bit
    rep.assertions["non_destructive"] = after.logic is state.logic
    if config.is_nv:
        rep.assertions["polarization_undisturbed"] = disturb < 1e-6
    if keep_waveform:
        rep.waveform = wave
    return lat.latency, value, rep


def _roles(config: CellConfig, state: CellState) -> dict:
    """Target polarization each FeFET should hold for the stored bit."""
    bit = stored_bit(config, state)
    if bit is None:
        return {}
    return {"m4": 1.0 if bit else -1.0, "m2": -1.0 if bit else 1.0}


def run_hold_disturb(config: CellConfig, state: CellState, duration: float,
                     vdd: Optional[float] = None):
    """Quasi-static hold: one polarization update with the DC terminal voltages.

    Opposing exposure counts segments whose field drives them away from the
    stored role; reinforcing exposure is reported separately.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if not config.is_nv:
        raise ValueError("hold disturb needs an nvSRAM cell")
    vdd = state.vdd if vdd is None else vdd
    scale = vdd / state.vdd if state.vdd > 0 else 1.0
    circuit = build_cell(config, replace(state, vdd=vdd))
    op = dc_operating_point(circuit, config.solver, initial_guess={
        "q": state.q * scale, "qb": state.qb * scale, "vdd": vdd}, ic={})
    roles = _roles(config, state)
    kin = config.pu_params.kinetics
    field_sign = -1.0  # P device: positive gate field drives toward HVT
    opposing = reinforcing = 0.0
    new_states = {}
    for name in ("m2", "m4"):
        dev = circuit.device(name)
        vg, vd, vs = op.v(dev_node(circuit, dev.g)), op.v(dev_node(circuit, dev.d)), op.v(dev_node(circuit, dev.s))
        new_states[name] = step_polarization(dev.state, dev.params, vg, vd, vs, duration)
        for x in segment_positions(dev.state.segment_count):
            v_fe = vg - ((1.0 - x) * vs + x * vd)
            if v_fe == 0.0 or duration == 0.0:
                continue
            target = field_sign * math.copysign(1.0, v_fe)
            exposure = -math.expm1(-duration / kin.tau(v_fe))
            if roles and target != roles[name]:
                opposing = max(opposing, exposure)
            else:
                reinforcing = max(reinforcing, exposure)
    new = CellState(op.v("q"), op.v("qb"), vdd, new_states["m2"], new_states["m4"])
    from .analysis import disturb_projection
    rep = Report("hold_disturb", {
        "duration": duration, "vdd": vdd, "max_delta_p": _max_delta(state, new),
        "opposing_fraction": opposing, "reinforcing_fraction": reinforcing,
        "opposing_bound": disturb_projection(kin, vdd, duration)})
    rep.assertions["stored_bit_kept"] = stored_bit(config, new) == stored_bit(config, state)
    return new, rep


def dev_node(circuit: Circuit, index: int) -> str:
    return "0" if index < 0 else circuit.node_names[index]


# --- silicon measurement protocol ----------------------------------------


@dataclass
class StepTrace:
    """Step-indexed (not time-indexed) sequence of DC operating points."""

    rows: list = field(default_factory=list)
    readouts: list = field(default_factory=list)

    COLUMNS = ("step", "target", "repetition", "phase", "vdd", "wl", "q", "qb", "bl", "blb")

    @property
    def correct_count(self) -> int:
        return sum(1 for r in self.readouts if r["correct"])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join(r[c] if isinstance(r[c], str) else format_number(r[c])
                                  for c in self.COLUMNS) + "\n")


def run_silicon_protocol(config: CellConfig, state: CellState, targets: Optional[Sequence[float]] = None,
                         i_bias: Optional[float] = None) -> StepTrace:
    """Stepped supply restore with 1 uA bitline sinks, read out through the access devices."""
    p = config.protocol
    if i_bias is not None:
        config = replace(config, protocol=replace(p, i_bias=i_bias))
        p = config.protocol
    targets = p.targets if targets is None else tuple(targets)
    expect = stored_bit(config, state)
    circuit = build_cell(config, replace(state, vdd=0.0, q=0.0, qb=0.0), floating_bitlines=True, sinks=True)
    trace = StepTrace()
    x = None
    step = 0

    def solve(target, rep, phase, vdd, wl):
        nonlocal x, step
        circuit.set_source("vvdd", vdd)
        circuit.set_source("vwl", wl)
        try:
            op = dc_operating_point(circuit, config.solver, initial_guess=x, ic={})
        except SimulationError as exc:
            raise SimulationError(f"protocol step {step}: {exc}") from None
        x = op.x
        row = {"step": step, "target": target, "repetition": rep, "phase": phase, "vdd": vdd, "wl": wl,
               **{n: op.v(n) for n in ("q", "qb", "bl", "blb")}}
        trace.rows.append(row)
        step += 1
        return row

    for target in targets:
        n_steps = int(math.floor(target / p.vdd_step + 1e-9))
        ladder = [k * p.vdd_step for k in range(n_steps + 1)]
        if target - ladder[-1] > 1e-12:
            ladder.append(target)
        for rep in range(p.repetitions):
            for v in ladder:
                solve(target, rep, "ramp", v, 0.0)
            held = solve(target, rep, "hold", target, 0.0)
            on = solve(target, rep, "wl_on", target, p.wl_on)
            solve(target, rep, "wl_off", target, 0.0)
            solve(target, rep, "power_off", 0.0, 0.0)
            latched = CellState(held["q"], held["qb"], target).logic.bit
            value = 1 if on["bl"] > on["blb"] else 0
            high = on["bl"] if expect == 1 else on["blb"]
            trace.readouts.append({
                "target": target, "repetition": rep, "bl": on["bl"], "blb": on["blb"],
                "latched": latched, "value": value,
                "correct": expect is not None and latched == expect and value == expect,
                "weak": high < LOGIC_FRACTION * target})
    return trace


# --- Monte Carlo -----------------------------------------------------------


def perturb(config: CellConfig, rng: np.random.Generator, sigma_vth: float,
            sigma_mw_rel: float) -> tuple:
    """Per-transistor parameter draws. Thresholds are clipped at zero so each
    device keeps its polarity."""

    def vth(params: MosfetParams) -> MosfetParams:
        v = params.vth0 + rng.normal(0.0, sigma_vth) if sigma_vth > 0 else params.vth0
        v = max(v, 0.0) if params.polarity is Polarity.N else min(v, 0.0)
        return replace(params, vth0=v)

    names = ("m1", "m2", "m3", "m4", "m5", "m6")
    out = {}
    for name in names:
        if name in ("m1", "m3"):
            out[name] = vth(config.pd_params)
        elif name in ("m5", "m6"):
            out[name] = vth(config.pg_params)
        elif config.is_nv:
            pu = config.pu_params
            mw = pu.mw * (1.0 + rng.normal(0.0, sigma_mw_rel)) if sigma_mw_rel > 0 else pu.mw
            out[name] = replace(pu, base=vth(pu.base), mw=max(mw, 1e-3))
        else:
            out[name] = vth(config.pu_params)
    return out


@dataclass
class MonteCarloResult:
    sigma_vth: float
    sigma_mw_rel: float
    seed: int
    runs: list

    @property
    def yield_fraction(self) -> float:
        return sum(r["correct"] for r in self.runs) / len(self.runs)

    def to_dict(self) -> dict:
        return _jsonable({"sigma_vth": self.sigma_vth, "sigma_mw_rel": self.sigma_mw_rel, "seed": self.seed,
                          "n_runs": len(self.runs), "yield": self.yield_fraction, "runs": self.runs})


def _mc_run(config: CellConfig, index: int, seq: np.random.SeedSequence, sigma_vth, sigma_mw_rel) -> dict:
    rng = np.random.default_rng(seq)
    params = perturb(config, rng, sigma_vth, sigma_mw_rel)
    bit = index % 2
    state = fresh_state(config, bit)
    cfg = replace(config, overrides=tuple(sorted(params.items())))
    state, _ = run_write(cfg, state, 1 - bit)
    state, _ = run_write(cfg, state, bit)
    state, _ = run_power_off(cfg, state)
    state, _ = run_restore_one_step(cfg, state)
    return {"run": index, "bit": bit, "logic": state.logic.name, "q": state.q, "qb": state.qb,
            "correct": state.logic.bit == bit}


def monte_carlo_restore(config: CellConfig, sigma_vth: float, n_runs: int, seed: int,
                        sigma_mw_rel: float = 0.05, workers: int = 1) -> MonteCarloResult:
    """Write, power off and one-step restore ``n_runs`` perturbed cells.

    Run ``i`` draws from child ``i`` of ``SeedSequence(seed)``, so results do
    not depend on ``workers``. Even runs store 0, odd runs store 1.
    """
    if n_runs <= 0:
        raise ValueError("n_runs must be > 0")
    if sigma_vth < 0 or sigma_mw_rel < 0:
        raise ValueError("sigmas must be >= 0")
    children = np.random.SeedSequence(seed).spawn(n_runs)
    args = [(config, i, children[i], sigma_vth, sigma_mw_rel) for i in range(n_runs)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda a: _mc_run(*a), args))
    else:
        runs = [_mc_run(*a) for a in args]
    return MonteCarloResult(sigma_vth, sigma_mw_rel, seed, runs)
