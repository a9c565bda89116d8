"""Modified nodal analysis: Newton DC operating point, DC sweep, transient.

Unknowns are node voltages (ground excluded) followed by one branch current
per voltage source. Capacitors use a backward-Euler companion model (optional
trapezoidal). FeFET polarization is frozen during DC analyses and advanced
after every accepted transient step (operator splitting).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .device import (FeFetParams, FeFetState, MosfetParams, drain_current_derivs,
                     fefet_conduction_vth, step_polarization)
from .units import format_number

GROUND = -1
GROUND_NAMES = ("0", "gnd")


class SimulationError(RuntimeError):
    pass


class SingularMatrixError(SimulationError):
    pass


class ConvergenceError(SimulationError):
    pass


class TimestepError(SimulationError):
    pass


# --- source waveforms ----------------------------------------------------


@dataclass(frozen=True)
class SourceWaveform:
    """DC value, piecewise-linear points, or SPICE-style pulse."""

    shape: str
    params: tuple

    def __post_init__(self):
        shape = self.shape.upper()
        object.__setattr__(self, "shape", shape)
        if shape == "PWL":
            times = [t for t, _ in self.params]
            if not times:
                raise ValueError("PWL needs at least one point")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("PWL times must be strictly increasing")
        elif shape == "PULSE":
            if len(self.params) != 7:
                raise ValueError("PULSE needs v1 v2 delay rise fall width period")
            _, _, _, rise, fall, _, _ = self.params
            if rise <= 0 or fall <= 0:
                raise ValueError("PULSE rise/fall must be > 0")
        elif shape == "DC":
            if len(self.params) != 1:
                raise ValueError("DC needs one value")
        else:
            raise ValueError(f"unknown waveform shape {shape}")

    @classmethod
    def dc(cls, value: float) -> "SourceWaveform":
        return cls("DC", (float(value),))

    @classmethod
    def pwl(cls, points) -> "SourceWaveform":
        return cls("PWL", tuple((float(t), float(v)) for t, v in points))

    def value(self, t: float) -> float:
        if self.shape == "DC":
            return self.params[0]
        if self.shape == "PWL":
            pts = self.params
            if t <= pts[0][0]:
                return pts[0][1]
            for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
                if t <= t1:
                    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            return pts[-1][1]
        v1, v2, td, tr, tf, pw, per = self.params
        if t < td:
            return v1
        tt = t - td
        if per > 0:
            tt = math.fmod(tt, per)
        if tt < tr:
            return v1 + (v2 - v1) * tt / tr
        if tt < tr + pw:
            return v2
        if tt < tr + pw + tf:
            return v2 + (v1 - v2) * (tt - tr - pw) / tf
        return v1

    def breakpoints(self, tstop: float) -> list:
        if self.shape == "PWL":
            return [t for t, _ in self.params if 0 < t < tstop]
        if self.shape == "PULSE":
            v1, v2, td, tr, tf, pw, per = self.params
            corners = [td, td + tr, td + tr + pw, td + tr + pw + tf]
            out = []
            k = 0
            while True:
                base = k * per
                if base + td >= tstop or (per <= 0 and k > 0):
                    break
                out.extend(c + base for c in corners if 0 < c + base < tstop)
                k += 1
                if k > 100000:
                    break
            return out
        return []


# --- devices -------------------------------------------------------------


@dataclass
class Resistor:
    name: str
    a: int
    b: int
    r: float


@dataclass
class Capacitor:
    name: str
    a: int
    b: int
    c: float


@dataclass
class VSource:
    name: str
    p: int
    n: int
    wave: SourceWaveform
    branch: int = -1


@dataclass
class ISource:
    """Current flows from ``p`` through the source into ``n``."""

    name: str
    p: int
    n: int
    wave: SourceWaveform


@dataclass
class Mosfet:
    name: str
    g: int
    d: int
    s: int
    params: MosfetParams


@dataclass
class Fefet:
    name: str
    g: int
    d: int
    s: int
    params: FeFetParams
    state: FeFetState


@dataclass
class CompliantSink:
    """Current sink with a soft voltage compliance, as an SMU forcing current.

    Draws ``i_bias`` from ``node`` when well above ``v_comp``; the current
    collapses smoothly to zero at the compliance voltage and reverses below it.
    """

    name: str
    node: int
    i_bias: float
    v_comp: float
    v_soft: float

    def current(self, v: float):
        u = (v - self.v_comp) / self.v_soft
        if u >= 0:
            e = math.exp(-u)
            return self.i_bias * (1.0 - e), self.i_bias * e / self.v_soft
        return self.i_bias * u, self.i_bias / self.v_soft


@dataclass
class SolverConfig:
    reltol: float = 1e-3
    vntol: float = 1e-6
    abstol: float = 1e-9
    max_newton_iters: int = 100
    gmin: float = 1e-12
    dtmax: float = 100e-12
    dt_shrink_factor: float = 2.0
    max_dt_retries: int = 20
    method: str = "be"
    vlimit: float = 0.5

    def __post_init__(self):
        for name in ("reltol", "vntol", "abstol", "dtmax", "dt_shrink_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gmin < 0 or self.max_newton_iters <= 0 or self.max_dt_retries <= 0:
            raise ValueError("solver limits must be positive")
        if self.method not in ("be", "trap"):
            raise ValueError("method must be 'be' or 'trap'")

    @classmethod
    def from_config(cls, cfg) -> "SolverConfig":
        s = "solver"
        return cls(reltol=cfg.float(s, "reltol"), vntol=cfg.float(s, "vntol"),
                   abstol=cfg.float(s, "abstol"), max_newton_iters=cfg.int(s, "max_newton_iters"),
                   gmin=cfg.float(s, "gmin"), dtmax=cfg.float(s, "dtmax"),
                   dt_shrink_factor=cfg.float(s, "dt_shrink_factor"),
                   max_dt_retries=cfg.int(s, "max_dt_retries"), method=cfg.str(s, "method"))


class Circuit:
    """Node/device graph. Node indices are dense; ground is -1."""

    def __init__(self, title: str = ""):
        self.title = title
        self.node_names: list = []
        self._index: dict = {}
        self.devices: list = []
        self.ic: dict = {}
        self.analyses: list = []
        self.warnings: list = []

    # construction
    def node(self, name: str) -> int:
        key = str(name).lower()
        if key in GROUND_NAMES:
            return GROUND
        if key not in self._index:
            self._index[key] = len(self.node_names)
            self.node_names.append(key)
        return self._index[key]

    def has_node(self, name: str) -> bool:
        return str(name).lower() in self._index

    def _add(self, dev):
        if any(d.name == dev.name for d in self.devices):
            raise ValueError(f"duplicate device name {dev.name}")
        self.devices.append(dev)
        return dev

    def add_resistor(self, name, a, b, r):
        if not r > 0:
            raise ValueError("resistance must be > 0")
        return self._add(Resistor(name, self.node(a), self.node(b), float(r)))

    def add_capacitor(self, name, a, b, c):
        if not c > 0:
            raise ValueError("capacitance must be > 0")
        return self._add(Capacitor(name, self.node(a), self.node(b), float(c)))

    def add_vsource(self, name, p, n, wave):
        if not isinstance(wave, SourceWaveform):
            wave = SourceWaveform.dc(wave)
        return self._add(VSource(name, self.node(p), self.node(n), wave))

    def add_isource(self, name, p, n, wave):
        if not isinstance(wave, SourceWaveform):
            wave = SourceWaveform.dc(wave)
        return self._add(ISource(name, self.node(p), self.node(n), wave))

    def add_mosfet(self, name, g, d, s, params):
        return self._add(Mosfet(name, self.node(g), self.node(d), self.node(s), params))

    def add_fefet(self, name, g, d, s, params, state):
        return self._add(Fefet(name, self.node(g), self.node(d), self.node(s), params, state))

    def add_sink(self, name, node, i_bias, v_comp, v_soft):
        return self._add(CompliantSink(name, self.node(node), i_bias, v_comp, v_soft))

    # queries
    @property
    def node_count(self) -> int:
        return len(self.node_names)

    @property
    def vsources(self) -> list:
        return [d for d in self.devices if isinstance(d, VSource)]

    @property
    def vsource_count(self) -> int:
        return len(self.vsources)

    @property
    def fefets(self) -> list:
        return [d for d in self.devices if isinstance(d, Fefet)]

    def device(self, name: str):
        for d in self.devices:
            if d.name.lower() == name.lower():
                return d
        raise KeyError(name)

    def index(self, name: str) -> int:
        key = str(name).lower()
        if key in GROUND_NAMES:
            return GROUND
        return self._index[key]

    def set_source(self, name: str, wave) -> None:
        dev = self.device(name)
        dev.wave = wave if isinstance(wave, SourceWaveform) else SourceWaveform.dc(wave)

    def finalize(self) -> int:
        n = self.node_count
        for k, src in enumerate(self.vsources):
            src.branch = n + k
        return n + self.vsource_count


# --- assembly and Newton -------------------------------------------------


class _System:
    """Residual/Jacobian assembly for one circuit and analysis mode."""

    def __init__(self, circuit: Circuit, cfg: SolverConfig):
        self.c = circuit
        self.cfg = cfg
        self.size = circuit.finalize()
        self.n = circuit.node_count
        self.caps = [d for d in circuit.devices if isinstance(d, Capacitor)]
        self.fets = []
        for d in circuit.devices:
            if isinstance(d, Mosfet):
                self.fets.append((d, d.params, None))
            elif isinstance(d, Fefet):
                self.fets.append((d, d.params.base, d))
        self.others = [d for d in circuit.devices
                       if isinstance(d, (Resistor, VSource, ISource, CompliantSink))]

    def refresh_vth(self):
        self._vth = [fefet_conduction_vth(fe.state, fe.params) if fe is not None else None
                     for _, _, fe in self.fets]

    def assemble(self, x, t, gmin, scale, h=None, x_prev=None, cap_i_prev=None, clamps=None,
                 trap=False):
        n = self.n
        f = np.zeros(self.size)
        J = np.zeros((self.size, self.size))

        def v(i):
            return 0.0 if i < 0 else x[i]

        for i in range(n):
            f[i] += gmin * x[i]
            J[i, i] += gmin
        for d in self.others:
            if isinstance(d, Resistor):
                g = 1.0 / d.r
                cur = g * (v(d.a) - v(d.b))
                _stamp_branch(f, J, d.a, d.b, cur, g)
            elif isinstance(d, VSource):
                k = d.branch
                ib = x[k]
                if d.p >= 0:
                    f[d.p] += ib
                    J[d.p, k] += 1.0
                if d.n >= 0:
                    f[d.n] -= ib
                    J[d.n, k] -= 1.0
                f[k] = v(d.p) - v(d.n) - scale * d.wave.value(t)
                if d.p >= 0:
                    J[k, d.p] += 1.0
                if d.n >= 0:
                    J[k, d.n] -= 1.0
            elif isinstance(d, ISource):
                cur = scale * d.wave.value(t)
                if d.p >= 0:
                    f[d.p] += cur
                if d.n >= 0:
                    f[d.n] -= cur
            else:
                cur, g = d.current(v(d.node))
                if d.node >= 0:
                    f[d.node] += scale * cur
                    J[d.node, d.node] += scale * g
        if h is not None:
            for j, d in enumerate(self.caps):
                dv = v(d.a) - v(d.b)
                dv0 = (0.0 if d.a < 0 else x_prev[d.a]) - (0.0 if d.b < 0 else x_prev[d.b])
                if trap:
                    g = 2.0 * d.c / h
                    cur = g * (dv - dv0) - cap_i_prev[j]
                else:
                    g = d.c / h
                    cur = g * (dv - dv0)
                _stamp_branch(f, J, d.a, d.b, cur, g)
        for (d, params, fe), vth in zip(self.fets, self._vth):
            vg, vd, vs = v(d.g), v(d.d), v(d.s)
            i, dg, dd, ds = drain_current_derivs(params, vg, vd, vs, vth)
            if d.d >= 0:
                f[d.d] += i
                _addj(J, d.d, d.g, dg)
                _addj(J, d.d, d.d, dd)
                _addj(J, d.d, d.s, ds)
            if d.s >= 0:
                f[d.s] -= i
                _addj(J, d.s, d.g, -dg)
                _addj(J, d.s, d.d, -dd)
                _addj(J, d.s, d.s, -ds)
        if clamps:
            for node, (val, g) in clamps.items():
                f[node] += g * (x[node] - val)
                J[node, node] += g
        return f, J

    def cap_currents(self, x, x_prev, h, cap_i_prev, trap=False):
        out = np.zeros(len(self.caps))
        for j, d in enumerate(self.caps):
            dv = (0.0 if d.a < 0 else x[d.a]) - (0.0 if d.b < 0 else x[d.b])
            dv0 = (0.0 if d.a < 0 else x_prev[d.a]) - (0.0 if d.b < 0 else x_prev[d.b])
            if trap:
                out[j] = 2.0 * d.c / h * (dv - dv0) - cap_i_prev[j]
            else:
                out[j] = d.c / h * (dv - dv0)
        return out

    def newton(self, x0, t, gmin, scale=1.0, polish=False, **kw):
        """Returns (solution, kcl_residual). Raises ConvergenceError/SingularMatrixError.

        ``polish`` takes one extra full Newton step after convergence, which
        makes DC results independent of the starting point to well below vntol.
        """
        cfg = self.cfg
        n = self.n
        x = np.array(x0, dtype=float)
        small_step = False
        for _ in range(cfg.max_newton_iters):
            f, J = self.assemble(x, t, gmin, scale, **kw)
            res = float(np.max(np.abs(f[:n]))) if n else 0.0
            branch_ok = bool(np.all(np.abs(f[n:]) < cfg.vntol)) if self.size > n else True
            if small_step and res < cfg.abstol and branch_ok:
                if polish:
                    polish = False
                    small_step = False
                else:
                    return x, res
            try:
                dx = np.linalg.solve(J, -f)
            except np.linalg.LinAlgError as exc:
                raise SingularMatrixError(f"singular MNA matrix at t={t:g}: {exc}") from None
            if not np.all(np.isfinite(dx)):
                raise SingularMatrixError(f"singular MNA matrix at t={t:g}")
            dv = dx[:n]
            biggest = float(np.max(np.abs(dv))) if n else 0.0
            if biggest > cfg.vlimit:
                dx = dx * (cfg.vlimit / biggest)
                dv = dx[:n]
            x_new = x + dx
            tol = cfg.vntol + cfg.reltol * np.maximum(np.abs(x[:n]), np.abs(x_new[:n]))
            small_step = bool(np.all(np.abs(dv) < tol))
            x = x_new
        raise ConvergenceError(f"Newton did not converge at t={t:g}")


def _addj(J, row, col, val):
    if col >= 0:
        J[row, col] += val


def _stamp_branch(f, J, a, b, cur, g):
    if a >= 0:
        f[a] += cur
        J[a, a] += g
        if b >= 0:
            J[a, b] -= g
    if b >= 0:
        f[b] -= cur
        J[b, b] += g
        if a >= 0:
            J[b, a] -= g


# --- analyses ------------------------------------------------------------


@dataclass
class OperatingPoint:
    circuit: Circuit
    x: np.ndarray
    residual: float

    def v(self, name: str) -> float:
        i = self.circuit.index(name)
        return 0.0 if i < 0 else float(self.x[i])

    def i(self, source_name: str) -> float:
        return float(self.x[self.circuit.device(source_name).branch])

    @property
    def node_voltages(self) -> dict:
        return {name: float(self.x[k]) for k, name in enumerate(self.circuit.node_names)}


IC_CONDUCTANCE = 1e6


def _ic_clamps(circuit: Circuit, ic: Optional[dict]):
    if not ic:
        return None
    # stiff enough that the clamped node sits within ~1e-9 V of its value
    return {circuit.index(name): (float(val), IC_CONDUCTANCE) for name, val in ic.items()
            if circuit.index(name) >= 0}


def _solve_dc(system: _System, cfg: SolverConfig, guess, t, clamps):
    try:
        return system.newton(guess, t, cfg.gmin, polish=True, clamps=clamps)
    except SingularMatrixError:
        raise
    except ConvergenceError:
        pass
    # gmin stepping
    x = np.array(guess, dtype=float)
    try:
        g = max(cfg.gmin, 1e-12) * 1e6
        while True:
            x, _ = system.newton(x, t, g, clamps=clamps)
            if g <= cfg.gmin:
                break
            g = max(g / 10.0, cfg.gmin)
        return system.newton(x, t, cfg.gmin, polish=True, clamps=clamps)
    except ConvergenceError:
        pass
    # source stepping
    x = np.zeros(system.size)
    for k in range(1, 11):
        x, res = system.newton(x, t, cfg.gmin, scale=k / 10.0, polish=k == 10, clamps=clamps)
    return x, res


def dc_operating_point(circuit: Circuit, config: SolverConfig = None, initial_guess=None,
                       t: float = 0.0, ic: Optional[dict] = None) -> OperatingPoint:
    """Newton DC solve with gmin then source stepping as fallbacks.

    ``ic`` clamps named nodes through 1 S to the given voltages (.ic semantics).
    """
    cfg = config or SolverConfig()
    system = _System(circuit, cfg)
    system.refresh_vth()
    if isinstance(initial_guess, dict):
        guess = np.zeros(system.size)
        for name, val in initial_guess.items():
            k = circuit.index(name)
            if k >= 0:
                guess[k] = val
    elif initial_guess is None:
        guess = np.zeros(system.size)
    else:
        guess = np.asarray(initial_guess, dtype=float)
    x, res = _solve_dc(system, cfg, guess, t, _ic_clamps(circuit, ic if ic is not None else circuit.ic))
    return OperatingPoint(circuit, x, res)


@dataclass
class Sweep:
    circuit: Circuit
    source: str
    values: np.ndarray
    solutions: np.ndarray

    def v(self, name: str) -> np.ndarray:
        k = self.circuit.index(name)
        return np.zeros(len(self.values)) if k < 0 else self.solutions[:, k]


def dc_sweep(circuit: Circuit, source_name: str, start: float, stop: float, step: float,
             config: SolverConfig = None, initial_guess=None) -> Sweep:
    """Continuation sweep of a voltage/current source; polarization frozen."""
    if step == 0:
        raise ValueError("sweep step must be nonzero")
    if (stop - start) * step < 0:
        raise ValueError("sweep step sign inconsistent with start/stop")
    cfg = config or SolverConfig()
    src = circuit.device(source_name)
    original = src.wave
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    values = start + step * np.arange(count)
    system = _System(circuit, cfg)
    system.refresh_vth()
    x = np.zeros(system.size) if initial_guess is None else np.asarray(initial_guess, float)
    sols = np.empty((count, system.size))
    try:
        for k, val in enumerate(values):
            src.wave = SourceWaveform.dc(val)
            try:
                x, _ = _solve_dc(system, cfg, x, 0.0, None)
            except SimulationError as exc:
                raise type(exc)(f"{exc} (sweep {source_name}={val:g})") from None
            sols[k] = x
    finally:
        src.wave = original
    return Sweep(circuit, source_name, values, sols)


@dataclass
class Waveform:
    times: np.ndarray
    node_names: list
    node_voltages: np.ndarray
    branch_names: list
    branch_currents: np.ndarray
    polarization: dict
    kcl_residual: np.ndarray
    final_x: np.ndarray = None

    def v(self, name: str) -> np.ndarray:
        key = name.lower()
        if key in GROUND_NAMES:
            return np.zeros(len(self.times))
        return self.node_voltages[:, self.node_names.index(key)]

    def i(self, name: str) -> np.ndarray:
        return self.branch_currents[:, self.branch_names.index(name)]

    def final(self, name: str) -> float:
        return float(self.v(name)[-1])

    def to_csv(self, path) -> None:
        header = ["time_seconds"] + [f"v({n})" for n in self.node_names] \
            + [f"i({n})" for n in self.branch_names] + [f"p({n})" for n in self.polarization]
        pols = list(self.polarization.values())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [t, *self.node_voltages[k], *self.branch_currents[k], *(p[k] for p in pols)]
                w.writerow([format_number(float(val)) for val in row])


def _breakpoints(circuit: Circuit, tstop: float) -> list:
    pts = set()
    for d in circuit.devices:
        if isinstance(d, (VSource, ISource)):
            pts.update(d.wave.breakpoints(tstop))
    return sorted(pts)


def transient(circuit: Circuit, tstop: float, config: SolverConfig = None,
              ic: Optional[dict] = None, initial_x=None,
              dtmax_fn: Optional[Callable[[float], float]] = None,
              record_every: int = 1) -> Waveform:
    """Backward-Euler transient from a DC (or .ic-clamped) operating point.

    Steps land exactly on source breakpoints; a failed Newton solve shrinks
    the step up to ``max_dt_retries`` times. ``dtmax_fn(t)`` can vary the
    maximum step over time.
    """
    if tstop < 0:
        raise ValueError("tstop must be >= 0")
    cfg = config or SolverConfig()
    system = _System(circuit, cfg)
    system.refresh_vth()
    if initial_x is not None:
        x = np.asarray(initial_x, dtype=float).copy()
        res0 = 0.0
    else:
        op = dc_operating_point(circuit, cfg, ic=ic if ic is not None else circuit.ic,
                                initial_guess=ic)
        x, res0 = op.x, op.residual
    n = system.n
    fes = circuit.fefets
    times = [0.0]
    volts = [x[:n].copy()]
    branches = [x[n:].copy()]
    pols = {fe.name: [fe.state.mean] for fe in fes}
    residuals = [res0]
    cap_i = np.zeros(len(system.caps))
    bps = _breakpoints(circuit, tstop) + [tstop]
    bp_idx = 0
    t = 0.0
    step_count = 0
    eps = 1e-18 + 1e-12 * tstop
    while t < tstop - eps:
        while bps[bp_idx] <= t + eps:
            bp_idx += 1
        # the DC start carries no capacitor-current history, so the first
        # trapezoidal step falls back to backward Euler
        trap = cfg.method == "trap" and step_count > 0
        hmax = dtmax_fn(t) if dtmax_fn else cfg.dtmax
        h = min(hmax, bps[bp_idx] - t)
        retries = 0
        while True:
            try:
                x_new, res = system.newton(x, t + h, cfg.gmin, h=h, x_prev=x, cap_i_prev=cap_i,
                                           trap=trap)
                break
            except ConvergenceError:
                retries += 1
                if retries > cfg.max_dt_retries:
                    raise TimestepError(f"timestep underflow at t={t:g} (h={h:g})") from None
                h /= cfg.dt_shrink_factor
        if cfg.method == "trap":
            cap_i = system.cap_currents(x_new, x, h, cap_i, trap)
        t_new = t + h
        if bps[bp_idx] - t_new <= eps:
            t_new = bps[bp_idx]
        for fe in fes:
            vg = 0.0 if fe.g < 0 else x_new[fe.g]
            vd = 0.0 if fe.d < 0 else x_new[fe.d]
            vs = 0.0 if fe.s < 0 else x_new[fe.s]
            fe.state = step_polarization(fe.state, fe.params, vg, vd, vs, h)
        if fes:
            system.refresh_vth()
        x, t = x_new, t_new
        step_count += 1
        if step_count % record_every == 0 or t >= tstop - eps:
            times.append(t)
            volts.append(x[:n].copy())
            branches.append(x[n:].copy())
            residuals.append(res)
            for fe in fes:
                pols[fe.name].append(fe.state.mean)
    return Waveform(
        times=np.array(times),
        node_names=list(circuit.node_names),
        node_voltages=np.array(volts).reshape(len(times), n),
        branch_names=[s.name for s in circuit.vsources],
        branch_currents=np.array(branches).reshape(len(times), system.size - n),
        polarization={k: np.array(v) for k, v in pols.items()},
        kcl_residual=np.array(residuals),
        final_x=x,
    )
