"""MOSFET and multi-segment FeFET compact models.

Current model
-------------
A source/drain-symmetric soft-plus-squared (EKV-flavoured) expression::

    I = 2 n k Ut^2 [F(zf) - F(zr)] (1 + lambda |vds|)
    F(z) = ln(1 + e^z)^2,  zf = (vg - vs - vth) / (2 n Ut),  zr = (vg - vd - vth) / (2 n Ut)

It is C-infinity in vg/vd/vs away from vds = 0 and C1 everywhere, reduces to
``k/(2n) (vgs - vth)^2`` in saturation and to an exponential with slope
``n Ut`` below threshold. The body terminal is not modelled.

Polarization
------------
Every FeFET channel is split into ``segment_count`` segments from source to
drain. ``p = +1`` is fully LVT and ``p = -1`` fully HVT for both polarities.
Segments relax toward the target set by the local gate-to-channel voltage with
a Merz-type characteristic time ``tau0 * exp(v0 / |V|)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

VT_THERMAL = 0.02585


class Polarity(enum.Enum):
    N = "n"
    P = "p"

    @property
    def sign(self) -> int:
        """+1 for N, -1 for P; p=+1 lowers |vth| for both."""
        return 1 if self is Polarity.N else -1


class CalibrationError(ValueError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class MosfetParams:
    polarity: Polarity
    vth0: float
    kprime: float
    n_sub: float = 1.5
    lam: float = 0.1
    vt_thermal: float = VT_THERMAL

    def __post_init__(self):
        if not self.kprime > 0:
            raise ValueError(f"kprime must be > 0, got {self.kprime}")
        if self.n_sub < 1:
            raise ValueError(f"n_sub must be >= 1, got {self.n_sub}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.polarity is Polarity.P and self.vth0 > 0:
            raise ValueError("P device requires vth0 <= 0")
        if self.polarity is Polarity.N and self.vth0 < 0:
            raise ValueError("N device requires vth0 >= 0")


@dataclass(frozen=True)
class SwitchingKinetics:
    tau0: float
    v0: float
    boundary_fraction: float = 0.5

    def __post_init__(self):
        if not (self.tau0 > 0 and self.v0 > 0):
            raise ValueError(f"kinetics need tau0 > 0 and v0 > 0, got {self.tau0}, {self.v0}")

    def tau(self, voltage: float) -> float:
        """Characteristic switching time at |voltage|; inf at zero field."""
        a = abs(voltage)
        if a * 700.0 < self.v0:
            return math.inf
        expo = self.v0 / a
        if expo > 700.0:
            return math.inf
        return self.tau0 * math.exp(expo)


@dataclass(frozen=True)
class FeFetState:
    """Per-segment polarization, ordered source side -> drain side."""

    segments: tuple

    def __post_init__(self):
        segs = tuple(float(p) for p in self.segments)
        if not segs:
            raise ValueError("FeFetState needs at least one segment")
        for p in segs:
            if not -1.0 <= p <= 1.0:
                raise ValueError(f"polarization {p} outside [-1, 1]")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def uniform(cls, value: float, segment_count: int = 8) -> "FeFetState":
        return cls((value,) * segment_count)

    @classmethod
    def lvt(cls, segment_count: int = 8) -> "FeFetState":
        return cls.uniform(1.0, segment_count)

    @classmethod
    def hvt(cls, segment_count: int = 8) -> "FeFetState":
        return cls.uniform(-1.0, segment_count)

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    @property
    def mean(self) -> float:
        return sum(self.segments) / len(self.segments)

    def max_delta(self, other: "FeFetState") -> float:
        return max(abs(a - b) for a, b in zip(self.segments, other.segments))


@dataclass(frozen=True)
class FeFetParams:
    base: MosfetParams
    mw: float
    kinetics: SwitchingKinetics

    def __post_init__(self):
        if not self.mw > 0:
            raise ValueError(f"memory window must be > 0, got {self.mw}")


@dataclass(frozen=True)
class ProgramPulse:
    vg: float
    vs: float
    vd: float
    width: float

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("pulse width must be >= 0")


@dataclass(frozen=True)
class SweepProtocol:
    """Gate sweep at fixed drain/source bias, optionally preceded by program pulses."""

    start: float
    stop: float
    step: float
    vds: float = 0.05
    vs: float = 0.0
    dwell: float = 1e-3
    pulses: tuple = ()
    wait: float = 2.0

    def __post_init__(self):
        if self.step == 0:
            raise ValueError("sweep step must be nonzero")
        if (self.stop - self.start) * self.step < 0:
            raise ValueError("sweep step sign inconsistent with start/stop")


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    x_label: str = "x"
    y_label: str = "y"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)


# --- current model -------------------------------------------------------


def _softplus(z: float) -> float:
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _ekv_n(vth, kprime, n, lam, ut, vg, vd, vs):
    """N-type drain->source current and its partials (dI/dvg, dI/dvd, dI/dvs)."""
    den = 2.0 * n * ut
    zf = (vg - vs - vth) / den
    zr = (vg - vd - vth) / den
    lf = _softplus(zf)
    lr = _softplus(zr)
    scale = 2.0 * n * kprime * ut * ut
    i0 = scale * (lf * lf - lr * lr)
    # d/dz ln(1+e^z)^2 = 2 ln(1+e^z) sigmoid(z)
    df = scale * 2.0 * lf * _sigmoid(zf) / den
    dr = scale * 2.0 * lr * _sigmoid(zr) / den
    vds = vd - vs
    clm = 1.0 + lam * abs(vds)
    sgn = 1.0 if vds > 0 else (-1.0 if vds < 0 else 0.0)
    i = i0 * clm
    d_g = (df - dr) * clm
    d_d = dr * clm + i0 * lam * sgn
    d_s = -df * clm - i0 * lam * sgn
    return i, d_g, d_d, d_s


def mosfet_current_derivs(params: MosfetParams, vg, vd, vs, vth: Optional[float] = None):
    """Current in the device-polarity convention plus partials w.r.t. (vg, vd, vs).

    N: positive drain->source. P: positive source->drain.
    """
    vth = params.vth0 if vth is None else vth
    if params.polarity is Polarity.N:
        return _ekv_n(vth, params.kprime, params.n_sub, params.lam, params.vt_thermal, vg, vd, vs)
    i, dg, dd, ds = _ekv_n(-vth, params.kprime, params.n_sub, params.lam, params.vt_thermal,
                           -vg, -vd, -vs)
    return i, -dg, -dd, -ds


def mosfet_current(params: MosfetParams, vg: float, vd: float, vs: float) -> float:
    return mosfet_current_derivs(params, vg, vd, vs)[0]


def drain_current_derivs(params: MosfetParams, vg, vd, vs, vth=None):
    """Current flowing into the drain terminal (drain->source), any polarity."""
    i, dg, dd, ds = mosfet_current_derivs(params, vg, vd, vs, vth)
    if params.polarity is Polarity.P:
        return -i, -dg, -dd, -ds
    return i, dg, dd, ds


def calibrate_drive(target_current: float, at_vgs: float, at_vds: float,
                    params_template: MosfetParams, kprime_max: float = 0.1) -> MosfetParams:
    """Scale kprime so the device carries ``target_current`` at (at_vgs, at_vds).

    Biases follow the device convention (negative for P). The model is linear
    in kprime, so the scaled value is exact; kprime_max bounds physical sizing.
    """
    if not target_current > 0:
        raise CalibrationError("target current must be > 0")
    base = abs(mosfet_current(params_template, at_vgs, at_vds, 0.0))
    if base == 0.0 or not math.isfinite(base):
        raise CalibrationError(f"template carries no current at vgs={at_vgs}, vds={at_vds}")
    kprime = params_template.kprime * target_current / base
    if kprime > kprime_max:
        raise CalibrationError(
            f"target {target_current:g} A unreachable at vgs={at_vgs} V "
            f"(needs kprime={kprime:.3g} > {kprime_max:g})")
    calibrated = replace(params_template, kprime=kprime)
    check = abs(mosfet_current(calibrated, at_vgs, at_vds, 0.0))
    if abs(check - target_current) > 1e-3 * target_current:
        raise CalibrationError("calibration did not reproduce the target current")
    return calibrated


# --- FeFET ---------------------------------------------------------------


def segment_vth(state: FeFetState, params: FeFetParams) -> np.ndarray:
    sign = params.base.polarity.sign
    return params.base.vth0 - sign * (params.mw / 2.0) * np.asarray(state.segments)


def fefet_effective_vth(state: FeFetState, params: FeFetParams) -> float:
    """Threshold shifted by the mean polarization."""
    sign = params.base.polarity.sign
    return params.base.vth0 - sign * (params.mw / 2.0) * state.mean


def fefet_conduction_vth(state: FeFetState, params: FeFetParams) -> float:
    """Threshold of the segments acting in series.

    Subthreshold conductances of equal-length series segments add as
    resistances, so the least conductive segment dominates. Equal to
    ``fefet_effective_vth`` for uniformly polarized channels.
    """
    vths = segment_vth(state, params)
    if np.all(vths == vths[0]):
        return float(vths[0])
    nut = params.base.n_sub * params.base.vt_thermal
    sign = params.base.polarity.sign
    a = sign * vths / nut
    top = a.max()
    return float(sign * nut * (top + math.log(np.mean(np.exp(a - top)))))


def fefet_current(state: FeFetState, params: FeFetParams, vg: float, vd: float, vs: float) -> float:
    return mosfet_current_derivs(params.base, vg, vd, vs, fefet_conduction_vth(state, params))[0]


def segment_positions(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def step_polarization(state: FeFetState, params: FeFetParams, vg: float, vd: float, vs: float,
                      dt: float, rng: Optional[np.random.Generator] = None,
                      domains: int = 64) -> FeFetState:
    """Advance every segment for ``dt`` seconds under constant terminal biases.

    Local FE voltage is gate minus a linearly interpolated channel potential.
    With ``rng`` the switched fraction of each segment is drawn from a
    binomial over ``domains`` domains instead of taken as its expectation.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0:
        return state
    # positive field: P -> HVT (-1), N -> LVT (+1)
    field_to_target = -1.0 if params.base.polarity is Polarity.P else 1.0
    kin = params.kinetics
    x = segment_positions(state.segment_count)
    out = []
    for p, xs in zip(state.segments, x):
        v_fe = vg - ((1.0 - xs) * vs + xs * vd)
        if v_fe == 0.0:
            out.append(p)
            continue
        target = field_to_target * (1.0 if v_fe > 0 else -1.0)
        tau = kin.tau(v_fe)
        frac = -math.expm1(-dt / tau) if math.isfinite(tau) else 0.0
        if rng is not None and frac > 0.0:
            frac = rng.binomial(domains, frac) / domains
        p_new = p + (target - p) * frac
        out.append(min(1.0, max(-1.0, p_new)))
    return FeFetState(tuple(out))


def apply_program_pulse(state: FeFetState, params: FeFetParams, pulse: ProgramPulse) -> FeFetState:
    return step_polarization(state, params, pulse.vg, pulse.vd, pulse.vs, pulse.width)


def switching_boundary_width(kinetics: SwitchingKinetics, amplitude: float) -> float:
    """Pulse width at which a saturated segment reaches 50 % switched fraction."""
    if amplitude == 0:
        raise ValueError("zero amplitude never switches (infinite width)")
    expo = kinetics.v0 / abs(amplitude)
    return kinetics.tau0 * math.log(1.0 / (1.0 - kinetics.boundary_fraction)) * math.exp(expo) \
        if expo < 700 else math.inf


def calibrate_kinetics(anchor1, anchor2) -> SwitchingKinetics:
    """Solve ln(tau0 ln2) + v0/|a| = ln(w) through two (amplitude, width) anchors."""
    (a1, w1), (a2, w2) = anchor1, anchor2
    a1, a2 = abs(a1), abs(a2)
    if a1 == a2:
        raise ValueError("anchors need distinct amplitudes")
    if min(a1, a2, w1, w2) <= 0:
        raise ValueError("anchors need positive amplitudes and widths")
    v0 = (math.log(w1) - math.log(w2)) / (1.0 / a1 - 1.0 / a2)
    tau0 = w1 / (math.log(2.0) * math.exp(v0 / a1))
    return SwitchingKinetics(tau0=tau0, v0=v0)


# --- measurement protocols -----------------------------------------------


def idvg_sweep(params, initial_state: Optional[FeFetState], protocol: SweepProtocol):
    """Apply the protocol's pulses, then sweep the gate and record drain current.

    Returns ``(curve, final_state)``; the state is None for plain MOSFETs.
    The gate dwell at each point also advances polarization, which is how a
    forward sweep disturbs a p-FeFET.
    """
    is_fe = isinstance(params, FeFetParams)
    state = initial_state
    if is_fe:
        for pulse in protocol.pulses:
            state = apply_program_pulse(state, params, pulse)
        # de-trapping wait is a no-op: charge trapping is not modelled
    n = int(math.floor((protocol.stop - protocol.start) / protocol.step + 1e-9)) + 1
    if protocol.start == protocol.stop:
        n = 0
    vgs = protocol.start + protocol.step * np.arange(max(n, 0))
    ids = np.empty_like(vgs)
    vs = protocol.vs
    vd = vs + protocol.vds
    for i, vg in enumerate(vgs):
        if is_fe:
            ids[i] = fefet_current(state, params, vg, vd, vs)
            state = step_polarization(state, params, vg, vd, vs, protocol.dwell)
        else:
            ids[i] = mosfet_current(params, vg, vd, vs)
    curve = Curve(vgs, ids, "vg_volts", "id_amperes")
    return curve, state


def _first_crossing(curve: Curve, level: float, name: str) -> float:
    mag = np.abs(np.asarray(curve.y, dtype=float))
    x = np.asarray(curve.x, dtype=float)
    logm = np.log10(np.maximum(mag, 1e-300))
    target = math.log10(level)
    above = logm >= target
    for i in range(1, len(x)):
        if above[i] != above[i - 1]:
            y0, y1 = logm[i - 1], logm[i]
            t = (target - y0) / (y1 - y0)
            return float(x[i - 1] + t * (x[i] - x[i - 1]))
    raise ExtractionError(f"{name} curve never crosses {level:g} A")


def memory_window(curve_lvt: Curve, curve_hvt: Curve, i_crit: float = 1e-7) -> float:
    """Gate-voltage separation of two transfer curves at a constant current."""
    v_lvt = _first_crossing(curve_lvt, i_crit, "LVT")
    v_hvt = _first_crossing(curve_hvt, i_crit, "HVT")
    return abs(v_lvt - v_hvt)
