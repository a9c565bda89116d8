"""SPICE-subset netlist reader, writer and elaborator.

Grammar (one element or directive per logical line, case-insensitive)::

    netlist    = title { line } [ ".end" ]
    line       = element | directive
    element    = rcard | ccard | vcard | icard | mcard | fcard
    rcard      = "R" name node node value
    ccard      = "C" name node node value
    vcard      = "V" name node node source
    icard      = "I" name node node source
    source     = [ "dc" ] value
               | "pwl" "(" value value { value value } ")"
               | "pulse" "(" value value value value value value value ")"
    mcard      = "M" name gate drain source model
    fcard      = "F" name gate drain source model polarization
    polarization = "lvt" | "hvt" | "(" value { value } ")"
    directive  = ".tran" dtmax tstop
               | ".dc" source_name start stop step
               | ".op"
               | ".ic" "v(" node ")" "=" value { "v(" node ")" "=" value }
               | ".model" name ( "nmos" | "pmos" | "nfefet" | "pfefet" ) [ "(" ] { key "=" value } [ ")" ]
               | ".end"

Lines starting with ``*`` are comments and lines starting with ``+``
continue the previous line. Values take SI suffixes f p n u m k meg g.
``F`` is a FeFET here, not the classic current-controlled current source.
Nodes "0" and "gnd" are ground.
"""

from __future__ import annotations

import enum
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

from .device import FeFetParams, FeFetState, MosfetParams, Polarity, SwitchingKinetics, calibrate_kinetics
from .engine import GROUND_NAMES, Circuit, SourceWaveform
from .units import SuffixError, parse_si


class NetlistError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(message + where)


class NetlistWarning(UserWarning):
    pass


class ElementKind(enum.Enum):
    RESISTOR = "r"
    CAPACITOR = "c"
    VSOURCE = "v"
    ISOURCE = "i"
    MOSFET = "m"
    FEFET = "f"


NODE_COUNT = {ElementKind.RESISTOR: 2, ElementKind.CAPACITOR: 2, ElementKind.VSOURCE: 2,
              ElementKind.ISOURCE: 2, ElementKind.MOSFET: 3, ElementKind.FEFET: 3}


@dataclass(frozen=True)
class Element:
    kind: ElementKind
    name: str
    nodes: tuple
    value: Optional[float] = None
    waveform: Optional[SourceWaveform] = None
    model: Optional[str] = None
    polarization: object = None  # "lvt", "hvt" or a tuple of segment values
    line: Optional[int] = field(default=None, compare=False)


class DirectiveKind(enum.Enum):
    TRAN = "tran"
    DC = "dc"
    OP = "op"
    IC = "ic"


@dataclass(frozen=True)
class AnalysisDirective:
    kind: DirectiveKind
    params: tuple = ()
    line: Optional[int] = field(default=None, compare=False)


@dataclass(frozen=True)
class ModelCard:
    name: str
    type: str
    params: tuple = ()  # sorted (key, value) pairs
    line: Optional[int] = field(default=None, compare=False)

    def get(self, key: str, default=None):
        return dict(self.params).get(key, default)


@dataclass(frozen=True)
class Netlist:
    title: str
    elements: tuple = ()
    directives: tuple = ()
    models: tuple = ()


# --- lexing --------------------------------------------------------------

_TOKEN = re.compile(r"[()=,]|[^\s()=,]+")


@dataclass(frozen=True)
class _Tok:
    text: str
    line: int
    col: int

    @property
    def low(self) -> str:
        return self.text.lower()


def _logical_lines(text: str):
    """Yield (title, [token lists]) with '+' continuations folded."""
    title = None
    title_line = None
    current = None
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("*"):
            continue
        if title is None:
            title, title_line = stripped, lineno
            continue
        offset = len(raw) - len(raw.lstrip())
        body = raw
        if stripped.startswith("+"):
            if current is None:
                raise NetlistError("continuation line with nothing to continue", lineno, offset + 1)
            body = raw[:offset] + " " + raw[offset + 1:]
        toks = [_Tok(m.group(), lineno, m.start() + 1) for m in _TOKEN.finditer(body)]
        if stripped.startswith("+"):
            current.extend(toks)
        else:
            current = toks
            out.append(current)
    return title, title_line, out


def _number(tok: _Tok) -> float:
    try:
        return parse_si(tok.text)
    except SuffixError as exc:
        raise NetlistError(f"unknown suffix '{exc.suffix}'", tok.line, tok.col) from None
    except ValueError:
        raise NetlistError(f"malformed number '{tok.text}'", tok.line, tok.col) from None


class _Cursor:
    def __init__(self, toks):
        self.toks = toks
        self.i = 0

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, what: str) -> _Tok:
        tok = self.peek()
        if tok is None:
            last = self.toks[-1]
            raise NetlistError(f"expected {what}", last.line, last.col + len(last.text))
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.take(f"'{text}'")
        if tok.text != text:
            raise NetlistError(f"expected '{text}', got '{tok.text}'", tok.line, tok.col)
        return tok

    def name(self, what: str) -> _Tok:
        tok = self.take(what)
        if tok.text in "()=,":
            raise NetlistError(f"expected {what}, got '{tok.text}'", tok.line, tok.col)
        return tok

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def finish(self) -> None:
        tok = self.peek()
        if tok is not None:
            raise NetlistError(f"unexpected token '{tok.text}'", tok.line, tok.col)

    def paren_values(self) -> list:
        self.expect("(")
        vals = []
        while True:
            tok = self.take("')'")
            if tok.text == ")":
                return vals
            if tok.text == ",":
                continue
            vals.append((tok, _number(tok)))


# --- parsing ---------------------------------------------------------------


def _parse_source(cur: _Cursor, head: _Tok):
    tok = cur.take("source value")
    if tok.low == "dc":
        tok = cur.take("source value")
    if tok.low == "pwl":
        vals = cur.paren_values()
        if len(vals) < 2 or len(vals) % 2:
            raise NetlistError("pwl needs time/value pairs", tok.line, tok.col)
        pts = [(vals[k][1], vals[k + 1][1]) for k in range(0, len(vals), 2)]
        for k in range(1, len(pts)):
            if pts[k][0] <= pts[k - 1][0]:
                bad = vals[2 * k][0]
                raise NetlistError("pwl times must be strictly increasing", bad.line, bad.col)
        return SourceWaveform.pwl(pts)
    if tok.low == "pulse":
        vals = cur.paren_values()
        if len(vals) != 7:
            raise NetlistError("pulse needs v1 v2 delay rise fall width period", tok.line, tok.col)
        nums = tuple(v for _, v in vals)
        if nums[3] <= 0 or nums[4] <= 0:
            raise NetlistError("pulse rise and fall must be > 0", tok.line, tok.col)
        return SourceWaveform("PULSE", nums)
    return SourceWaveform.dc(_number(tok))


def _parse_element(cur: _Cursor) -> Element:
    head = cur.take("element")
    kind_letter = head.low[0]
    try:
        kind = ElementKind(kind_letter)
    except ValueError:
        raise NetlistError(f"unknown element type '{head.text[0]}'", head.line, head.col) from None
    nodes = tuple(cur.name("node").low for _ in range(NODE_COUNT[kind]))
    el = dict(kind=kind, name=head.low, nodes=nodes, line=head.line)
    if kind in (ElementKind.RESISTOR, ElementKind.CAPACITOR):
        tok = cur.take("value")
        value = _number(tok)
        if value <= 0:
            raise NetlistError("value must be > 0", tok.line, tok.col)
        el["value"] = value
    elif kind in (ElementKind.VSOURCE, ElementKind.ISOURCE):
        el["waveform"] = _parse_source(cur, head)
    else:
        el["model"] = cur.name("model name").low
        if kind is ElementKind.FEFET:
            tok = cur.take("polarization tag (LVT, HVT or a list)")
            if tok.low in ("lvt", "hvt"):
                el["polarization"] = tok.low
            elif tok.text == "(":
                cur.i -= 1
                vals = cur.paren_values()
                if not vals:
                    raise NetlistError("empty polarization list", tok.line, tok.col)
                for t, v in vals:
                    if not -1.0 <= v <= 1.0:
                        raise NetlistError("polarization must lie in [-1, 1]", t.line, t.col)
                el["polarization"] = tuple(v for _, v in vals)
            else:
                raise NetlistError(f"bad polarization tag '{tok.text}'", tok.line, tok.col)
    cur.finish()
    return Element(**el)


def _parse_directive(cur: _Cursor):
    head = cur.take("directive")
    kind = head.low
    if kind == ".tran":
        dtmax, tstop = (cur.take(n) for n in ("dtmax", "tstop"))
        dv, tv = _number(dtmax), _number(tstop)
        if not tv > 0:
            raise NetlistError("tstop must be > 0", tstop.line, tstop.col)
        if not dv > 0:
            raise NetlistError("dtmax must be > 0", dtmax.line, dtmax.col)
        cur.finish()
        return AnalysisDirective(DirectiveKind.TRAN, (dv, tv), head.line)
    if kind == ".dc":
        src = cur.name("source name")
        start, stop, step = (_number(cur.take(n)) for n in ("start", "stop", "step"))
        if step == 0 or (stop - start) * step < 0:
            raise NetlistError("dc step must be nonzero and point from start to stop", head.line, head.col)
        cur.finish()
        return AnalysisDirective(DirectiveKind.DC, (src.low, start, stop, step), head.line)
    if kind == ".op":
        cur.finish()
        return AnalysisDirective(DirectiveKind.OP, (), head.line)
    if kind == ".ic":
        pairs = []
        while not cur.done():
            v = cur.take("v(node)=value")
            if v.low != "v":
                raise NetlistError(f"expected v(node)=value, got '{v.text}'", v.line, v.col)
            cur.expect("(")
            node = cur.name("node").low
            cur.expect(")")
            cur.expect("=")
            pairs.append((node, _number(cur.take("value"))))
        if not pairs:
            raise NetlistError(".ic needs at least one v(node)=value", head.line, head.col)
        return AnalysisDirective(DirectiveKind.IC, tuple(pairs), head.line)
    if kind == ".model":
        name = cur.name("model name").low
        mtype = cur.name("model type")
        if mtype.low not in MODEL_TYPES:
            raise NetlistError(f"unknown model type '{mtype.text}'", mtype.line, mtype.col)
        params = {}
        paren = cur.peek() is not None and cur.peek().text == "("
        if paren:
            cur.take("(")
        while not cur.done():
            key = cur.take("parameter")
            if paren and key.text == ")":
                break
            if key.text == ",":
                continue
            if key.text in "()=":
                raise NetlistError(f"unexpected '{key.text}'", key.line, key.col)
            cur.expect("=")
            val = _number(cur.take("value"))
            if key.low not in MODEL_KEYS:
                raise NetlistError(f"unknown model parameter '{key.text}'", key.line, key.col)
            params[key.low] = val
        else:
            if paren:
                last = cur.toks[-1]
                raise NetlistError("expected ')'", last.line, last.col + len(last.text))
        cur.finish()
        return ModelCard(name, mtype.low, tuple(sorted(params.items())), head.line)
    raise NetlistError(f"unknown directive '{head.text}'", head.line, head.col)


MODEL_TYPES = ("nmos", "pmos", "nfefet", "pfefet")
MODEL_KEYS = ("vth0", "kprime", "n_sub", "lambda", "vt", "mw", "tau0", "v0", "segments")


def parse(text: str) -> Netlist:
    """Parse netlist text. Every error is a NetlistError carrying a line number."""
    if not isinstance(text, str):
        raise NetlistError("netlist must be text")
    title, _, lines = _logical_lines(text)
    elements, directives, models = [], [], []
    names = {}
    for toks in lines:
        cur = _Cursor(toks)
        first = toks[0]
        if first.text.startswith("."):
            if first.low == ".end":
                cur.take("directive")
                cur.finish()
                break
            item = _parse_directive(cur)
            if isinstance(item, ModelCard):
                if any(m.name == item.name for m in models):
                    raise NetlistError(f"duplicate model '{item.name}'", first.line, first.col)
                models.append(item)
            else:
                directives.append(item)
            continue
        el = _parse_element(cur)
        if el.name in names:
            raise NetlistError(f"duplicate element name '{el.name}' (first at line {names[el.name]})",
                               first.line, first.col)
        names[el.name] = first.line
        elements.append(el)
    return Netlist(title or "", tuple(elements), tuple(directives), tuple(models))


# --- unparsing ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_source(w: SourceWaveform) -> str:
    if w.shape == "DC":
        return "dc " + _fmt(w.params[0])
    if w.shape == "PWL":
        return "pwl(" + " ".join(f"{_fmt(t)} {_fmt(v)}" for t, v in w.params) + ")"
    return "pulse(" + " ".join(_fmt(v) for v in w.params) + ")"


def unparse(netlist: Netlist) -> str:
    """Normal form: lowercase names, repr-exact numbers, one card per line."""
    lines = [netlist.title or "untitled"]
    for el in netlist.elements:
        parts = [el.name, *el.nodes]
        if el.kind in (ElementKind.RESISTOR, ElementKind.CAPACITOR):
            parts.append(_fmt(el.value))
        elif el.kind in (ElementKind.VSOURCE, ElementKind.ISOURCE):
            parts.append(_fmt_source(el.waveform))
        else:
            parts.append(el.model)
            if el.kind is ElementKind.FEFET:
                pol = el.polarization
                parts.append(pol if isinstance(pol, str) else "(" + " ".join(_fmt(p) for p in pol) + ")")
        lines.append(" ".join(parts))
    for m in netlist.models:
        body = " ".join(f"{k}={_fmt(v)}" for k, v in m.params)
        lines.append(f".model {m.name} {m.type} ({body})")
    for d in netlist.directives:
        if d.kind is DirectiveKind.TRAN:
            lines.append(f".tran {_fmt(d.params[0])} {_fmt(d.params[1])}")
        elif d.kind is DirectiveKind.DC:
            src, *vals = d.params
            lines.append(f".dc {src} " + " ".join(_fmt(v) for v in vals))
        elif d.kind is DirectiveKind.OP:
            lines.append(".op")
        else:
            lines.append(".ic " + " ".join(f"v({n})={_fmt(v)}" for n, v in d.params))
    lines.append(".end")
    return "\n".join(lines) + "\n"


# --- elaboration -------------------------------------------------------------


class ModelLibrary:
    """Model cards by name; netlist-local cards shadow library cards."""

    def __init__(self, cards=()):
        self.cards = {c.name: c for c in cards}

    @classmethod
    def defaults(cls, cell_config=None) -> "ModelLibrary":
        """Cards 'nch' (access), 'npd' (pull-down), 'pch' and 'pfe' from the calibrated cell."""
        from .cellbench import CellConfig, Topology
        nv = cell_config or CellConfig.from_config(topology=Topology.NVSRAM)
        base = CellConfig.from_config(topology=Topology.BASELINE)

        def card(name, mtype, p: MosfetParams, **extra):
            params = {"vth0": p.vth0, "kprime": p.kprime, "n_sub": p.n_sub, "lambda": p.lam,
                      "vt": p.vt_thermal, **extra}
            return ModelCard(name, mtype, tuple(sorted(params.items())))

        fe = nv.pu_params
        return cls([
            card("nch", "nmos", nv.pg_params),
            card("npd", "nmos", nv.pd_params),
            card("pch", "pmos", base.pu_params),
            card("pfe", "pfefet", fe.base, mw=fe.mw, tau0=fe.kinetics.tau0, v0=fe.kinetics.v0,
                 segments=nv.segments),
        ])

    def merged(self, cards) -> "ModelLibrary":
        out = ModelLibrary(self.cards.values())
        out.cards.update({c.name: c for c in cards})
        return out

    def get(self, name: str) -> ModelCard:
        return self.cards[name]

    def __contains__(self, name) -> bool:
        return name in self.cards


_DEFAULT_KINETICS = None


def _default_kinetics() -> SwitchingKinetics:
    global _DEFAULT_KINETICS
    if _DEFAULT_KINETICS is None:
        _DEFAULT_KINETICS = calibrate_kinetics((4.0, 10e-9), (2.0, 100.0))
    return _DEFAULT_KINETICS


def _device_params(card: ModelCard, line):
    try:
        polarity = Polarity.N if card.type.startswith("n") else Polarity.P
        if card.get("vth0") is None or card.get("kprime") is None:
            raise NetlistError(f"model '{card.name}' needs vth0 and kprime", line)
        base = MosfetParams(polarity, card.get("vth0"), card.get("kprime"), card.get("n_sub", 1.5),
                            card.get("lambda", 0.1), card.get("vt", 0.02585))
        if not card.type.endswith("fefet"):
            return base
        if card.get("mw") is None:
            raise NetlistError(f"FeFET model '{card.name}' needs mw", line)
        kin = _default_kinetics()
        if card.get("tau0") is not None or card.get("v0") is not None:
            kin = SwitchingKinetics(card.get("tau0", kin.tau0), card.get("v0", kin.v0))
        return FeFetParams(base, card.get("mw"), kin)
    except NetlistError:
        raise
    except ValueError as exc:
        raise NetlistError(f"model '{card.name}': {exc}", line) from None


def _initial_state(el: Element, card: ModelCard) -> FeFetState:
    n = int(card.get("segments", 8))
    if el.polarization == "lvt":
        return FeFetState.lvt(n)
    if el.polarization == "hvt":
        return FeFetState.hvt(n)
    return FeFetState(el.polarization)


def elaborate(netlist: Netlist, models: Optional[ModelLibrary] = None) -> Circuit:
    """Build an engine Circuit. Nodes touched only once raise a NetlistWarning."""
    lib = (models or ModelLibrary()).merged(netlist.models)
    refs = {}
    for el in netlist.elements:
        for n in el.nodes:
            refs[n] = refs.get(n, 0) + 1
    if not any(n in GROUND_NAMES for n in refs):
        raise NetlistError("no ground node")
    c = Circuit(netlist.title)
    for el in netlist.elements:
        if el.kind is ElementKind.RESISTOR:
            c.add_resistor(el.name, *el.nodes, el.value)
        elif el.kind is ElementKind.CAPACITOR:
            c.add_capacitor(el.name, *el.nodes, el.value)
        elif el.kind is ElementKind.VSOURCE:
            c.add_vsource(el.name, *el.nodes, el.waveform)
        elif el.kind is ElementKind.ISOURCE:
            c.add_isource(el.name, *el.nodes, el.waveform)
        else:
            if el.model not in lib:
                raise NetlistError(f"unknown model '{el.model}'", el.line)
            card = lib.get(el.model)
            is_fe_card = card.type.endswith("fefet")
            if is_fe_card != (el.kind is ElementKind.FEFET):
                raise NetlistError(f"element '{el.name}' cannot use {card.type} model '{card.name}'", el.line)
            params = _device_params(card, el.line)
            if el.kind is ElementKind.MOSFET:
                c.add_mosfet(el.name, *el.nodes, params)
            else:
                c.add_fefet(el.name, *el.nodes, params, _initial_state(el, card))
    for node, count in sorted(refs.items()):
        if count == 1 and node not in GROUND_NAMES:
            msg = f"node '{node}' has only one connection"
            c.warnings.append(msg)
            warnings.warn(msg, NetlistWarning, stacklevel=2)
    for d in netlist.directives:
        if d.kind is DirectiveKind.IC:
            for node, val in d.params:
                if not c.has_node(node):
                    raise NetlistError(f".ic references unknown node '{node}'", d.line)
                c.ic[node] = val
        else:
            if d.kind is DirectiveKind.DC:
                src = d.params[0]
                if not any(e.name == src and e.kind in (ElementKind.VSOURCE, ElementKind.ISOURCE)
                           for e in netlist.elements):
                    raise NetlistError(f".dc sweeps unknown source '{src}'", d.line)
            c.analyses.append(d)
    return c
