"""Command-line front end.

Exit codes: 0 success, 1 input/usage error, 2 solver error, 3 failed assertions.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, analysis, cellbench
from .cellbench import CellConfig, Report, Topology
from .config import load_config
from .device import FeFetState, SweepProtocol, idvg_sweep
from .engine import SolverConfig
from .engine import SimulationError, dc_operating_point, dc_sweep, transient
from .netlist import DirectiveKind, ModelLibrary, NetlistError, elaborate, parse
from .units import parse_si

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_ASSERT = 0, 1, 2, 3
SCENARIOS = ("write-read", "power-cycle", "restore-matrix", "silicon-protocol", "disturb", "mc-yield")
ANALYSES = ("snm", "idvg", "halid", "mw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _si(text: str) -> float:
    try:
        return parse_si(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _si_list(text: str) -> list:
    return [_si(tok) for tok in text.replace(",", " ").split()]


def _global_options(sub: bool) -> argparse.ArgumentParser:
    # repeated on every subcommand; there the defaults are suppressed so a
    # value given before the subcommand survives
    kw = {"default": argparse.SUPPRESS} if sub else {}
    g = _Parser(add_help=False)
    g.add_argument("--config", help="INI file overriding the defaults", **kw)
    g.add_argument("--out", help="output directory (default: out)", **(kw or {"default": "out"}))
    g.add_argument("--seed", type=int, help="random seed (Monte Carlo)", **kw)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(sub=True)
    p = _Parser(prog="ferrosram", description="FeFET nvSRAM cell simulator and test bench",
                parents=[_global_options(sub=False)])
    p.add_argument("--version", action="version", version=f"ferrosram {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("sim", parents=[common], help="run the analyses in a netlist")
    s.add_argument("netlist")

    b = sub.add_parser("bench", parents=[common], help="run a cell scenario")
    b.add_argument("scenario", help="one of: " + ", ".join(SCENARIOS))
    b.add_argument("--topology", choices=[t.value for t in Topology], default="nvsram")
    b.add_argument("--data", type=int, choices=(0, 1), default=1)
    b.add_argument("--vdd-targets", type=_si_list)
    b.add_argument("--runs", type=int)
    b.add_argument("--sigma-vth", type=_si)
    b.add_argument("--min-yield", type=float, default=0.99)
    b.add_argument("--duration", type=_si, default=1000.0, help="hold time for 'disturb'")
    b.add_argument("--hold-vdd", type=_si, help="supply during 'disturb'")
    b.add_argument("--i-bias", type=_si, help="bitline sink current for the protocol")
    b.add_argument("--workers", type=int, default=1)

    a = sub.add_parser("analyze", parents=[common], help="emit figure data")
    a.add_argument("kind", help="one of: " + ", ".join(ANALYSES))
    a.add_argument("--mode", choices=[m.value for m in analysis.Mode], default="hold")
    a.add_argument("--topology", choices=[t.value for t in Topology], default="nvsram")
    a.add_argument("--state", type=int, choices=(0, 1), default=1)
    a.add_argument("--scheme", choices=("gate", "gate-drain"), default="gate")

    d = sub.add_parser("device", parents=[common], help="single-device shortcuts")
    d.add_argument("kind", choices=("idvg", "halid"))
    d.add_argument("--polarization", choices=("lvt", "hvt"), default="lvt")
    return p


# --- helpers ---------------------------------------------------------------


class _Outputs:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files = []

    def add(self, *paths):
        for p in paths:
            self.files.append(Path(p).name)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.dir / name

    def json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(outs: _Outputs, argv: Sequence[str], cfg, seed) -> None:
    files = sorted({p.name for p in outs.dir.iterdir() if p.is_file()} | {"manifest.json"})
    manifest = {"command": list(argv), "config_digest": cfg.digest(), "seed": seed,
                "version": __version__, "files": files}
    (outs.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _report_exit(reports) -> int:
    failed = [f"{r.scenario}:{name}" for r in reports for name in r.failing()]
    if failed:
        print("assertions failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


# --- commands --------------------------------------------------------------


def cmd_sim(args, cfg, outs: _Outputs) -> int:
    try:
        text = Path(args.netlist).read_text()
    except OSError as exc:
        print(f"cannot read netlist: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        circuit = elaborate(parse(text), ModelLibrary.defaults(CellConfig.from_config(cfg)))
    except NetlistError as exc:
        print(f"{args.netlist}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for w in circuit.warnings:
        print(f"warning: {w}", file=sys.stderr)
    solver = SolverConfig.from_config(cfg)
    try:
        if not circuit.analyses:
            circuit.analyses.append(None)
        for k, d in enumerate(circuit.analyses):
            suffix = "" if len(circuit.analyses) == 1 else f"_{k}"
            if d is None or d.kind is DirectiveKind.OP:
                op = dc_operating_point(circuit, solver)
                outs.json(f"op{suffix}.json", {
                    "node_voltages": {n: float(f"{v:.9g}") for n, v in op.node_voltages.items()},
                    "branch_currents": {s.name: float(f"{op.i(s.name):.9g}") for s in circuit.vsources}})
            elif d.kind is DirectiveKind.TRAN:
                dtmax, tstop = d.params
                wave = transient(circuit, tstop, dataclasses.replace(solver, dtmax=dtmax))
                wave.to_csv(outs.path(f"tran{suffix}.csv"))
            elif d.kind is DirectiveKind.DC:
                src, start, stop, step = d.params
                sw = dc_sweep(circuit, src, start, stop, step, solver)
                cols = {f"{src}_volts": sw.values}
                cols.update({f"v({n})": sw.v(n) for n in circuit.node_names})
                analysis.write_curve_csv(outs.path(f"dc{suffix}.csv"), cols)
    except SimulationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench(args, cfg, outs: _Outputs) -> int:
    if args.scenario not in SCENARIOS:
        print(f"unknown scenario '{args.scenario}'; valid: {', '.join(SCENARIOS)}", file=sys.stderr)
        return EXIT_INPUT
    if args.vdd_targets:
        cfg.set("protocol", "targets", ", ".join(repr(v) for v in args.vdd_targets))
    if args.i_bias is not None:
        cfg.set("protocol", "i_bias", repr(args.i_bias))
    config = CellConfig.from_config(cfg, args.topology)
    reports = []
    name = args.scenario.replace("-", "_")
    bit = args.data
    if args.scenario == "write-read":
        state = cellbench.programmed_state(config, 1 - bit) if config.is_nv else cellbench.fresh_state(config, 1 - bit)
        state, wrep = cellbench.run_write(config, state, bit)
        _, value, rrep = cellbench.run_read(config, state)
        reports += [wrep, rrep]
    elif args.scenario == "power-cycle":
        state = cellbench.programmed_state(config, bit) if config.is_nv else cellbench.fresh_state(config, bit)
        off, prep = cellbench.run_power_off(config, state)
        _, r1 = cellbench.run_restore_one_step(config, off)
        _, r2 = cellbench.run_restore_two_phase(config, off)
        reports += [prep, r1, r2]
    elif args.scenario in ("restore-matrix", "silicon-protocol"):
        bits = (1, 0) if args.scenario == "restore-matrix" else (bit,)
        for b in bits:
            state = cellbench.programmed_state(config, b)
            trace = cellbench.run_silicon_protocol(config, state)
            outs.add(*analysis.emit_fig9(trace, outs.dir, stem=f"fig9_stored{b}"))
            rep = Report(f"silicon_protocol_stored{b}", {"correct": trace.correct_count,
                                                         "total": len(trace.readouts),
                                                         "weak": sum(r["weak"] for r in trace.readouts)})
            rep.assertions["all_latches_correct"] = trace.correct_count == len(trace.readouts)
            reports.append(rep)
    elif args.scenario == "disturb":
        state = cellbench.programmed_state(config, bit)
        _, rep = cellbench.run_hold_disturb(config, state, args.duration, args.hold_vdd)
        rep.assertions["opposing_below_1pct"] = rep.metrics["opposing_fraction"] < 0.01
        reports.append(rep)
    else:
        runs = args.runs if args.runs is not None else cfg.int("montecarlo", "runs")
        sigma = args.sigma_vth if args.sigma_vth is not None else cfg.float("montecarlo", "sigma_vth")
        seed = args.seed if args.seed is not None else cfg.int("montecarlo", "seed")
        mc = cellbench.monte_carlo_restore(config, sigma, runs, seed,
                                           cfg.float("montecarlo", "sigma_mw_rel"), args.workers)
        rep = Report("mc_yield", mc.to_dict())
        rep.assertions["yield_at_least_min"] = mc.yield_fraction >= args.min_yield
        reports.append(rep)
    summary = {"scenario": args.scenario, "topology": config.topology.value,
               "passed": all(r.passed for r in reports), "reports": [r.to_dict() for r in reports]}
    outs.json(f"{name}.json", summary)
    return _report_exit(reports)


def cmd_analyze(args, cfg, outs: _Outputs) -> int:
    if args.kind not in ANALYSES:
        print(f"unknown analysis '{args.kind}'; valid: {', '.join(ANALYSES)}", file=sys.stderr)
        return EXIT_INPUT
    if args.kind == "halid":
        kin = CellConfig.from_config(cfg).pu_params.kinetics
        outs.add(*analysis.emit_fig10(kin, outs.dir, clamp=cfg.float("analysis", "halid_clamp")))
        return EXIT_OK
    config = CellConfig.from_config(cfg, args.topology if args.kind == "snm" else "nvsram")
    if args.kind == "snm":
        if config.is_nv:
            state = cellbench.programmed_state(config, args.state)
        else:
            state = cellbench.fresh_state(config, args.state)
        res = analysis.butterfly(config, state, args.mode, step=cfg.float("analysis", "sweep_step"))
        outs.add(*analysis.emit_fig7(res, outs.dir, stem=f"fig7_{args.topology}_{args.mode}_state{args.state}"))
        return EXIT_OK
    i_crit = cfg.float("analysis", "i_crit")
    if args.kind == "idvg":
        outs.add(*analysis.emit_fig3(config, outs.dir, i_crit))
        outs.add(*analysis.emit_fig5(config, outs.dir))
        return EXIT_OK
    curves = analysis.programming_scheme_curves(config.pu_params, config.t_program, i_crit=i_crit)
    c = curves[args.scheme]
    outs.json(f"mw_{args.scheme}.json", analysis._jsonable({
        "scheme": args.scheme, "mw_volts": c.meta["mw"], "i_crit_amperes": i_crit,
        "i_at_vgs0_amperes": c.meta["i_vgs0"]}))
    cols = {"vg_volts": c.x, "id_lvt_amperes": curves["lvt"].y, f"id_{args.scheme}_amperes": c.y}
    analysis.write_curve_csv(outs.path(f"mw_{args.scheme}.csv"), cols)
    return EXIT_OK


def cmd_device(args, cfg, outs: _Outputs) -> int:
    config = CellConfig.from_config(cfg)
    if args.kind == "halid":
        outs.add(*analysis.emit_fig10(config.pu_params.kinetics, outs.dir,
                                      clamp=cfg.float("analysis", "halid_clamp")))
        return EXIT_OK
    state = FeFetState.lvt(config.segments) if args.polarization == "lvt" else FeFetState.hvt(config.segments)
    curve, _ = idvg_sweep(config.pu_params, state, SweepProtocol(1.0, -1.5, -0.05, vds=-0.05, vs=0.8))
    analysis.write_curve_csv(outs.path(f"idvg_{args.polarization}.csv"),
                             {"vg_volts": curve.x, "id_amperes": curve.y})
    return EXIT_OK


COMMANDS = {"sim": cmd_sim, "bench": cmd_bench, "analyze": cmd_analyze, "device": cmd_device}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outs = _Outputs(out_dir)
    try:
        code = COMMANDS[args.command](args, cfg, outs)
    except SimulationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    _write_manifest(outs, argv, cfg, args.seed)
    return code


if __name__ == "__main__":
    sys.exit(main())
