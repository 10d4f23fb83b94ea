"""Command-line entry point: ``dvfstune {simulate,sweep,fit,plan,lbm,report}``.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 analysis failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from . import lbm as lbm_mod
from .exceptions import ConfigError, DvfsError, FitError
from .fitting import KneeRegressor, fit_knee, fit_power_linear, fit_power_superlinear
from .model import HASWELL_LIKE, K80_LIKE, SwitchCost, params_to_dict, roofline_time
from .planner import Objective, fixed_plan, pareto, plan_schedule, savings_report, MIN_TIME
from .simproc import simulate
from .config import load_simulation_file
from .traces import (
    SWEEP_HEADER,
    TRACE_HEADER,
    Marker,
    MarkerKind,
    PowerTrace,
    SweepPoint,
    build_sweep,
    emit_sweep,
    emit_trace,
    format_number,
    parse_sweep,
    parse_trace,
)
from .units import parse_duration, parse_frequency

log = logging.getLogger("dvfstune")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_ANALYSIS = 0, 2, 3, 4

MACHINES = {"k80": K80_LIKE, "haswell": HASWELL_LIKE}

# a density drift above this fails the lbm self-check
DENSITY_TOLERANCE = 1e-12


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def manifest(command, *, config=(), inputs=(), outputs=(), seed=None, **extra):
    m = {
        "command": command,
        "config": [str(p) for p in config],
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": __version__,
    }
    m.update(extra)
    return m


def _manifest_comment(m):
    return "manifest=" + json.dumps(m, sort_keys=True)


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj):
    return json.dumps(obj, indent=2) + "\n"


def _read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _first_data_line(text):
    for line in text.splitlines():
        if not line.startswith("#"):
            return line
    return ""


def load_sweep_inputs(paths):
    """A sweep table from one sweep CSV or from any number of trace CSVs."""
    texts = [_read_text(p) for p in paths]
    headers = {_first_data_line(t) for t in texts}
    if headers == {SWEEP_HEADER}:
        if len(texts) != 1:
            raise ConfigError("give a single sweep CSV (or trace CSVs only)")
        return parse_sweep(texts[0])
    if headers == {TRACE_HEADER}:
        return build_sweep([parse_trace(t) for t in texts])
    raise ConfigError("inputs must be all trace CSVs or a single sweep CSV")


# --- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    phases, cfg = load_simulation_file(args.config, seed=args.seed)
    trace = simulate(phases, cfg)
    m = manifest("simulate", config=[args.config], outputs=[args.output], seed=cfg.seed)
    write_atomic(args.output, emit_trace(trace, comments=[_manifest_comment(m)]))
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

def cmd_sweep(args):
    traces = [parse_trace(_read_text(p)) for p in args.traces]
    table = build_sweep(traces)
    m = manifest("sweep", inputs=args.traces, outputs=[args.output])
    write_atomic(args.output, emit_sweep(table, comments=[_manifest_comment(m)]))
    return EXIT_OK


# --- fit ----------------------------------------------------------------------

def _fit_kernel(rows, args):
    if args.min_freq is not None:
        rows = [r for r in rows if r.f >= args.min_freq]
    if args.max_freq is not None:
        rows = [r for r in rows if r.f <= args.max_freq]
    out = {}
    power_pts = [(r.f, r.p_avg) for r in rows]
    if args.superlinear_from is not None:
        f_knee = args.superlinear_from
        linear = fit_power_linear([p for p in power_pts if p[0] < f_knee])
        power = fit_power_superlinear(power_pts, linear.params, f_knee)
        out["power_linear"] = linear.to_dict()
    else:
        power = fit_power_linear(power_pts)
    out["power"] = power.to_dict()
    perf_model = None
    if args.knee_scan:
        ordered = sorted(rows, key=lambda r: r.f)
        freqs = [r.f for r in ordered]
        est = KneeRegressor().fit(freqs, [r.t_s for r in ordered])
        perf_model = est.to_model()
        out["perf"] = fit_knee([(r.f, r.t_s) for r in ordered]).to_dict()
        out["knee_mhz"] = est.knee_
        out["regimes"] = [
            {"freq_mhz": f, "regime": reg.value} for f, reg in zip(freqs, est.predict_regime(freqs))
        ]
    out["params"] = params_to_dict(power.params, perf_model)
    return out


def cmd_fit(args):
    table = load_sweep_inputs(args.inputs)
    kernels = [args.kernel] if args.kernel else sorted(table)
    if not kernels:
        raise FitError("no kernels in input")
    result = {}
    for k in kernels:
        if k not in table:
            raise FitError(f"kernel {k!r} not found in input")
        result[k] = _fit_kernel(table[k], args)
    m = manifest("fit", inputs=args.inputs, outputs=[args.output] if args.output else [],
                 kernel=args.kernel, knee_scan=args.knee_scan,
                 superlinear_from=args.superlinear_from)
    _emit(args.output, _dump_json({"manifest": m, "kernels": result}))
    return EXIT_OK


def _emit(path, text):
    if path:
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


# --- plan ---------------------------------------------------------------------

def default_idle_power(table):
    """Static power estimate: the smallest fitted intercept over kernels.

    A kernel with too few rows for a fit contributes its lowest average power.
    """
    candidates = []
    for rows in table.values():
        try:
            candidates.append(fit_power_linear([(r.f, r.p_avg) for r in rows]).params.p_static)
        except FitError:
            candidates.append(min(r.p_avg for r in rows))
    return min(candidates)


def cmd_plan(args):
    objective = Objective.parse(args.objective)
    table = load_sweep_inputs([args.sweep])
    if not table:
        raise FitError("empty sweep")
    if args.sweep_iterations < 1:
        raise ConfigError("--sweep-iterations must be >= 1")
    if args.sweep_iterations > 1:
        n = args.sweep_iterations
        table = {k: [SweepPoint(r.f, r.t_s / n, r.e_s / n, r.p_avg) for r in rows] for k, rows in table.items()}
    iteration = args.iteration.split(",") if args.iteration else list(table)
    if args.switch_energy is not None:
        cost = SwitchCost(args.switch_latency, args.switch_energy)
    else:
        idle = args.idle_power if args.idle_power is not None else default_idle_power(table)
        cost = SwitchCost.from_latency(args.switch_latency, idle)
    plan = plan_schedule(table, iteration, args.iterations, cost, objective, fixed_only=args.fixed_only)
    if args.baseline == "min-time":
        baseline = plan_schedule(table, iteration, args.iterations, cost, MIN_TIME, fixed_only=True)
    else:
        grid = sorted(r.f for r in table[iteration[0]])
        f_base = grid[-1] if args.baseline == "max-freq" else parse_frequency(args.baseline)
        baseline = fixed_plan(table, iteration, args.iterations, cost, f_base)
    e_saving, t_cost = savings_report(plan, baseline)
    report = {"e_saving": e_saving, "t_cost": t_cost}
    outputs = [p for p in (args.output, args.report) if p]
    m = manifest("plan", inputs=[args.sweep], outputs=outputs, objective=str(objective),
                 iterations=args.iterations, sweep_iterations=args.sweep_iterations, switch_latency_s=cost.latency,
                 switch_energy_j=cost.energy, baseline=args.baseline, fixed_only=args.fixed_only)
    doc = {
        "manifest": m,
        "objective": str(objective),
        "iteration": iteration,
        "n_iter": args.iterations,
        "switch_cost": cost.to_dict(),
        "plan": plan.to_dict(),
        "baseline": baseline.to_dict(),
        "report": report,
    }
    _emit(args.output, _dump_json(doc))
    if args.report:
        write_atomic(args.report, _dump_json({"manifest": m, **report}))
    return EXIT_OK


# --- lbm ----------------------------------------------------------------------

def _load_velocity_set(path):
    try:
        doc = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return [tuple(v) for v in doc["velocities"]], [float(w) for w in doc["weights"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: velocity set needs 'velocities' and 'weights' ({exc})") from exc


def cmd_lbm(args):
    if args.nx < 1 or args.ny < 1:
        raise ConfigError("lattice dimensions must be >= 1")
    if args.iters < 1:
        raise ConfigError("--iters must be >= 1")
    if args.restore:
        lat = lbm_mod.load_checkpoint(args.restore)
    else:
        if args.velocities:
            velocities, weights = _load_velocity_set(args.velocities)
        elif args.p == 9:
            velocities, weights = lbm_mod.D2Q9_VELOCITIES, lbm_mod.D2Q9_WEIGHTS
        else:
            raise ConfigError(f"no built-in {args.p}-velocity set; pass --velocities FILE")
        if len(velocities) != args.p:
            raise ConfigError(f"--p {args.p} but velocity set has {len(velocities)} entries")
        try:
            lat = lbm_mod.init_lattice(args.nx, args.ny, velocities, weights, args.omega, args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    target = args.intensity if args.intensity > 0 else None
    counters, (prop, coll) = lbm_mod.account(lat, target)
    machine = MACHINES[args.machine]
    freq = machine.f_max if args.freq is None else args.freq
    durations = {"propagate": roofline_time(prop, machine, freq),
                 "collide": roofline_time(coll, machine, freq)}

    # markers run on a modeled clock so the stream is reproducible
    markers = []
    clock = [0.0]

    def hook(kind, kernel, iteration):
        if kind == "end":
            clock[0] += durations[kernel]
        markers.append(Marker(clock[0], kernel, MarkerKind(kind), freq))

    d0 = lat.total_density()
    final = lbm_mod.run(lat, args.iters, hook if args.emit_markers else None, pad=counters.pad)
    d1 = final.total_density()
    drift = abs(d1 - d0) / abs(d0)

    outputs = [p for p in (args.output, args.emit_markers, args.checkpoint) if p]
    m = manifest("lbm", inputs=[args.restore] if args.restore else [], outputs=outputs, seed=lat.seed,
                 nx=lat.nx, ny=lat.ny, p=lat.p, iters=args.iters, machine=machine.name, freq_mhz=freq)
    if args.emit_markers:
        trace = PowerTrace({}, tuple(markers), 1.0, {"clock": "modeled", "machine": machine.name})
        write_atomic(args.emit_markers, emit_trace(trace, comments=[_manifest_comment(m)]))
    if args.checkpoint:
        lbm_mod.save_checkpoint(final, args.checkpoint)

    kernels = {}
    for spec in (prop, coll):
        kernels[spec.name] = {
            "ops": spec.ops, "bytes": spec.bytes, "intensity": spec.intensity,
            "modeled_time_s": durations[spec.name],
        }
    doc = {
        "manifest": m,
        "counters": counters.to_dict(),
        "kernels": kernels,
        "marker_pairs": len(markers) // 2,
        "density": {"initial": d0, "final": d1, "relative_drift": drift,
                    "conserved": drift <= DENSITY_TOLERANCE},
    }
    _emit(args.output, _dump_json(doc))
    if drift > DENSITY_TOLERANCE:
        log.error("density drift %.3g exceeds %.0e", drift, DENSITY_TOLERANCE)
        return EXIT_ANALYSIS
    return EXIT_OK


# --- report -------------------------------------------------------------------

def cmd_report(args):
    table = load_sweep_inputs([args.sweep])
    if not any(table.values()):
        raise FitError("empty sweep")
    m = manifest("report", inputs=[args.sweep], outputs=[args.outdir])
    head = [f"# {_manifest_comment(m)}"]
    et = head + ["kernel,freq_mhz,t_s,e_s"]
    front = list(et)
    ft = head + ["kernel,freq_mhz,f_times_t"]
    for kernel in sorted(table):
        rows = sorted(table[kernel], key=lambda r: r.f)
        for r in rows:
            et.append(f"{kernel},{format_number(r.f)},{format_number(r.t_s)},{format_number(r.e_s)}")
            ft.append(f"{kernel},{format_number(r.f)},{format_number(r.f * r.t_s)}")
        for r in pareto(rows):
            front.append(f"{kernel},{format_number(r.f)},{format_number(r.t_s)},{format_number(r.e_s)}")
    out = Path(args.outdir)
    write_atomic(out / "et_scatter.csv", "\n".join(et) + "\n")
    write_atomic(out / "ft_vs_f.csv", "\n".join(ft) + "\n")
    write_atomic(out / "pareto.csv", "\n".join(front) + "\n")
    return EXIT_OK


# --- wiring -------------------------------------------------------------------

def _duration(text):
    try:
        return parse_duration(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _frequency(text):
    try:
        return parse_frequency(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = _Parser(prog="dvfstune", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="synthesize a power trace from a simulation JSON")
    s.add_argument("config")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int, help="override the seed in the config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="aggregate trace CSVs into a sweep CSV")
    s.add_argument("traces", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("fit", help="fit power (and optionally knee) models")
    s.add_argument("inputs", nargs="+", help="one sweep CSV or several trace CSVs")
    s.add_argument("--kernel")
    s.add_argument("--knee-scan", action="store_true", help="also fit the time-vs-frequency knee")
    s.add_argument("--superlinear-from", type=_frequency, metavar="FREQ",
                   help="fit the linear part below FREQ and an exponential excess from FREQ up")
    s.add_argument("--min-freq", type=_frequency)
    s.add_argument("--max-freq", type=_frequency, help="drop rows above this clock (e.g. TDP-capped)")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("plan", help="choose fixed or per-kernel clocks from a sweep")
    s.add_argument("sweep")
    s.add_argument("--objective", default="min-energy",
                   help="min-energy | min-time | min-edp | energy-under-time-cap:EPS")
    s.add_argument("--switch-latency", type=_duration, default=0.0)
    s.add_argument("--switch-energy", type=float, help="joules per clock change")
    s.add_argument("--idle-power", type=float,
                   help="watts drawn during a clock change when --switch-energy is absent")
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--sweep-iterations", type=int, default=1,
                   help="kernel iterations covered by each sweep row (rows are scaled to one)")
    s.add_argument("--iteration", help="comma-separated kernel order of one iteration")
    s.add_argument("--baseline", default="max-freq", help="max-freq | min-time | FREQ")
    s.add_argument("--fixed-only", action="store_true")
    s.add_argument("-o", "--output")
    s.add_argument("--report")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("lbm", help="run the lattice-Boltzmann mini-app")
    s.add_argument("--nx", type=int, default=128)
    s.add_argument("--ny", type=int, default=128)
    s.add_argument("--p", type=int, default=9)
    s.add_argument("--velocities", help="JSON with 'velocities' and 'weights' for a custom set")
    s.add_argument("--omega", type=float, default=0.8)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--intensity", type=float, default=lbm_mod.DEFAULT_INTENSITY,
                   help="collide intensity target in ops/byte; 0 disables padding")
    s.add_argument("--machine", choices=sorted(MACHINES), default="k80")
    s.add_argument("--freq", type=_frequency)
    s.add_argument("--emit-markers", metavar="PATH")
    s.add_argument("--checkpoint", metavar="PATH", help="write the final lattice here")
    s.add_argument("--restore", metavar="PATH", help="start from this checkpoint")
    s.add_argument("-o", "--output", help="counters JSON (default stdout)")
    s.set_defaults(func=cmd_lbm)

    s = sub.add_parser("report", help="write plot-data CSVs for a sweep")
    s.add_argument("sweep")
    s.add_argument("-o", "--outdir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"dvfstune {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dvfstune {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DvfsError, ValueError) as exc:
        print(f"dvfstune {args.command}: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
