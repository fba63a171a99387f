"""Command-line front end.

Every subcommand writes ``<out>/<command>.json`` with the top-level layout
``{version, manifest, verdict?, series?, pliss?, evidence?}`` and, where a
series exists, ``<out>/<command>.csv``. The manifest is sufficient to rerun
the command (``hyptimes replay``) and reproduce both files byte for byte.

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 inconclusive
verdict under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (ClassifyConfig, _clean, classify_trajectory, probe_grid,
                       return_map_contraction, section_disk)
from .expr import ExpressionError, compile_expression
from .flow import NumericalError, integrate, iterate
from .hyptimes import (HypothesisViolation, NonInvertibleError, auto_zeta, block_exponent_series,
                       detect_lpf_reverse_hyperbolic_times)
from .linalg import singular_values
from .lpf import NearSingularityError, lpf_cocycle, sectional_exponents
from .pliss import flow_pliss_set, pliss_times, reverse_pliss_times
from .systems import ConfigError, load_system, rebuild

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4


class InputError(ValueError):
    """Bad command-line input; reported with exit code 2."""


# ----------------------------------------------------------------- output


def format_float(v) -> str:
    """Shortest decimal string that parses back to the same double."""
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue(), newline="")


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(_clean(obj), sort_keys=True).encode()).hexdigest()


def make_manifest(command: str, system_spec, config: dict) -> dict:
    body = {"command": command, "system": system_spec, "config": config}
    return {**body, "tool_version": __version__, "input_hash": content_hash(body)}


# ------------------------------------------------------------------ input


def parse_vector(text: str | None, name: str) -> list[float] | None:
    if text is None:
        return None
    try:
        vals = [float(s) for s in str(text).replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise InputError(f"{name} must be comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise InputError(f"{name} must be finite numbers, got {text!r}")
    return vals


def parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise InputError(f"--param expects name=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            out[key.strip()] = val
    return out


def parse_grid(text: str, dim: int) -> list[int]:
    try:
        counts = [int(s) for s in text.lower().split("x")]
    except ValueError:
        raise InputError(f"--grid must look like 20x20, got {text!r}") from None
    if len(counts) == 1:
        counts = counts * dim
    if len(counts) != dim or min(counts) < 1:
        raise InputError(f"--grid needs {dim} positive counts, got {text!r}")
    return counts


def grid_points(box, counts) -> np.ndarray:
    """Cell centres, row-major over the axes (cell index = C order)."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes = [probe_grid(([lo[i]], [hi[i]]), n)[:, 0] for i, n in enumerate(counts)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)


def _positive(value, name):
    if value is None or not (value > 0 and math.isfinite(value)):
        raise InputError(f"{name} must be a positive finite number")
    return value


def _system_from_config(config: dict):
    spec = config["system"]
    if isinstance(spec, dict):
        return rebuild(spec)
    return load_system(spec, config.get("params") or None)


def _x0(config: dict, system) -> np.ndarray:
    if config.get("x0") is None:
        raise InputError("--x0 is required")
    x0 = np.asarray(config["x0"], dtype=float)
    if x0.shape != (system.dimension,):
        raise InputError(f"--x0 has {x0.size} entries, system dimension is {system.dimension}")
    return x0


def _orbit(system, config: dict, variational: bool):
    x0 = _x0(config, system)
    T = _positive(config.get("T"), "--T")
    if system.is_flow:
        dt = _positive(config.get("dt"), "--dt")
        return integrate(system, x0, T, dt, with_variational=variational)
    if T != int(T):
        raise InputError("--T is an iterate count for maps")
    return iterate(system, x0, int(T), with_jacobians=variational)


# --------------------------------------------------------------- commands


def run_simulate(config: dict) -> dict:
    system = _system_from_config(config)
    seg = _orbit(system, config, bool(config.get("variational")))
    d = system.dimension
    header = ["t"] + [f"x_{i + 1}" for i in range(d)]
    cols = [seg.times[:, None], seg.states]
    if seg.fundamentals is not None:
        header += [f"Z_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        cols.append(seg.fundamentals.reshape(len(seg), d * d))
    return {"csv": (header, np.hstack(cols)),
            "report": {"evidence": {"final_state": seg.states[-1], "samples": len(seg)}}}


def run_exponents(config: dict) -> dict:
    system = _system_from_config(config)
    seg = _orbit(system, config, True)
    if system.is_flow:
        t = seg.times[1:]
        s = singular_values(seg.fundamentals[1:])
        top, bottom = np.log(s[:, 0]) / t, np.log(s[:, -1]) / t
        w0 = config.get("window") or [max(1.0, 0.5 * t[-1]), t[-1]]
        mask = (t >= w0[0] - 1e-12) & (t <= w0[1] + 1e-12)
        if not mask.any():
            raise InputError("exponent window contains no samples")
        series = {"chi_G": {"liminf_estimate": top[mask].min(), "limsup_estimate": top[mask].max(),
                            "window": w0},
                  "chi_G_conorm": {"liminf_estimate": bottom[mask].min(),
                                   "limsup_estimate": bottom[mask].max(), "window": w0}}
        rows = np.column_stack([t, top, bottom])
        header = ["T", "log_norm_over_T", "log_conorm_over_T"]
    else:
        k = int(config.get("k") or 1)
        fwd = block_exponent_series(seg, k, "forward")
        series = {"forward": fwd.to_dict()}
        cols = [np.arange(1, fwd.partial_averages.size + 1) * float(k), fwd.partial_averages]
        header = ["n", "forward_average"]
        try:
            inv = block_exponent_series(seg, k, "inverse")
            series["inverse"] = inv.to_dict()
            cols.append(inv.partial_averages)
            header.append("inverse_average")
        except NonInvertibleError as exc:
            series["inverse"] = {"unavailable": str(exc)}
        rows = np.column_stack(cols)
    return {"csv": (header, rows), "report": {"series": series}}


def run_lpf(config: dict) -> dict:
    system = _system_from_config(config)
    if not system.is_flow:
        raise InputError("lpf requires a vector field")
    seg = _orbit(system, config, True)
    cocycle = lpf_cocycle(seg, system)
    T = seg.times[-1]
    window = config.get("window") or [max(1.0, 0.25 * T), T]
    sec = sectional_exponents(cocycle, window)
    con = sectional_exponents(cocycle, window, conorm=True)
    zeta = config.get("zeta") or auto_zeta(sec.liminf_estimate)
    record = None
    if zeta > 0:
        L = system.jacobian_bound_L or 1.0
        record = detect_lpf_reverse_hyperbolic_times(cocycle, zeta, L).to_dict()
    t = cocycle.times
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(t > 0, cocycle.log_norms / np.where(t > 0, t, 1.0), 0.0)
    rows = np.column_stack([t, cocycle.log_norms, cocycle.log_conorms, rate])
    return {"csv": (["T", "log_norm", "log_conorm", "log_norm_over_T"], rows),
            "report": {"series": {"sectional": sec.to_dict(), "sectional_conorm": con.to_dict()},
                       "evidence": {"reverse_hyperbolic_times": record, "zeta": zeta}}}


def run_pliss(config: dict) -> dict:
    if config.get("function") is not None:
        T = _positive(config.get("T"), "--T")
        step = _positive(config.get("step"), "--step")
        n = int(round(T / step))
        if abs(n * step - T) > 1e-9 * T:
            raise InputError("--T must be a multiple of --step")
        h = compile_expression(config["function"], ["t"], config.get("params") or {})
        times = np.linspace(0.0, T, n + 1)
        samples = np.array([h([s]) for s in times])
        res = flow_pliss_set(samples, config["c"], config["eps"], config.get("A"), T=T)
        rows = np.column_stack([times, samples, np.isin(np.arange(n + 1), res.indices)])
        header = ["t", "H", "selected"]
    else:
        seq = config.get("sequence")
        if seq is None:
            raise InputError("pliss needs --sequence or --function")
        a = np.asarray(seq, dtype=float)
        fn = reverse_pliss_times if config.get("reverse") else pliss_times
        res = fn(a, config["c1"], config["c2"], config["H"])
        rows = np.column_stack([np.arange(a.size), a, np.isin(np.arange(a.size), res.indices)])
        header = ["n", "a", "selected"]
    rows = [[int(r[0]) if header[0] == "n" else r[0], r[1], int(r[2])] for r in rows]
    return {"csv": (header, rows), "report": {"pliss": res.to_dict()}}


def _classify_cell(args):
    spec, x0, cfg = args
    system = rebuild(spec)
    try:
        return classify_trajectory(system, x0, cfg).to_dict()
    except (NumericalError, NearSingularityError, HypothesisViolation) as exc:
        return {"verdict": "inconclusive", "evidence": {}, "exponents": {},
                "hyperbolic_times_used": None, "caveats": [f"numeric failure: {exc}"]}


def worker_count() -> int:
    env = os.environ.get("HYPTIMES_THREADS")
    if env is None:
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise InputError(f"HYPTIMES_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise InputError("HYPTIMES_THREADS must be >= 1")
    return n


def run_classify(config: dict) -> dict:
    system = _system_from_config(config)
    try:
        cfg = ClassifyConfig.from_dict(config.get("classify"))
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    if config.get("grid") is None:
        rep = classify_trajectory(system, _x0(config, system), cfg).to_dict()
        return {"report": {"verdict": rep["verdict"], "evidence": rep}, "verdicts": [rep["verdict"]]}
    box = config.get("box") or system.probe_box
    if box is None:
        raise InputError("--grid needs --box for systems without a probe box")
    counts = parse_grid(config["grid"], system.dimension)
    points = grid_points(box, counts)
    jobs = [(system.spec, p, cfg.to_dict()) for p in points]
    n = min(worker_count(), len(jobs))
    if n <= 1:
        cells = [_classify_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            # map() yields in submission order, so output follows cell index
            cells = list(pool.map(_classify_cell, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    verdicts = [c["verdict"] for c in cells]
    counts_by = {v: verdicts.count(v) for v in sorted(set(verdicts))}
    rows = []
    d = system.dimension
    for i, (p, c) in enumerate(zip(points, cells)):
        ev = c.get("evidence", {})
        loc = ev.get("point", ev.get("periodic_point", ev.get("equilibrium", {}).get("point")
                                     if isinstance(ev.get("equilibrium"), dict) else None))
        loc = list(loc) if isinstance(loc, (list, tuple)) and len(loc) == d else [""] * d
        rows.append([i, *map(float, p), c["verdict"], *loc])
    header = ["cell"] + [f"x0_{i + 1}" for i in range(d)] + ["verdict"] + \
        [f"located_{i + 1}" for i in range(d)]
    evidence = {"grid": counts, "box": [list(box[0]), list(box[1])], "counts": counts_by,
                "cells": [{"cell": i, "x0": p, **c} for i, (p, c) in enumerate(zip(points, cells))]}
    return {"csv": (header, rows), "report": {"verdict": counts_by, "evidence": evidence},
            "verdicts": verdicts}


def run_section(config: dict) -> dict:
    system = _system_from_config(config)
    if not system.is_flow:
        raise InputError("section requires a vector field")
    x0 = _x0(config, system)
    disk = section_disk(system, x0, config.get("rho") or 1.0)
    rm = return_map_contraction(system, disk, cap=_positive(config.get("cap"), "--cap"),
                                dt=_positive(config.get("dt"), "--dt"))
    return {"report": {"evidence": {"disk": {"centre": disk.center,
                                             "normal": disk.normal, "radius": disk.radius},
                                    "return_map": rm}}}


RUNNERS = {
    "simulate": run_simulate,
    "exponents": run_exponents,
    "lpf": run_lpf,
    "pliss": run_pliss,
    "classify": run_classify,
    "section": run_section,
}


def execute(command: str, config: dict, out: Path) -> dict:
    """Run ``command`` with a normalized ``config`` and write its files."""
    system_spec = None
    if "system" in config:
        system = _system_from_config(config)
        system_spec = system.spec
        config = {**config, "system": system_spec, "params": None}
    manifest = make_manifest(command, system_spec, config)
    result = RUNNERS[command](config)
    out.mkdir(parents=True, exist_ok=True)
    report = {"version": SCHEMA_VERSION, "manifest": manifest, **result.get("report", {})}
    if "csv" in result:
        header, rows = result["csv"]
        write_csv(out / f"{command}.csv", header, rows)
    (out / f"{command}.json").write_text(dump_json(report))
    return {"report": report, "verdicts": result.get("verdicts", [])}


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hyptimes", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, orbit=True):
        sp.add_argument("--system", required=True, help="builtin name or TOML/JSON file")
        sp.add_argument("--param", action="append", metavar="NAME=VALUE",
                        help="system parameter (repeatable; values parsed as JSON)")
        sp.add_argument("--out", default="hyptimes_out", help="output directory")
        if orbit:
            sp.add_argument("--x0", help="initial point, comma separated")
            sp.add_argument("--T", type=float, help="horizon (time for flows, iterates for maps)")
            sp.add_argument("--dt", type=float, default=1e-3, help="RK4 step (flows)")

    sp = sub.add_parser("simulate", help="trajectory CSV")
    common(sp)
    sp.add_argument("--variational", action="store_true", help="also write D phi_t row-major")

    sp = sub.add_parser("exponents", help="finite-time exponent series")
    common(sp)
    sp.add_argument("--k", type=int, default=1, help="block length (maps)")
    sp.add_argument("--window", help="T0,T1 for the extremes (flows)")

    sp = sub.add_parser("lpf", help="linear Poincare flow and reverse hyperbolic times")
    common(sp)
    sp.add_argument("--window", help="T0,T1 for the sectional exponents")
    sp.add_argument("--zeta", type=float, help="hyperbolic-time rate (default 0.9 |liminf|)")

    sp = sub.add_parser("pliss", help="Pliss times of a sequence or a sampled function")
    sp.add_argument("--out", default="hyptimes_out")
    sp.add_argument("--sequence", help="comma-separated a_0..a_{N-1}")
    sp.add_argument("--c1", type=float)
    sp.add_argument("--c2", type=float)
    sp.add_argument("--H", type=float, help="upper bound of the sequence")
    sp.add_argument("--reverse", action="store_true", help="reverse Pliss times")
    sp.add_argument("--function", help="expression in t, e.g. 'log(1+t)'")
    sp.add_argument("--c", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--A", type=float, help="strict lower bound of H' (estimated if omitted)")
    sp.add_argument("--T", type=float)
    sp.add_argument("--step", type=float, default=1e-3)

    sp = sub.add_parser("classify", help="classify one orbit or a grid of initial points")
    common(sp, orbit=False)
    sp.add_argument("--x0")
    sp.add_argument("--grid", help="cell counts per axis, e.g. 20x20")
    sp.add_argument("--box", help="lo1,..;hi1,.. grid box (defaults to the system probe box)")
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--zeta", type=float)
    sp.add_argument("--threshold", type=float, default=1e-2, help="exponent threshold")
    sp.add_argument("--strict", action="store_true", help="exit 4 on any inconclusive verdict")

    sp = sub.add_parser("section", help="return map on a transverse disk")
    common(sp, orbit=False)
    sp.add_argument("--x0", help="disk centre")
    sp.add_argument("--rho", type=float, default=1.0)
    sp.add_argument("--cap", type=float, default=100.0, help="return time cap")
    sp.add_argument("--dt", type=float, default=1e-3)

    sp = sub.add_parser("replay", help="rerun a manifest from a JSON report")
    sp.add_argument("report", help="report or manifest JSON")
    sp.add_argument("--out", default="hyptimes_out")
    sp.add_argument("--strict", action="store_true")
    return p


def _window(text):
    w = parse_vector(text, "--window")
    if w is not None and len(w) != 2:
        raise InputError("--window needs two values")
    return w


def config_from_args(args) -> dict:
    """Normalized, JSON-serializable settings of one invocation."""
    cmd = args.command
    if cmd == "pliss":
        cfg = {"step": args.step}
        if args.function is not None:
            for name in ("c", "eps", "T"):
                if getattr(args, name) is None:
                    raise InputError(f"--function needs --{name}")
            cfg.update(function=args.function, c=args.c, eps=args.eps, A=args.A, T=args.T)
        else:
            for name in ("sequence", "c1", "c2", "H"):
                if getattr(args, name) is None:
                    raise InputError(f"pliss needs --{name} (or --function)")
            cfg.update(sequence=parse_vector(args.sequence, "--sequence"), c1=args.c1,
                       c2=args.c2, H=args.H, reverse=args.reverse)
        return cfg
    cfg = {"system": args.system, "params": parse_params(args.param)}
    if cmd in ("simulate", "exponents", "lpf"):
        if args.x0 is None:
            raise InputError("--x0 is required")
        cfg.update(x0=parse_vector(args.x0, "--x0"), T=args.T, dt=args.dt)
        if args.T is None:
            raise InputError("--T is required")
        _positive(args.dt, "--dt")
    if cmd == "simulate":
        cfg["variational"] = args.variational
    elif cmd == "exponents":
        cfg.update(k=args.k, window=_window(args.window))
    elif cmd == "lpf":
        cfg.update(window=_window(args.window), zeta=args.zeta)
    elif cmd == "classify":
        if (args.x0 is None) == (args.grid is None):
            raise InputError("classify needs exactly one of --x0 and --grid")
        _positive(args.dt, "--dt")
        box = None
        if args.box is not None:
            lo, sep, hi = args.box.partition(";")
            if not sep:
                raise InputError("--box must look like lo1,lo2;hi1,hi2")
            box = [parse_vector(lo, "--box"), parse_vector(hi, "--box")]
        cfg.update(x0=parse_vector(args.x0, "--x0"), grid=args.grid, box=box,
                   classify={"horizon": args.horizon, "dt": args.dt, "zeta": args.zeta,
                             "exponent_threshold": args.threshold})
    elif cmd == "section":
        cfg.update(x0=parse_vector(args.x0, "--x0"), rho=args.rho, cap=args.cap, dt=args.dt)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            doc = json.loads(Path(args.report).read_text())
            manifest = doc.get("manifest", doc)
            command, config = manifest["command"], dict(manifest["config"])
            if command not in RUNNERS:
                raise InputError(f"unknown command {command!r} in manifest")
        else:
            command, config = args.command, config_from_args(args)
        result = execute(command, config, Path(args.out))
    except InputError as exc:
        print(f"hyptimes: input error: {exc} (usage: hyptimes {args.command} --help)",
              file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ExpressionError, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"hyptimes: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"hyptimes: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, NearSingularityError, HypothesisViolation, FloatingPointError,
            OverflowError, ZeroDivisionError) as exc:
        print(f"hyptimes: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    strict = getattr(args, "strict", False)
    if strict and "inconclusive" in result["verdicts"]:
        print("hyptimes: inconclusive verdict under --strict", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
