"""Command line: run, calibrate, compare and sweep.

Exit codes: 0 success, 1 invalid scenario (or differing traces for
``compare``), 2 run failure, 3 calibration targets missed.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import copy
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np
import yaml

from .calibrate import CalibrationTargets, calibrate
from .fixtures import GcmParameters, case_spec, gcm_network
from .scenario import RunFailure, ScenarioError, run
from .scenario_io import (
    ScenarioParseError,
    dump_scenario,
    fingerprint,
    loads_scenario,
    read_trace_csv,
    spec_from_doc,
    to_doc,
    write_outputs,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUN_FAILURE = 2
EXIT_CALIBRATION_MISS = 3

OUT_ENV = "SERIESCOMP_OUT_DIR"

log = logging.getLogger("seriescomp")


def default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / name


# ---------------------------------------------------------------- run


def run_file(path: Path, out: Path, plots: bool = False) -> tuple[int, dict | None]:
    """Load, run and persist one scenario file; returns (exit code, summary)."""
    try:
        text = path.read_text(encoding="utf-8")
        spec = loads_scenario(text, str(path))
    except (ScenarioParseError, ScenarioError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID, None
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID, None
    return _run_spec(spec, fingerprint(text), out, plots)


def _run_spec(spec, spec_fingerprint: str, out: Path, plots: bool) -> tuple[int, dict | None]:
    try:
        result = run(spec)
    except RunFailure as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE, None
    artifacts = write_outputs(result, out, spec_fingerprint, spec, plots=plots)
    log.info("wrote %s", artifacts.trace.parent)
    code = EXIT_OK if result.status == "completed" else EXIT_RUN_FAILURE
    if code:
        print(f"run {result.status}: see {artifacts.events}", file=sys.stderr)
    return code, result.summary


def cmd_run(args) -> int:
    path = Path(args.spec)
    out = Path(args.out) if args.out else default_out(path.stem)
    code, summary = run_file(path, out, args.plots)
    if summary is not None:
        print(_summary_line(summary))
    return code


def _summary_line(summary: dict) -> str:
    parts = [f"{summary['scenario'] or 'scenario'}: {summary['steps']} steps, status {summary['status']}"]
    for line_id, s in summary["lines"].items():
        flag = " OVERLOAD" if s["overload"] else ""
        parts.append(f"  {line_id}: max {s['max_i_kA']:.4f} kA, final {s['final_window_max_phase_i_kA']:.4f} kA{flag}")
    return "\n".join(parts)


# ---------------------------------------------------------------- calibrate


def load_targets(path: Path) -> CalibrationTargets:
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: expected a mapping")
    known = set(CalibrationTargets.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"{path}: unknown keys {', '.join(unknown)}")
    if "prefault_bands_ka" in doc:
        doc["prefault_bands_ka"] = {k: tuple(v) for k, v in doc["prefault_bands_ka"].items()}
    return CalibrationTargets(**doc)


def cmd_calibrate(args) -> int:
    try:
        targets = load_targets(Path(args.targets)) if args.targets else CalibrationTargets()
        problems = targets.violations()
        if problems:
            raise ValueError("; ".join(problems))
    except (OSError, ValueError, TypeError) as exc:
        print(f"invalid targets: {exc}", file=sys.stderr)
        return EXIT_INVALID
    params = GcmParameters()
    result = calibrate(targets, params, confirm=not args.no_confirm)
    doc = {"angle_spread_rad": result.angle_spread_rad, "parameters": to_doc(params), "checks": result.as_dict()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    for msg in result.messages:
        print(msg, file=sys.stderr)
    if not result.feasible:
        return EXIT_CALIBRATION_MISS
    print(f"angle spread {result.angle_spread_deg:.6f} deg; post-contingency {result.predicted_post_ka:.4f} kA; "
          f"with devices {result.predicted_with_devices_ka:.4f} kA")
    if args.cases_dir:
        cases = Path(args.cases_dir)
        cases.mkdir(parents=True, exist_ok=True)
        network = gcm_network(result.angle_spread_rad, params)
        for case in (1, 2, 3):
            (cases / f"case{case}.yaml").write_text(dump_scenario(case_spec(case, network, params)), encoding="utf-8")
        print(f"wrote case1..3 scenarios to {cases}")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def compare_traces(a: Path, b: Path, rtol: float = 0.0, atol: float = 0.0, columns: list[str] | None = None) -> list[str]:
    """Field-wise differences between two run directories (or trace files)."""
    ta = a / "trace.csv" if a.is_dir() else a
    tb = b / "trace.csv" if b.is_dir() else b
    ha, da = read_trace_csv(ta)
    hb, db = read_trace_csv(tb)
    diffs = []
    if ha != hb:
        only_a = sorted(set(ha) - set(hb))
        only_b = sorted(set(hb) - set(ha))
        if only_a or only_b:
            diffs.append(f"column sets differ: only in A {only_a}, only in B {only_b}")
    if da.shape[0] != db.shape[0]:
        diffs.append(f"row count differs: {da.shape[0]} vs {db.shape[0]}")
    n = min(da.shape[0], db.shape[0])
    for name in columns or ha:
        if name not in ha or name not in hb:
            continue
        x = da[:n, ha.index(name)]
        y = db[:n, hb.index(name)]
        bad = ~np.isclose(x, y, rtol=rtol, atol=atol, equal_nan=True)
        if bad.any():
            k = int(np.argmax(bad))
            worst = float(np.max(np.abs(x - y)))
            diffs.append(f"{name}: {int(bad.sum())} rows differ, first at row {k} ({x[k]!r} vs {y[k]!r}), max |diff| {worst:.6g}")
    return diffs


def cmd_compare(args) -> int:
    try:
        diffs = compare_traces(Path(args.run_a), Path(args.run_b), args.rtol, args.atol, args.columns)
    except OSError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    for d in diffs:
        print(d)
    if not diffs:
        print("traces match")
    return EXIT_OK if not diffs else EXIT_INVALID


# ---------------------------------------------------------------- sweep

_PATH_TOKEN = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def set_path(doc, path: str, value):
    """Set ``a.b[2].c`` in a nested document (in place)."""
    tokens = [m.group(1) if m.group(1) is not None else int(m.group(2)) for m in _PATH_TOKEN.finditer(path)]
    if not tokens:
        raise KeyError(f"empty parameter path {path!r}")
    node = doc
    for tok in tokens[:-1]:
        if isinstance(tok, str) and tok.isdigit() and isinstance(node, list):
            tok = int(tok)
        try:
            node = node[tok]
        except (KeyError, IndexError, TypeError):
            raise KeyError(f"parameter path {path!r}: no element {tok!r}") from None
    last = tokens[-1]
    if isinstance(last, str) and last.isdigit() and isinstance(node, list):
        last = int(last)
    if isinstance(node, dict) and isinstance(last, str) or isinstance(node, list) and isinstance(last, int) and last < len(node):
        node[last] = value
    else:
        raise KeyError(f"parameter path {path!r}: cannot set {last!r}")


def _sweep_one(job: tuple[str, str, str]) -> tuple[str, int, dict | None]:
    text, label, out = job
    try:
        spec = loads_scenario(text, label)
    except (ScenarioParseError, ScenarioError) as exc:
        print(exc, file=sys.stderr)
        return label, EXIT_INVALID, None
    code, summary = _run_spec(spec, fingerprint(text), Path(out), plots=False)
    return label, code, summary


def cmd_sweep(args) -> int:
    path = Path(args.spec)
    try:
        base = yaml.safe_load(path.read_text(encoding="utf-8"))
        spec_from_doc(copy.deepcopy(base), str(path))
    except (ScenarioParseError, ScenarioError, yaml.YAMLError, OSError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    root = Path(args.out) if args.out else default_out(f"{path.stem}_sweep")
    jobs = []
    for v in values:
        doc = copy.deepcopy(base)
        try:
            set_path(doc, args.param, v)
        except KeyError as exc:
            print(exc, file=sys.stderr)
            return EXIT_INVALID
        label = f"{args.param}={v}"
        safe = re.sub(r"[^A-Za-z0-9_.=+-]", "_", label)
        jobs.append((yaml.safe_dump(doc, sort_keys=False), label, str(root / safe)))
    worst = EXIT_OK
    workers = args.jobs or min(len(jobs), os.cpu_count() or 1)
    with concurrent.futures.ProcessPoolExecutor(max_workers=max(1, workers)) as pool:
        for label, code, summary in pool.map(_sweep_one, jobs):
            worst = max(worst, code)
            if summary is None:
                print(f"{label}: failed (exit {code})")
                continue
            finals = ", ".join(f"{k} {s['final_window_max_phase_i_kA']:.4f}" for k, s in summary["lines"].items())
            print(f"{label}: final-window kA {finals}; overload {summary['overload']}")
    root.mkdir(parents=True, exist_ok=True)
    index = {"param": args.param, "values": values, "runs": [j[2] for j in jobs]}
    (root / "sweep.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")
    return worst


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seriescomp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario file")
    p.add_argument("spec")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name> or runs/<name>)")
    p.add_argument("--plots", action="store_true", help="also write SVG current plots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="calibrate the corridor fixture")
    p.add_argument("--targets", help="YAML file with CalibrationTargets fields")
    p.add_argument("--out", required=True, help="fixture file to write (YAML)")
    p.add_argument("--cases-dir", help="also write the three case scenarios here")
    p.add_argument("--no-confirm", action="store_true", help="skip the confirming simulations")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="field-wise diff of two runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--rtol", type=float, default=0.0)
    p.add_argument("--atol", type=float, default=0.0)
    p.add_argument("--columns", nargs="*", help="restrict to these columns")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    p.add_argument("spec")
    p.add_argument("--param", required=True, help="document path, e.g. deployments[1].command.x_set_ohm")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=0)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
