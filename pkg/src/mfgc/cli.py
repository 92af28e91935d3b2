"""Command-line driver: ``mfgc solve | audit | probe-uniqueness <config>``.

Exit codes: 0 success, 2 finished but flagged (no convergence, failed
audit, inconclusive probe), 1 error (bad config, numerical failure, I/O).

Output files (written atomically into the output directory):

* ``fields_u.csv``, ``fields_m.csv``: ``time_index, x1[, x2], value``
* ``fields_alpha.csv``: ``time_index, x1[, x2], alpha1[, alpha2]``
  (drift-variable fields when a drift is configured)
* ``convergence.csv``: ``iteration, theta, strategy, hjb_res, fpk_res,
  mu_res, du, dm, dalpha``
* ``report.json``: diagnostics, events, version and the full effective config
* ``timings.json``: wall-clock timings (kept apart so reruns of the other
  files are byte-identical)

Rows run over time indices, then nodes in C order (last axis fastest).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .config import ConfigError, build_options, build_problem, parse_config
from .errors import MFGCError

log = logging.getLogger("mfgc")

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


def _num(v):
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def write_atomic(path, text):
    """Write ``text`` to a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload):
    write_atomic(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _field_csv(grid, values, names):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    coords = grid.coords.reshape(-1, grid.dim)
    w.writerow(["time_index"] + [f"x{i + 1}" for i in range(grid.dim)] + names)
    for n, field in enumerate(values):
        flat = np.asarray(field).reshape(grid.size, -1)
        for xi, vi in zip(coords, flat):
            w.writerow([n] + [_num(c) for c in xi] + [_num(v) for v in vi])
    return buf.getvalue()


def _convergence_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["iteration", "theta", "strategy", "hjb_res", "fpk_res", "mu_res", "du", "dm", "dalpha"]
    w.writerow(cols)
    for row in history:
        w.writerow([row["iteration"], _num(row["theta"]), row["strategy"]]
                   + [_num(row[c]) for c in cols[3:]])
    return buf.getvalue()


def write_solution(outdir, report):
    grid = report.grid
    dim = grid.dim
    write_atomic(os.path.join(outdir, "fields_u.csv"), _field_csv(grid, report.u, ["value"]))
    write_atomic(os.path.join(outdir, "fields_m.csv"), _field_csv(grid, report.m, ["value"]))
    write_atomic(os.path.join(outdir, "fields_alpha.csv"),
                 _field_csv(grid, report.controls, [f"alpha{i + 1}" for i in range(dim)]))
    write_atomic(os.path.join(outdir, "convergence.csv"), _convergence_csv(report.history))


def _base_payload(cfg, command):
    return {"version": __version__, "command": command, "config": cfg.echo()}


def _prepare_output(cfg, override):
    outdir = override or cfg["output"]["directory"]
    os.makedirs(outdir, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise PermissionError(f"output directory {outdir!r} is not writable")
    return outdir


def cmd_solve(cfg, outdir):
    from .coupler import solve

    problem = build_problem(cfg)
    report = solve(problem, build_options(cfg))
    write_solution(outdir, report)
    payload = _base_payload(cfg, "solve")
    payload.update({
        "converged": report.converged, "theta": report.theta, "iterations": len(report.history),
        "residuals": dict(zip(("hjb_res", "fpk_res", "mu_res"), report.residuals)),
        "diagnostics": report.diagnostics, "events": report.events,
        "mean_controls": report.mean_controls,
    })
    if problem.drift is not None:
        from .drift import equivalence_check

        payload["drift_equivalence"] = equivalence_check(problem, report, build_options(cfg).tol,
                                                         build_options(cfg).hjb)
    write_json(os.path.join(outdir, "report.json"), payload)
    write_json(os.path.join(outdir, "timings.json"), report.timings)
    if not report.converged:
        log.warning("no convergence at theta=%g after %d iterations", report.theta, len(report.history))
        return EXIT_FLAGGED
    return EXIT_OK


def cmd_audit(cfg, outdir):
    from .coupler import sample_monotonicity
    from .models import convexity_margin, growth_audit

    from .legendre import HamiltonianEvaluator

    problem = build_problem(cfg)
    # growth is audited in control variables; drifts have their own audit below
    ev = HamiltonianEvaluator(problem.model, problem.legendre_mode, tol=problem.legendre_tol)
    growth = growth_audit(problem.model, problem.grid, ev)
    lgap, cgap = sample_monotonicity(problem, seed=cfg["probe"]["seed"])
    payload = _base_payload(cfg, "audit")
    payload.update({
        "growth": growth.to_dict(),
        "monotonicity_gap_min": lgap,
        "coupling_gap_min": cgap,
        "convexity_margin": convexity_margin(problem.model, problem.grid),
    })
    passed = growth.passed and lgap >= -1e-10 and cgap >= -1e-10
    if problem.drift is not None:
        from .drift import drift_audit

        payload["drift"] = drift_audit(problem.drift)
        passed = passed and payload["drift"]["passed"]
    payload["passed"] = passed
    write_json(os.path.join(outdir, "report.json"), payload)
    return EXIT_OK if passed else EXIT_FLAGGED


def cmd_probe(cfg, outdir, inits, seed, workers):
    from .coupler import random_initialization, uniqueness_probe

    problem = build_problem(cfg)
    amp = cfg["probe"]["amplitude"]
    starts = [None] + [random_initialization(problem, seed + i, amp) for i in range(inits - 1)]
    probe = uniqueness_probe(problem, build_options(cfg), starts, workers=workers)
    payload = _base_payload(cfg, "probe-uniqueness")
    payload.update({"inits": inits, "seed": seed, "probe": probe.to_dict()})
    write_json(os.path.join(outdir, "report.json"), payload)
    return EXIT_OK if probe.unique else EXIT_FLAGGED


def _workers():
    raw = os.environ.get("MFGC_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MFGC_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"MFGC_WORKERS must be a positive integer, got {raw!r}")
    return n


def build_parser():
    ap = argparse.ArgumentParser(prog="mfgc", description="Mean field games of controls solver")
    ap.add_argument("--version", action="version", version=f"mfgc {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "audit", "probe-uniqueness"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
        if name == "probe-uniqueness":
            p.add_argument("--inits", type=int, default=None, help="number of initializations")
            p.add_argument("--seed", type=int, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        outdir = _prepare_output(cfg, args.output)
        if args.command == "solve":
            return cmd_solve(cfg, outdir)
        if args.command == "audit":
            return cmd_audit(cfg, outdir)
        inits = args.inits if args.inits is not None else cfg["probe"]["inits"]
        seed = args.seed if args.seed is not None else cfg["probe"]["seed"]
        if inits < 1:
            raise ConfigError("--inits must be >= 1")
        return cmd_probe(cfg, outdir, inits, seed, _workers())
    except (MFGCError, ValueError, OSError) as exc:
        print(f"mfgc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
