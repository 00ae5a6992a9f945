"""Command-line front end: ``validate``, ``run``, ``sweep`` and ``estimate``.

Exit codes: 0 success, 2 configuration error, 3 resource error,
4 numerical or fit failure, 5 validation threshold failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .analysis import (arc_profile, arc_visibility, count_fringes, detector_convolve, distinguishability,
                       dv_sweep, fine_axis, sweep_maximum)
from .config import BYTE_UNITS, LENGTH_UNITS, ExperimentConfig, load_config, parse_quantity
from .engine import (STAGES, ExecutionPlan, MaskSet, NearFieldCache, SliceRequest, consistency_scan,
                     estimate_resources, run_pipeline)
from .errors import BiphotonError, ConfigurationError, ValidationFailure
from .field import ReducedMap, signal_cut
from .grid import make_grid
from .io import write_binary, write_csv, write_json, write_pgm
from .oracles import (paired_region, plane_wave_far, relative_error, thin_crystal_far, thin_crystal_near,
                      thin_far_interior)
from .pump import PumpSpec

PHOTONS = ("signal", "idler")


def _overrides(args) -> dict:
    ex = {}
    if getattr(args, "threads", None) is not None:
        ex["threads"] = args.threads
    if getattr(args, "memory_budget", None) is not None:
        ex["memory_budget"] = int(parse_quantity(args.memory_budget, BYTE_UNITS, "--memory-budget"))
    if getattr(args, "cache_dir", None) is not None:
        ex["cache_dir"] = args.cache_dir
    out = {"execution": ex}
    if getattr(args, "out", None) is not None:
        out["output"] = {"directory": args.out}
    return out


def _outdir(cfg: ExperimentConfig) -> str:
    path = cfg.output_directory
    os.makedirs(path, exist_ok=True)
    return path


def _emit_map(rmap: ReducedMap, base: str, cfg: ExperimentConfig) -> list[str]:
    files = []
    if cfg.get("outputs", "csv", True):
        write_csv(base + ".csv", rmap)
        files.append(base + ".csv")
    if cfg.get("outputs", "binary", True):
        write_binary(base + ".bin", rmap.values)
        files.append(base + ".bin")
    if cfg.get("outputs", "images", True) and rmap.values.max() > 0:
        write_pgm(base + ".pgm", rmap)
        files.append(base + ".pgm")
    return files


# ---------------------------------------------------------------- validate

def run_validation(cfg: ExperimentConfig) -> dict:
    """Oracle comparisons and the consistency scan on ``cfg``'s grid and pump.

    Returns ``{"checks": [...], "passed": bool}``; each check records its
    metric, threshold and status (``pass``, ``fail`` or ``error``).
    """
    grid = make_validation_grid(cfg)
    plan = cfg.plan
    thin = cfg.crystal.with_length(0.0)
    checks = []

    def record(name, fn, threshold):
        t0 = time.perf_counter()
        try:
            value, extra = fn()
            status = "pass" if value <= threshold else "fail"
            checks.append({"check": name, "max_delta": value, "threshold": threshold, "status": status,
                           "runtime_s": time.perf_counter() - t0, **extra})
        except BiphotonError as exc:
            checks.append({"check": name, "status": "error", "error": f"{type(exc).__name__}: {exc}",
                           "exit_code": exc.exit_code, "threshold": threshold})

    def thin_checks():
        res = run_pipeline(cfg.pump, thin, grid, plan=plan, stop_after="p2")
        near = relative_error(res.map("p2", "signal"), thin_crystal_near(cfg.pump, grid).c1)
        region = thin_far_interior(cfg.pump, grid)
        far = relative_error(res.map("p1", "signal"), thin_crystal_far(cfg.pump, grid).c1, region=region)
        return near.max, far.max

    cache = {}

    def thin_near():
        cache["thin"] = thin_checks()
        return cache["thin"][0], {}

    def thin_far():
        if "thin" not in cache:
            cache["thin"] = thin_checks()
        return cache["thin"][1], {"region": "interior"}

    def plane_wave():
        pw = PumpSpec("plane_wave", wavelength=cfg.pump.wavelength)
        c = grid.n // 2
        req = SliceRequest("p1", "idler", (0.0, 0.0))
        req3 = SliceRequest("p3", "idler", (0.0, 0.0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_pipeline(pw, cfg.crystal, grid, plan=plan, slices=[req, req3])
        oracle = plane_wave_far(cfg.crystal, grid)
        err = relative_error(res.map("p3", "signal"), oracle.c1, region=paired_region(grid))
        off = np.ones((grid.n, grid.n), bool)
        off[c, c] = False  # partner of the idler at q = 0
        s1 = res.slices[req.key].values
        s3 = res.slices[req3.key].values
        return err.max, {"offdiag_max_p1": float(np.abs(s1[off]).max()),
                         "offdiag_rel_p3": float(np.abs(s3[off]).max() / s3.max())}

    record("thin_crystal_near", thin_near, cfg.get("validate", "thin_near_max", 1e-2))
    record("thin_crystal_far", thin_far, cfg.get("validate", "thin_far_max", 1e-2))
    record("plane_wave_far", plane_wave, cfg.get("validate", "plane_wave_max", 2e-3))
    pw = checks[-1]
    if pw["status"] == "pass" and pw["offdiag_max_p1"] != 0.0:
        pw["status"] = "fail"

    resolutions = [r for r in cfg.get("validate", "resolutions", [32, 48, 64, 96]) if r <= grid.n]
    if cfg.get("validate", "consistency", True) and len(resolutions) >= 3:

        def scan():
            r = consistency_scan(cfg.pump, thin, grid.extent, resolutions, plan=plan)
            # monotone decrease is the criterion; report the last difference as the metric
            return (r.values[-1] if r.monotone else math.inf), {"resolutions": r.resolutions,
                                                                 "differences": r.values, "monotone": r.monotone}

        record("consistency_scan", scan, math.inf)
    return {"checks": checks, "passed": all(c["status"] == "pass" for c in checks)}


def make_validation_grid(cfg: ExperimentConfig):
    n = cfg.get("validate", "n", cfg.grid.n)
    extent = cfg.get("validate", "extent", cfg.grid.extent)
    return make_grid(n, extent)


def cmd_validate(args) -> int:
    ov = _overrides(args)
    if args.n is not None:
        ov.setdefault("validate", {})["n"] = args.n
    cfg = load_config(args.config or "validate", ov)
    report = run_validation(cfg)
    for c in report["checks"]:
        if c["status"] == "error":
            print(f"{c['check']:<20} ERROR  {c['error']}")
        else:
            print(f"{c['check']:<20} {c['status'].upper():<5}  max={c['max_delta']:.3e}  "
                  f"threshold={c['threshold']:.3e}")
    out = _outdir(cfg)
    write_json(os.path.join(out, "validate.json"), {"config_hash": cfg.digest, "version": __version__,
                                                    **report})
    errors = [c for c in report["checks"] if c["status"] == "error"]
    if errors:
        return max(c["exit_code"] for c in errors)
    return 0 if report["passed"] else ValidationFailure.exit_code


# ---------------------------------------------------------------- run

def _apply_detector(rmap: ReducedMap, radius: float | None) -> ReducedMap | None:
    if not radius:
        return None
    return detector_convolve(rmap, radius)


def run_experiment(cfg: ExperimentConfig, out: str | None = None) -> dict:
    """Run the pipeline for ``cfg``, write the requested maps and return the summary."""
    out = out or _outdir(cfg)
    slices = cfg.get("outputs", "slices", [])
    want_v = cfg.get("analysis", "visibility", False)
    want_parity = cfg.get("analysis", "fringe_parity", False)
    want_d = cfg.get("analysis", "distinguishability", False)
    slit = cfg.masks.N_s
    if (want_v or want_d or want_parity) and slit.kind != "double_slit":
        raise ConfigurationError("analysis needs mask.N_s to be a double slit")
    stages = cfg.stages
    last = max(stages, key=STAGES.index) if stages else "p3"
    if want_v or want_parity:
        last = "p3"
    keep = want_v or want_parity
    res = run_pipeline(cfg.pump, cfg.crystal, cfg.grid, cfg.masks, cfg.plan, slices=slices,
                       stop_after=last, keep_field=keep, check=cfg.get("execution", "check", True))
    summary = {"config": cfg.source, "config_hash": cfg.digest, "version": __version__,
               "provenance": res.provenance, "files": []}
    try:
        radius = cfg.get("analysis", "detector_radius")
        for stage in stages:
            for photon in PHOTONS:
                rmap = res.map(stage, photon)
                summary["files"] += _emit_map(rmap, os.path.join(out, f"{stage}_{photon}"), cfg)
                det = _apply_detector(rmap, radius)
                if det is not None:
                    summary["files"] += _emit_map(det, os.path.join(out, f"{stage}_{photon}_detector"), cfg)
        for req in slices:
            name = req.key.replace(":", "_").replace("@", "_at_").replace(",", "_")
            summary["files"] += _emit_map(res.slices[req.key], os.path.join(out, f"slice_{name}"), cfg)
        if want_d:
            summary["D"] = distinguishability(res.map("p2_masked", "signal"), slit)
        if want_v or want_parity:
            far = res.map("p3", "signal")
            over = cfg.get("analysis", "oversample", 8)
            field = res.field

            def cut(q):
                return signal_cut(field, 0.0, q)

            if want_v:
                fit, _ = arc_visibility(far, slit, cut, over, "lower")
                summary["V"] = fit.V
                summary["fit"] = {k: getattr(fit, k) for k in ("A", "B", "V", "phi", "s", "center", "goodness")}
            if want_parity:
                parity = {}
                for arc in ("upper", "lower"):
                    prof = arc_profile(far, slit.width, arc)
                    q = fine_axis(prof, far.grid.dq, over)
                    parity[arc] = count_fringes(cut(q))
                parity["odd_upper_even_lower"] = parity["upper"] % 2 == 1 and parity["lower"] % 2 == 0
                summary["fringe_parity"] = parity
    finally:
        res.close()
    write_json(os.path.join(out, "summary.json"), summary)
    return summary


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    summary = run_experiment(cfg)
    for key in ("D", "V"):
        if key in summary:
            print(f"{key} = {summary[key]:.4f}")
    if "fringe_parity" in summary:
        p = summary["fringe_parity"]
        print(f"fringes: upper {p['upper']}, lower {p['lower']}")
    print(f"wrote {len(summary['files'])} files to {cfg.output_directory}")
    return 0


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("rho_iy_m", "D", "V", "D2_plus_V2", "error")


def write_sweep_csv(path: str, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            d = r.as_dict()
            w.writerow([f"{d[c]:.17g}" for c in SWEEP_COLUMNS[:-1]] + [d["error"] or ""])


def parse_positions(text: str | None) -> list[float] | None:
    if text is None:
        return None
    return [parse_quantity(t, LENGTH_UNITS, "--positions") for t in text.replace(",", " ").split()]


def run_sweep(cfg: ExperimentConfig, positions, out: str | None = None) -> dict:
    out = out or _outdir(cfg)
    slit = cfg.masks.N_s
    if slit.kind != "double_slit":
        raise ConfigurationError("sweep needs mask.N_s to be a double slit")
    radius = cfg.get("sweep", "idler_radius", cfg.masks.N_i.radius or 14e-6)
    idler_x = cfg.get("sweep", "idler_x", 0.0)
    records = []
    provenance = {}
    if positions:
        masks = MaskSet(cfg.masks.T_s, cfg.masks.T_i, cfg.masks.N_s)
        with NearFieldCache(cfg.pump, cfg.crystal, cfg.grid, masks, cfg.plan,
                            check=cfg.get("execution", "check", True)) as cache:
            records = dv_sweep(cache, slit, radius, positions, idler_x)
            provenance = cache.result.provenance
    table = os.path.join(out, "sweep.csv")
    write_sweep_csv(table, records)
    best = sweep_maximum(records)
    summary = {"config": cfg.source, "config_hash": cfg.digest, "version": __version__,
               "records": [r.as_dict() for r in records], "provenance": provenance,
               "argmax": best.as_dict() if best else None, "table": table}
    write_json(os.path.join(out, "sweep.json"), summary)
    return summary


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    positions = parse_positions(args.positions)
    if positions is None:
        positions = cfg.get("sweep", "positions", [])
    summary = run_sweep(cfg, positions)
    for r in summary["records"]:
        if r["error"]:
            print(f"{r['rho_iy_m'] * 1e6:8.2f} um  error: {r['error']}")
        else:
            print(f"{r['rho_iy_m'] * 1e6:8.2f} um  D={r['D']:.4f}  V={r['V']:.4f}  D2+V2={r['D2_plus_V2']:.4f}")
    if summary["argmax"]:
        a = summary["argmax"]
        print(f"max D2+V2 = {a['D2_plus_V2']:.4f} at {a['rho_iy_m'] * 1e6:.2f} um")
    return 0


# ---------------------------------------------------------------- estimate

def cmd_estimate(args) -> int:
    est = estimate_resources(args.n, args.mode)
    budget = None
    if args.memory_budget is not None:
        budget = int(parse_quantity(args.memory_budget, BYTE_UNITS, "--memory-budget"))
    else:
        budget = ExecutionPlan().memory_budget
    d = est.as_dict()
    d["memory_budget"] = budget
    d["fits_budget"] = est.bytes_core + est.workspace_bytes <= budget
    print(json.dumps(d, indent=2))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "estimate.json"), d)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="FFT worker threads")
    common.add_argument("--memory-budget", help="resident memory budget, e.g. 4GiB")
    common.add_argument("--cache-dir", help="directory for spilled slabs")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="biphoton", description="Transverse two-photon amplitude simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", parents=[common], help="oracle comparisons and consistency scan")
    v.add_argument("config", nargs="?", help="config file (default: packaged validate.cfg)")
    v.add_argument("--n", type=int, help="override the validation grid size")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", parents=[common], help="run one experiment config")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="D/V over idler detector positions")
    s.add_argument("config")
    s.add_argument("--positions", help="e.g. --positions=-48um,-35um,0um (an empty string gives an empty table)")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("estimate", parents=[common], help="storage needed for an n^4 field")
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--mode", choices=("in_core", "spill_to_disk"), default="in_core")
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BiphotonError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
