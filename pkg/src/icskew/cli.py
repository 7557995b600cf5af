"""Command-line pipeline: simulate -> fit -> skew -> scaling, plus crb and walk.

Exit codes: 0 success, 1 validation, 2 numerical failure, 3 I/O.  Errors are
also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config, save_config
from .errors import IcskewError, NumericalError, ValidationError
from .fibermodel import RandomWalkParams, simulate_trial, simulate_walk_ensemble
from .fisher import DEFAULT_DETECTION_EFFICIENCY, DipShape, crb
from .fitting import fit_beat_envelope, fit_gaussian, locate_envelope
from .multiport import MultiportUnitary, channel_visibility_scale, classify_output_pairs, hadamard_unitary
from .scaling import (
    LengthPoint,
    bootstrap_ci,
    fit_power_law,
    fit_sqrt_model,
    plot_rows,
    read_points_csv,
    write_plot_csv,
    write_points_csv,
)
from .scanmodel import (
    ScanRecord,
    accidental_rate,
    default_integration_time,
    expected_laser_rate,
    expected_spdc_rate,
    laser_coarse_grid,
    laser_fine_grid,
    read_scan,
    sample_scan,
    spdc_grid,
    subtract_accidentals,
    write_scan,
)
from .skew import (
    DipEntry,
    DipTable,
    arm_imbalance,
    combine_uncertainty,
    ics_table,
    pair_label,
    parse_pair,
    read_dip_csv,
    rms_skew,
    tables_to_json,
    write_dip_csv,
    write_ics_csv,
    write_json,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3
FIT_REPORT = "fit_report.json"
WALK_HEADER = ("length_m", "rms_ps", "stderr_ps", "mean_trial_rms_ps")


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


# -- simulate ------------------------------------------------------------------

def true_core_delays(cfg: PipelineConfig) -> np.ndarray:
    """Per-core delays (ps): explicit list, or one random-walk realisation."""
    f = cfg.fiber
    if f.walk is None:
        return np.array(f.core_delays_ps, dtype=float)
    d = simulate_trial(cfg.walk_params(), [f.walk.length_m], 4, f.walk.trial)[0]
    return d - d[0]


def _scan_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def cmd_simulate(cfg: PipelineConfig, out_dir=None) -> list[Path]:
    """Write one scan (CSV + sidecar) per ordered input pair and output channel.

    Per-scan randomness comes from ``SeedSequence(seed, spawn_key=(j, k, c))``
    (c = channel index; for laser scans c = 0 coarse, 1 fine), so any single
    scan can be regenerated independently.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    U = MultiportUnitary(hadamard_unitary().entries, cfg.output_labels)
    delays = true_core_delays(cfg)
    delta = cfg.fiber.arm_imbalance_ps
    written: list[Path] = []
    truth = {}
    for j, k in itertools.permutations(range(1, 5), 2):
        d_true = delta + float(delays[j - 1] - delays[k - 1])
        truth[pair_label((j, k))] = d_true
        if cfg.source == "spdc":
            written += _simulate_spdc_pair(cfg, U, (j, k), d_true, out)
        else:
            written += _simulate_laser_pair(cfg, (j, k), d_true, out)
    manifest = {
        "tool_version": __version__,
        "seed": cfg.seed,
        "source": cfg.source,
        "core_delays_ps": delays.tolist(),
        "arm_imbalance_ps": delta,
        "true_dip_positions_ps": truth,
        "true_skews_ps": {
            pair_label((j, k)): float(delays[j - 1] - delays[k - 1])
            for j, k in itertools.combinations(range(1, 5), 2)
        },
        "scans": sorted(p.name for p in written),
    }
    dump_json(manifest, out / "manifest.json")
    save_config(cfg, out / "config.json")
    return written


def _simulate_spdc_pair(cfg, U, inputs, d_true, out) -> list[Path]:
    j, k = inputs
    params = cfg.spdc
    grid0 = spdc_grid(0.0, cfg.scan.range_ps, cfg.scan.step_ps)
    paths = []
    for c, pred in enumerate(classify_output_pairs(U, inputs)):
        rng = _scan_rng(cfg.seed, j, k, c)
        center = d_true + rng.uniform(-cfg.scan.center_jitter_ps, cfg.scan.center_jitter_ps)
        scan_seed = int(rng.integers(0, 2**63 - 1))
        scale = channel_visibility_scale(pred.output_pair, cfg.visibility_scale, cfg.per_channel_visibility)
        det = [U.output_labels.index(ch) for ch in pred.output_pair]
        singles = params.singles_rates_cps
        acc = accidental_rate(singles[det[0]], singles[det[1]], params.rep_rate_hz) if singles else 0.0
        t_int = cfg.scan.integration_s or default_integration_time(
            params, pred.p_dist, grid0.size, cfg.scan.total_counts
        )

        def rate(t, pred=pred, scale=scale, acc=acc):
            return expected_spdc_rate(pred, t, params, d_true, scale) + acc

        rec = sample_scan(
            rate, grid0 + center, t_int, scan_seed,
            channel=pred.output_pair, source_kind="spdc", skew_offset_ps=d_true,
            source_params=params,
            metadata={
                "input_pair": pair_label(inputs),
                "expected_kind": pred.kind,
                "visibility_scale": scale,
                "accidental_cps": acc,
                "master_seed": cfg.seed,
            },
        )
        paths.append(write_scan(rec, out / f"scan_{j}{k}_{pred.output_pair}.csv")[0])
    return paths


def _simulate_laser_pair(cfg, inputs, d_true, out) -> list[Path]:
    j, k = inputs
    params = cfg.laser
    meta = {"input_pair": pair_label(inputs), "master_seed": cfg.seed}

    def rate(t):
        return expected_laser_rate(t, params, d_true)

    rng = _scan_rng(cfg.seed, j, k, 0)
    jitter = cfg.scan.coarse_center_jitter_ps
    coarse_center = d_true + rng.uniform(-jitter, jitter)
    coarse = sample_scan(
        rate, laser_coarse_grid(coarse_center, params), cfg.scan.laser_integration_s,
        int(rng.integers(0, 2**63 - 1)), channel="HOM", source_kind="laser",
        skew_offset_ps=d_true, source_params=params, metadata=dict(meta, stage="coarse"),
    )
    fine_center = locate_envelope(coarse, params.beat_period_ps)
    rng = _scan_rng(cfg.seed, j, k, 1)
    fine = sample_scan(
        rate, laser_fine_grid(fine_center, params), cfg.scan.laser_integration_s,
        int(rng.integers(0, 2**63 - 1)), channel="HOM", source_kind="laser",
        skew_offset_ps=d_true, source_params=params, metadata=dict(meta, stage="fine"),
    )
    return [
        write_scan(coarse, out / f"scan_{j}{k}_coarse.csv")[0],
        write_scan(fine, out / f"scan_{j}{k}_fine.csv")[0],
    ]


# -- fit -------------------------------------------------------------------------

def expand_scan_paths(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(q for q in p.glob("*.csv") if q.with_suffix(".json").exists())
        elif p.exists():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such scan file or directory: {p}")
    return out


def fit_record(rec: ScanRecord, subtract: bool = True, max_iter: int = 200) -> dict:
    if rec.source_kind == "laser":
        res = fit_beat_envelope(rec, max_iter=max_iter).to_dict()
        res["center_error_ps"] = res["center_uncertainty_ps"]
        return res
    acc = float(rec.metadata.get("accidental_cps") or 0.0)
    if subtract and acc > 0 and not rec.is_corrected:
        rec = subtract_accidentals(rec, acc)
    fit = fit_gaussian(rec, max_iter=max_iter)
    res = fit.to_dict()
    res["center_error_ps"] = fit.center_stderr_ps
    res["accidentals_subtracted_cps"] = acc if subtract else 0.0
    res["negative_points"] = rec.negative_points
    exp_kind = rec.metadata.get("expected_kind")
    if exp_kind is not None:
        res["expected_kind"] = exp_kind
    return res


def aggregate_centers(fits: list[dict]) -> dict:
    """Inverse-variance mean of channel centers sharing one input pair.

    Flagged when any channel sits more than 3 of its own standard errors
    (combined with the mean's) from the mean.
    """
    d = np.array([f["center_ps"] for f in fits])
    e = np.array([f["center_error_ps"] for f in fits])
    w = 1.0 / e**2
    mean = float(np.sum(w * d) / np.sum(w))
    err = float(1.0 / math.sqrt(np.sum(w)))
    pulls = np.abs(d - mean) / np.sqrt(e**2 + err**2)
    return {
        "center_ps": mean,
        "stderr_ps": err,
        "spread_ps": float(d.max() - d.min()),
        "max_pull": float(pulls.max()) if len(fits) > 1 else 0.0,
        "flagged": bool(len(fits) > 1 and pulls.max() > 3.0),
        "n_channels": len(fits),
        "channels": [f["channel"] for f in fits],
    }


def cmd_fit(scan_paths, out_path=None, subtract_accidentals: bool = True, max_iter: int = 200) -> tuple[dict, int]:
    """Fit every scan; returns ``(report, exit_code)``."""
    paths = expand_scan_paths(scan_paths)
    if not paths:
        raise ValidationError("no scan files given")
    channels, failures = [], []
    for p in paths:
        try:
            rec = read_scan(p)
            if rec.source_kind == "laser" and rec.metadata.get("stage") == "coarse":
                continue
            res = fit_record(rec, subtract_accidentals, max_iter)
        except (IcskewError, ValueError) as exc:
            failures.append({"path": p.name, "error": type(exc).__name__, "message": str(exc)})
            continue
        res.update(
            path=p.name,
            input_pair=rec.metadata.get("input_pair"),
            source_kind=rec.source_kind,
            true_center_ps=rec.skew_offset_ps,
        )
        channels.append(res)

    groups: dict[str, list[dict]] = {}
    for res in channels:
        if res["input_pair"] is not None:
            groups.setdefault(res["input_pair"], []).append(res)
    report = {
        "tool_version": __version__,
        "channels": channels,
        "input_pairs": {k: aggregate_centers(v) for k, v in sorted(groups.items())},
        "failures": failures,
    }
    if out_path is not None:
        dump_json(report, out_path)
    return report, (EXIT_NUMERICAL if failures else EXIT_OK)


# -- skew --------------------------------------------------------------------------

def dip_table_from_reports(reports: list[dict], sigma_cal_ps: float) -> DipTable:
    entries = {}
    for rep in reports:
        for label, agg in rep.get("input_pairs", {}).items():
            pair = parse_pair(label)
            if pair in entries:
                raise ValidationError(f"input pair {label} appears in more than one report")
            sigma = combine_uncertainty(agg["stderr_ps"], sigma_cal_ps)
            entries[pair] = DipEntry(agg["center_ps"], sigma)
    return DipTable(entries)


def cmd_skew(inputs, sigma_cal_ps: float = 0.15, convention: str = "half_difference",
             allow_partial: bool = False, out_dir=None, length_m: float | None = None) -> dict:
    """Dip, skew and arm-imbalance tables from fit reports or a dip-table CSV."""
    inputs = [Path(p) for p in inputs]
    if not inputs:
        raise ValidationError("no fit reports or dip tables given")
    if all(p.suffix == ".csv" for p in inputs):
        if len(inputs) != 1:
            raise ValidationError("give exactly one dip-table CSV")
        dips = read_dip_csv(inputs[0])
    else:
        reports = []
        for p in inputs:
            with open(p) as fh:
                reports.append(json.load(fh))
        dips = dip_table_from_reports(reports, sigma_cal_ps)
    ics = ics_table(dips, convention, allow_partial=allow_partial)
    imbalance = arm_imbalance(dips)
    summary = tables_to_json(dips, ics, imbalance)
    summary["sigma_cal_ps"] = sigma_cal_ps
    summary["tool_version"] = __version__
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_dip_csv(dips, out / "dip_table.csv")
        write_ics_csv(ics, out / "ics_table.csv")
        write_json(summary, out / "skew.json")
        if length_m is not None:
            rms, srms = rms_skew(ics, allow_partial=True)
            write_points_csv([LengthPoint(length_m, rms, srms, len(ics.entries))], out / "length_point.csv")
    return summary


# -- scaling -------------------------------------------------------------------------

def cmd_scaling(points_csv, out_dir=None, bootstrap_n: int = 5000, seed: int = 0,
                downweight: bool = True) -> dict:
    points = read_points_csv(points_csv)
    sq = fit_sqrt_model(points, downweight)
    pl = fit_power_law(points, downweight)
    boot = bootstrap_ci(points, bootstrap_n, seed, downweight=downweight)
    report = {
        "tool_version": __version__,
        "n_points": len(points),
        "sqrt_model": sq.to_dict(),
        "power_law": pl.to_dict(),
        "bootstrap": boot.to_dict(),
        "downweight_missing_pairs": downweight,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(report, out / "scaling.json")
        write_plot_csv(plot_rows(points, sq, pl), out / "scaling_plot.csv")
    return report


# -- crb ----------------------------------------------------------------------------------

def cmd_crb(visibility: float, coherence_time_ps: float, total_counts: float, scan_range_ps: float,
            p_dist: float = 0.125, detection_efficiency: float = DEFAULT_DETECTION_EFFICIENCY) -> dict:
    shape = DipShape(p_dist, visibility, coherence_time_ps, detection_efficiency)
    rep = crb(shape, total_counts, scan_range_ps).to_dict()
    rep.update(visibility=visibility, coherence_time_ps=coherence_time_ps, p_dist=p_dist,
               detection_efficiency=detection_efficiency, tool_version=__version__)
    return rep


def crb_sweep(visibilities, coherence_time_ps, total_counts, scan_range_ps, p_dist=0.125,
              detection_efficiency=DEFAULT_DETECTION_EFFICIENCY) -> list[tuple]:
    rows = []
    for v in visibilities:
        shape = DipShape(p_dist, float(v), coherence_time_ps, detection_efficiency)
        rep = crb(shape, total_counts, scan_range_ps)
        rows.append((float(v), rep.shape_factor, rep.crb_fs))
    return rows


def _parse_range(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise ValidationError(f"expected LO:HI:N, got {text!r}") from exc


# -- walk -------------------------------------------------------------------------------

def cmd_walk(params: RandomWalkParams, lengths, n_trials: int, out_csv=None, points_csv=None):
    ens = simulate_walk_ensemble(params, lengths, 4, n_trials)
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(WALK_HEADER)
            for row in ens.rows():
                w.writerow([repr(v) for v in row])
    if points_csv is not None:
        write_points_csv(
            [LengthPoint(L, r, s, 6) for L, r, s, _ in ens.rows()], points_csv
        )
    return ens


# -- argument parsing ---------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icskew", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"icskew {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="generate synthetic coincidence scans")
    s.add_argument("--config", type=Path, help="pipeline config JSON (defaults if omitted)")
    s.add_argument("--out-dir", type=Path)
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--source", choices=("spdc", "laser"), help="override the config source")

    f = sub.add_parser("fit", help="fit dips/peaks/beat envelopes in scan files")
    f.add_argument("scans", nargs="*", type=Path, help="scan CSV files or directories")
    f.add_argument("--out", type=Path, default=Path(FIT_REPORT))
    f.add_argument("--no-subtract-accidentals", action="store_true")
    f.add_argument("--max-iter", type=int, default=200)

    k = sub.add_parser("skew", help="pairwise skew tables from fit reports or a dip table")
    k.add_argument("inputs", nargs="+", type=Path)
    k.add_argument("--sigma-cal-ps", type=float, default=0.15)
    k.add_argument("--convention", choices=("half_difference", "full_difference"), default="half_difference")
    k.add_argument("--allow-partial", action="store_true")
    k.add_argument("--length-m", type=float, help="also write a scaling length point for this fiber length")
    k.add_argument("--out-dir", type=Path, default=Path("skew"))

    c = sub.add_parser("scaling", help="sqrt(L)+c and power-law fits with bootstrap CI")
    c.add_argument("points", type=Path, help="CSV length_m,rms_ps,sigma_ps,n_pairs")
    c.add_argument("--bootstrap-n", type=int, default=5000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--no-downweight", action="store_true")
    c.add_argument("--out-dir", type=Path, default=Path("scaling"))

    r = sub.add_parser("crb", help="Fisher information and Cramer-Rao bound")
    r.add_argument("--visibility", type=float, default=0.92)
    r.add_argument("--coherence-time-ps", type=float, default=0.25)
    r.add_argument("--counts", type=float, default=3.5e5)
    r.add_argument("--range-ps", type=float, default=1.8)
    r.add_argument("--p-dist", type=float, default=0.125)
    r.add_argument("--detection-efficiency", type=float, default=DEFAULT_DETECTION_EFFICIENCY)
    r.add_argument("--sweep-visibility", metavar="LO:HI:N", help="write a CSV sweep over visibility")
    r.add_argument("--out", type=Path, help="output path (stdout if omitted)")

    w = sub.add_parser("walk", help="random-walk skew ensembles")
    w.add_argument("--lengths", default="10,20,50,100", help="comma-separated lengths in m")
    w.add_argument("--step-length-m", type=float, default=0.1)
    w.add_argument("--step-std-ps", type=float, default=0.1)
    w.add_argument("--connectors", default="", help="comma-separated connector positions in m")
    w.add_argument("--connector-std-ps", type=float, default=0.0)
    w.add_argument("--trials", type=int, default=1000)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", type=Path, default=Path("walk.csv"))
    w.add_argument("--points-out", type=Path, help="also write scaling-format length points")
    return p


def _run(args) -> int:
    if args.cmd == "simulate":
        cfg = load_config(args.config) if args.config else PipelineConfig()
        if args.seed is not None or args.source is not None:
            import dataclasses

            cfg = dataclasses.replace(
                cfg,
                seed=cfg.seed if args.seed is None else args.seed,
                source=cfg.source if args.source is None else args.source,
            )
        paths = cmd_simulate(cfg, args.out_dir)
        print(json.dumps({"written": len(paths), "out_dir": str(args.out_dir or cfg.output_dir)}))
        return EXIT_OK
    if args.cmd == "fit":
        if not args.scans:
            raise ValidationError("fit needs at least one scan file or directory")
        report, code = cmd_fit(args.scans, args.out, not args.no_subtract_accidentals, args.max_iter)
        print(json.dumps({"fitted": len(report["channels"]), "failures": len(report["failures"]),
                          "out": str(args.out)}))
        return code
    if args.cmd == "skew":
        s = cmd_skew(args.inputs, args.sigma_cal_ps, args.convention, args.allow_partial,
                     args.out_dir, args.length_m)
        print(json.dumps({"rms_ps": s["rms_ps"], "n_pairs": s["n_pairs"], "out_dir": str(args.out_dir)}))
        return EXIT_OK
    if args.cmd == "scaling":
        rep = cmd_scaling(args.points, args.out_dir, args.bootstrap_n, args.seed, not args.no_downweight)
        print(json.dumps({"alpha": rep["power_law"]["exponent_alpha"],
                          "kappa": rep["sqrt_model"]["kappa_ps_per_sqrt_m"], "out_dir": str(args.out_dir)}))
        return EXIT_OK
    if args.cmd == "crb":
        if not 0 <= args.visibility <= 1:
            raise ValidationError(f"visibility must be in [0, 1], got {args.visibility}")
        if args.sweep_visibility:
            rows = crb_sweep(_parse_range(args.sweep_visibility), args.coherence_time_ps, args.counts,
                             args.range_ps, args.p_dist, args.detection_efficiency)
            fh = open(args.out, "w", newline="") if args.out else sys.stdout
            try:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("visibility", "shape_factor_J_F", "crb_fs"))
                for row in rows:
                    w.writerow([repr(v) for v in row])
            finally:
                if args.out:
                    fh.close()
            return EXIT_OK
        rep = cmd_crb(args.visibility, args.coherence_time_ps, args.counts, args.range_ps,
                      args.p_dist, args.detection_efficiency)
        if args.out:
            dump_json(rep, args.out)
        else:
            print(json.dumps(rep, indent=2, sort_keys=True))
        return EXIT_OK
    if args.cmd == "walk":
        params = RandomWalkParams(args.step_length_m, args.step_std_ps, tuple(_floats(args.connectors)),
                                  args.connector_std_ps, args.seed)
        ens = cmd_walk(params, _floats(args.lengths), args.trials, args.out, args.points_out)
        print(json.dumps({"lengths": len(ens.lengths_m), "trials": ens.n_trials, "out": str(args.out)}))
        return EXIT_OK
    raise ValidationError(f"unknown command {args.cmd}")


def _error(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ValidationError as exc:
        return _error(EXIT_VALIDATION, exc)
    except NumericalError as exc:
        return _error(EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _error(EXIT_IO, exc)
    except (ValueError, KeyError) as exc:
        return _error(EXIT_VALIDATION, exc)

