"""Command-line pipeline over directory trees of scans.

Subcommands: make-gt (annotations to weak ground-truth masks), evaluate
(gt vs pred masks to match results and reports), phantom (synthetic
dataset trees), render (windowed slice PNG with overlays), components
(component list of one mask). Scans are paired by filename stem =
scan_id. Per-scan failures are reported and skipped; the exit code is 1
when any scan failed. Outputs are byte-stable for identical inputs and
config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .annotations import SlabConfig, extend_to_slab, load_annotations, rasterize_ground_truth, save_annotations
from .components import SizeThreshold, connected_components, filter_by_size, save_components
from .evaluation import dataset_metrics, match_scan, restrict_match, write_report
from .grid import GridKind, LabelScheme
from .nifti import load_volume, save_volume
from .phantom import (
    SuiteConfig,
    ellipsoid_voxel_count,
    generate_phantom,
    perturb_to_prediction,
    sample_case,
)
from .render import DEFAULT_CENTER, DEFAULT_WIDTH, overlay_render, save_png

VOLUME_SUFFIXES = (".nii.gz", ".nii")


def _scan_id_of(path: Path) -> str | None:
    name = path.name
    for suf in VOLUME_SUFFIXES:
        if name.endswith(suf):
            return name[: -len(suf)]
    return None


def discover_volumes(root: str | os.PathLike) -> dict[str, Path]:
    """Map scan_id -> volume path for every .nii/.nii.gz under root."""
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"not a directory: {root}")
    out: dict[str, Path] = {}
    for path in sorted(root.iterdir()):
        sid = _scan_id_of(path)
        if sid is None:
            continue
        if sid in out:
            raise ValueError(f"scan {sid!r} appears twice under {root}")
        out[sid] = path
    return out


def _echo_config(out_dir: Path, command: str, options: dict) -> None:
    payload = {
        "command": command,
        "options": {k: v for k, v in sorted(options.items())},
        "version": __version__,
    }
    with open(out_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _run_pool(workers: int, jobs, func):
    """Run func over jobs, isolating failures. Returns {key: (ok, value)}."""
    results = {}

    def guarded(job):
        key = job[0]
        try:
            return key, True, func(*job)
        except Exception as exc:  # per-scan isolation: report, keep going
            return key, False, f"{type(exc).__name__}: {exc}"

    if workers <= 1:
        done = map(guarded, jobs)
        for key, ok, value in done:
            results[key] = (ok, value)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, ok, value in pool.map(guarded, jobs):
                results[key] = (ok, value)
    return results


def _report_failures(results: dict, what: str) -> list[str]:
    failed = sorted(k for k, (ok, _) in results.items() if not ok)
    for key in failed:
        print(f"error: {what} {key}: {results[key][1]}", file=sys.stderr)
    return failed


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        loaded = json.load(f)
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return loaded


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Config precedence: command line > --config file > built-in default."""
    file_cfg = _load_json_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_cfg)
    for key in defaults:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
    return merged


def _default_workers() -> int:
    return os.cpu_count() or 1


def cmd_make_gt(args: argparse.Namespace) -> int:
    defaults = {
        "annotations": None,
        "ct": None,
        "body": None,
        "out": None,
        "extent": 3,
        "workers": _default_workers(),
        "gzip_level": 6,
    }
    cfg = _resolve(args, defaults)
    for key in ("annotations", "ct", "out"):
        if cfg[key] is None:
            print(f"error: --{key} is required", file=sys.stderr)
            return 2

    anns = load_annotations(cfg["annotations"])
    ct_map = discover_volumes(cfg["ct"])
    body_map = discover_volumes(cfg["body"]) if cfg["body"] else {}
    out_dir = Path(cfg["out"])
    mask_dir = out_dir / "gt-masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, "make-gt", {k: str(v) if isinstance(v, Path) else v for k, v in cfg.items()})

    by_scan: dict[str, list] = {}
    for a in anns:
        by_scan.setdefault(a.scan_id, []).append(a)
    slab_cfg = SlabConfig(int(cfg["extent"]))

    def build(scan_id, scan_anns):
        if scan_id not in ct_map:
            raise ValueError(f"no CT volume for annotated scan {scan_id!r}")
        ct = load_volume(ct_map[scan_id], expected_kind=GridKind.INTENSITY)
        body = None
        if cfg["body"]:
            if scan_id not in body_map:
                raise ValueError(f"no body mask for scan {scan_id!r}")
            body = load_volume(body_map[scan_id], expected_kind=GridKind.LABEL)
        mask = rasterize_ground_truth(scan_anns, body, ct.dims, ct.spacing, slab_cfg)
        save_volume(mask, mask_dir / f"{scan_id}.nii.gz", gzip_level=int(cfg["gzip_level"]))
        nz = ct.dims[2]
        full_span = 2 * slab_cfg.extent_each_side + 1
        n_clamped = 0
        for a in scan_anns:
            slab = extend_to_slab(a, slab_cfg, nz)
            if slab.z_max - slab.z_min + 1 < full_span:
                n_clamped += 1
        return {"n_lesions": len(scan_anns), "n_clamped_slabs": n_clamped}

    jobs = [(sid, scan_anns) for sid, scan_anns in sorted(by_scan.items())]
    results = _run_pool(int(cfg["workers"]), jobs, build)
    failed = _report_failures(results, "scan")

    per_scan = []
    for sid in sorted(results):
        ok, value = results[sid]
        entry = {"scan_id": sid, "status": "ok" if ok else "failed"}
        if ok:
            entry.update(value)
        else:
            entry["error"] = value
        per_scan.append(entry)
    summary = {
        "schema_version": 1,
        "n_scans": len(per_scan),
        "n_failed": len(failed),
        "n_annotations": len(anns),
        "per_scan": per_scan,
    }
    with open(out_dir / "make_gt_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return 1 if failed else 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    defaults = {
        "gt": None,
        "pred": None,
        "out": None,
        "thresholds": [0],
        "min_mm3": None,
        "connectivity": 26,
        "lesion_label": 2,
        "undefined_precision": "exclude",
        "workers": _default_workers(),
    }
    cfg = _resolve(args, defaults)
    for key in ("gt", "pred", "out"):
        if cfg[key] is None:
            print(f"error: --{key} is required", file=sys.stderr)
            return 2

    gt_map = discover_volumes(cfg["gt"])
    pred_map = discover_volumes(cfg["pred"])
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(out_dir, "evaluate", cfg)

    thresholds = sorted({int(t) for t in cfg["thresholds"]})
    connectivity = int(cfg["connectivity"])
    lesion_label = int(cfg["lesion_label"])
    min_mm3 = cfg["min_mm3"]

    def evaluate_scan(scan_id):
        if scan_id not in gt_map:
            raise ValueError(f"prediction {scan_id!r} has no ground-truth mask")
        if scan_id not in pred_map:
            raise ValueError(f"ground truth {scan_id!r} has no prediction mask")
        gt = load_volume(gt_map[scan_id], expected_kind=GridKind.LABEL)
        pred = load_volume(pred_map[scan_id], expected_kind=GridKind.LABEL)
        if gt.dims != pred.dims:
            raise ValueError(f"dims mismatch: gt {gt.dims} vs pred {pred.dims}")
        gt_comps = connected_components(gt, LabelScheme.LESION, connectivity)
        pred_comps = connected_components(pred, lesion_label, connectivity)
        full = match_scan(gt_comps, pred_comps, scan_id=scan_id)
        per_threshold = {}
        for t in thresholds:
            thr = SizeThreshold(t, min_mm3)
            keep = {c.component_id for c in filter_by_size(pred_comps, thr)}
            per_threshold[t] = restrict_match(full, keep)
        return per_threshold

    scan_ids = sorted(set(gt_map) | set(pred_map))
    jobs = [(sid,) for sid in scan_ids]
    results = _run_pool(int(cfg["workers"]), jobs, evaluate_scan)
    failed = _report_failures(results, "scan")

    succeeded = {sid: value for sid, (ok, value) in results.items() if ok}
    if not succeeded:
        print("error: no scans evaluated", file=sys.stderr)
        return 1

    for t in thresholds:
        t_dir = out_dir / "reports" / f"threshold_{t}"
        scans_dir = t_dir / "scans"
        scans_dir.mkdir(parents=True, exist_ok=True)
        matches = [succeeded[sid][t] for sid in sorted(succeeded)]
        for m in matches:
            with open(scans_dir / f"{m.scan_id}.json", "w", encoding="utf-8") as f:
                json.dump(m.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
        report = dataset_metrics(
            matches, threshold_voxels=t, undefined_precision=cfg["undefined_precision"]
        )
        write_report(report, t_dir / "report.json")

    summary = {
        "schema_version": 1,
        "n_scans": len(scan_ids),
        "n_failed": len(failed),
        "failed_scans": failed,
        "thresholds": thresholds,
    }
    with open(out_dir / "evaluate_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return 1 if failed else 0


def perturbation_sizes(gt, pspec):
    """Voxel counts backing the closed-form triple at any threshold."""
    comps = connected_components(gt, LabelScheme.LESION, connectivity=26)
    dropped = set(pspec.drop_lesions)
    kept = [c.voxel_count for c in comps if c.component_id not in dropped]
    spurious = [ellipsoid_voxel_count(b, gt.dims) for b in pspec.spurious_blobs]
    return kept, spurious, len(dropped)


def cmd_phantom(args: argparse.Namespace) -> int:
    defaults = {
        "spec": None,
        "out": None,
        "count": 5,
        "seed": 0,
        "threshold": 250,
        "workers": _default_workers(),
        "gzip_level": 6,
    }
    cfg = _resolve(args, defaults)
    if cfg["out"] is None:
        print("error: --out is required", file=sys.stderr)
        return 2
    if int(cfg["seed"]) < 0 or int(cfg["count"]) < 1:
        print("error: need seed >= 0 and count >= 1", file=sys.stderr)
        return 2

    suite = SuiteConfig.from_json(cfg["spec"]) if cfg["spec"] else SuiteConfig()
    out_dir = Path(cfg["out"])
    for sub in ("ct", "gt-masks", "pred-masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    echo = dict(cfg)
    echo["suite"] = suite.to_dict()
    _echo_config(out_dir, "phantom", echo)

    threshold = SizeThreshold(int(cfg["threshold"]))
    gz = int(cfg["gzip_level"])
    seed = int(cfg["seed"])

    def build(index):
        spec, pspec = sample_case(suite, seed, index)
        ct, anns, gt = generate_phantom(spec)
        pred, triple = perturb_to_prediction(gt, pspec, threshold)
        save_volume(ct, out_dir / "ct" / f"{spec.scan_id}.nii.gz", gzip_level=gz)
        save_volume(gt, out_dir / "gt-masks" / f"{spec.scan_id}.nii.gz", gzip_level=gz)
        save_volume(pred, out_dir / "pred-masks" / f"{spec.scan_id}.nii.gz", gzip_level=gz)
        kept, spurious, dropped = perturbation_sizes(gt, pspec)
        return {
            "scan_id": spec.scan_id,
            "annotations": anns,
            "kept_voxel_counts": kept,
            "spurious_voxel_counts": spurious,
            "n_dropped": dropped,
            "expected": {"tp": triple[0], "fp": triple[1], "fn": triple[2]},
        }

    jobs = [(i,) for i in range(int(cfg["count"]))]
    results = _run_pool(int(cfg["workers"]), jobs, build)
    failed = _report_failures(results, "phantom")
    if failed:
        return 1

    entries = [results[i][1] for i in sorted(results)]
    all_anns = [a for e in entries for a in e["annotations"]]
    save_annotations(all_anns, out_dir / "gt-annotations.csv")

    per_scan = []
    totals = {"tp": 0, "fp": 0, "fn": 0}
    for e in entries:
        per_scan.append({k: v for k, v in e.items() if k != "annotations"})
        for k in totals:
            totals[k] += e["expected"][k]
    expected = {
        "schema_version": 1,
        "threshold_voxels": int(cfg["threshold"]),
        "per_scan": per_scan,
        "totals": totals,
    }
    with open(out_dir / "expected.json", "w", encoding="utf-8") as f:
        json.dump(expected, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    defaults = {
        "ct": None,
        "out": None,
        "slice": None,
        "center": DEFAULT_CENTER,
        "width": DEFAULT_WIDTH,
        "gt": None,
        "pred": None,
        "lesion_label": 2,
    }
    cfg = _resolve(args, defaults)
    for key in ("ct", "out", "slice"):
        if cfg[key] is None:
            print(f"error: --{key} is required", file=sys.stderr)
            return 2
    ct = load_volume(cfg["ct"], expected_kind=GridKind.INTENSITY)
    gt = load_volume(cfg["gt"], expected_kind=GridKind.LABEL) if cfg["gt"] else None
    pred = load_volume(cfg["pred"], expected_kind=GridKind.LABEL) if cfg["pred"] else None
    image = overlay_render(
        ct,
        int(cfg["slice"]),
        center=float(cfg["center"]),
        width=float(cfg["width"]),
        gt_mask=gt,
        pred_mask=pred,
        lesion_label=int(cfg["lesion_label"]),
    )
    save_png(image, cfg["out"])
    return 0


def cmd_components(args: argparse.Namespace) -> int:
    defaults = {
        "mask": None,
        "out": None,
        "label": 2,
        "connectivity": 26,
        "min_voxels": 0,
        "scan_id": None,
    }
    cfg = _resolve(args, defaults)
    for key in ("mask", "out"):
        if cfg[key] is None:
            print(f"error: --{key} is required", file=sys.stderr)
            return 2
    mask_path = Path(cfg["mask"])
    scan_id = cfg["scan_id"] or (_scan_id_of(mask_path) or mask_path.stem)
    mask = load_volume(mask_path, expected_kind=GridKind.LABEL)
    comps = connected_components(mask, int(cfg["label"]), int(cfg["connectivity"]))
    comps = filter_by_size(comps, SizeThreshold(int(cfg["min_voxels"])))
    save_components(scan_id, comps, cfg["out"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppglkit",
        description="Weak ground truth, component analysis, and detection metrics for CT lesion masks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-gt", help="rasterize box annotations into weak ground-truth masks")
    p.add_argument("--annotations", help="annotation CSV or JSON")
    p.add_argument("--ct", help="directory of CT volumes (dims/spacing source)")
    p.add_argument("--body", help="directory of body masks to merge")
    p.add_argument("--out", help="output root")
    p.add_argument("--extent", type=int, help="slices added on each side of a box (default 3)")
    p.add_argument("--workers", type=int)
    p.add_argument("--gzip-level", dest="gzip_level", type=int)
    p.add_argument("--config", help="JSON file with option defaults")
    p.set_defaults(func=cmd_make_gt)

    p = sub.add_parser("evaluate", help="match prediction masks against ground truth and report metrics")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.add_argument("--pred", help="directory of prediction masks")
    p.add_argument("--out", help="output root")
    p.add_argument(
        "--threshold",
        dest="thresholds",
        type=int,
        nargs="+",
        help="prediction size threshold(s) in voxels; several values sweep",
    )
    p.add_argument("--min-mm3", dest="min_mm3", type=float, help="extra physical-volume threshold")
    p.add_argument("--connectivity", type=int, choices=(6, 26))
    p.add_argument("--lesion-label", dest="lesion_label", type=int)
    p.add_argument(
        "--undefined-precision",
        dest="undefined_precision",
        choices=("exclude", "zero"),
        help="handling of scans with no surviving prediction",
    )
    p.add_argument("--workers", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic dataset tree with known answers")
    p.add_argument("--out", help="output root")
    p.add_argument("--spec", help="suite config JSON")
    p.add_argument("--count", type=int, help="number of scans (default 5)")
    p.add_argument("--seed", type=int, help="suite seed (default 0)")
    p.add_argument("--threshold", type=int, help="threshold stamped into expected.json (default 250)")
    p.add_argument("--workers", type=int)
    p.add_argument("--gzip-level", dest="gzip_level", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("render", help="window one axial slice to PNG, with optional mask overlays")
    p.add_argument("--ct", help="CT volume")
    p.add_argument("--slice", type=int, help="axial slice index")
    p.add_argument("--center", type=float, help="window center HU (default 50)")
    p.add_argument("--width", type=float, help="window width HU (default 450)")
    p.add_argument("--gt", help="ground-truth mask to tint yellow")
    p.add_argument("--pred", help="prediction mask to tint blue")
    p.add_argument("--lesion-label", dest="lesion_label", type=int)
    p.add_argument("--out", help="output PNG")
    p.add_argument("--config")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("components", help="list connected components of one mask as JSON")
    p.add_argument("--mask", help="label mask volume")
    p.add_argument("--label", type=int, help="target label (default 2)")
    p.add_argument("--connectivity", type=int, choices=(6, 26))
    p.add_argument("--min-voxels", dest="min_voxels", type=int)
    p.add_argument("--scan-id", dest="scan_id")
    p.add_argument("--out", help="output JSON")
    p.add_argument("--config")
    p.set_defaults(func=cmd_components)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
