"""Overlap-based detection matching and precision/recall reporting.

A ground-truth lesion counts as detected (TP) when any surviving
predicted component shares at least one voxel with it; a predicted
component overlapping no ground truth is an FP; an untouched
ground-truth lesion is an FN. TP is counted per ground-truth lesion and
FP per predicted component, so several predictions on one lesion still
count once. Dataset metrics are micro-averages of the summed counts;
patient-level statistics summarize the per-scan ratios.
"""

from __future__ import annotations

import dataclasses
import json
import os
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .components import Component, SizeThreshold, connected_components, filter_by_size
from .grid import GridKind, LabelScheme, VoxelGrid

SCHEMA_VERSION = 1


def percent(fraction: float) -> str:
    """Format a ratio as a percentage with one decimal, round-half-up."""
    q = Decimal(repr(fraction * 100.0)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{q}%"


@dataclasses.dataclass(frozen=True)
class MatchResult:
    """Per-scan assignment of predictions to ground-truth lesions."""

    scan_id: str
    tp_gt_ids: frozenset[int]
    fn_gt_ids: frozenset[int]
    fp_pred_ids: frozenset[int]
    pairs: tuple[tuple[int, int, int], ...]  # (gt_id, pred_id, overlap_voxels)
    group: str | None = None

    def __post_init__(self):
        if self.tp_gt_ids & self.fn_gt_ids:
            raise ValueError(f"{self.scan_id}: gt id marked both TP and FN")
        paired_preds = {p for _, p, _ in self.pairs}
        if paired_preds & self.fp_pred_ids:
            raise ValueError(f"{self.scan_id}: pred id marked both matched and FP")

    @property
    def n_gt(self) -> int:
        return len(self.tp_gt_ids) + len(self.fn_gt_ids)

    @property
    def tp(self) -> int:
        return len(self.tp_gt_ids)

    @property
    def fp(self) -> int:
        return len(self.fp_pred_ids)

    @property
    def fn(self) -> int:
        return len(self.fn_gt_ids)

    def to_dict(self) -> dict:
        d = {
            "scan_id": self.scan_id,
            "tp_gt_ids": sorted(self.tp_gt_ids),
            "fn_gt_ids": sorted(self.fn_gt_ids),
            "fp_pred_ids": sorted(self.fp_pred_ids),
            "pairs": [list(p) for p in self.pairs],
        }
        if self.group is not None:
            d["group"] = self.group
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        return cls(
            scan_id=d["scan_id"],
            tp_gt_ids=frozenset(d["tp_gt_ids"]),
            fn_gt_ids=frozenset(d["fn_gt_ids"]),
            fp_pred_ids=frozenset(d["fp_pred_ids"]),
            pairs=tuple((int(g), int(p), int(o)) for g, p, o in d["pairs"]),
            group=d.get("group"),
        )


def _check_unique_ids(components: list[Component], what: str) -> None:
    ids = [c.component_id for c in components]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate component ids in {what} list")


def match_scan(
    gt: list[Component],
    pred: list[Component],
    scan_id: str = "",
    group: str | None = None,
) -> MatchResult:
    """Match predicted components against ground-truth components.

    A pair is recorded iff the two voxel sets share at least one voxel;
    there is no IoU threshold.
    """
    _check_unique_ids(gt, "ground-truth")
    _check_unique_ids(pred, "prediction")

    pairs = []
    matched_gt = set()
    matched_pred = set()
    for g in gt:
        for p in pred:
            if not g.bbox.intersects(p.bbox):
                continue
            overlap = np.intersect1d(g.voxels, p.voxels, assume_unique=True).size
            if overlap > 0:
                pairs.append((g.component_id, p.component_id, int(overlap)))
                matched_gt.add(g.component_id)
                matched_pred.add(p.component_id)
    return MatchResult(
        scan_id=scan_id,
        tp_gt_ids=frozenset(matched_gt),
        fn_gt_ids=frozenset(c.component_id for c in gt) - matched_gt,
        fp_pred_ids=frozenset(c.component_id for c in pred) - matched_pred,
        pairs=tuple(pairs),
        group=group,
    )


def evaluate_pair(
    gt_mask: VoxelGrid,
    pred_mask: VoxelGrid,
    threshold: SizeThreshold = SizeThreshold(),
    connectivity: int = 26,
    pred_lesion_label: int = 2,
    scan_id: str = "",
    backend: str | None = None,
) -> MatchResult:
    """Full per-scan pipeline: components, prediction size filter, matching.

    The ground truth always uses the lesion label of the standard scheme
    and is never size-filtered; ``pred_lesion_label`` selects which label
    of the prediction mask counts as lesion (any body label is ignored).
    """
    if gt_mask.dims != pred_mask.dims:
        raise ValueError(f"dims mismatch: gt {gt_mask.dims} vs pred {pred_mask.dims}")
    gt_comps = connected_components(gt_mask, LabelScheme.LESION, connectivity, backend)
    pred_comps = connected_components(pred_mask, pred_lesion_label, connectivity, backend)
    pred_comps = filter_by_size(pred_comps, threshold)
    return match_scan(gt_comps, pred_comps, scan_id=scan_id)


def restrict_match(match: MatchResult, keep_pred_ids: set[int]) -> MatchResult:
    """Re-derive a match as if only the given predictions had survived.

    Equivalent to filtering the prediction list before match_scan, since
    pair existence is independent per (gt, pred) pair. Lets a threshold
    sweep reuse one full match instead of re-running the overlap tests.
    """
    all_pred = {p for _, p, _ in match.pairs} | set(match.fp_pred_ids)
    unknown = set(keep_pred_ids) - all_pred
    if unknown:
        raise ValueError(f"keep_pred_ids not present in match: {sorted(unknown)}")
    pairs = tuple((g, p, o) for g, p, o in match.pairs if p in keep_pred_ids)
    tp = frozenset(g for g, _, _ in pairs)
    all_gt = match.tp_gt_ids | match.fn_gt_ids
    matched_pred = {p for _, p, _ in pairs}
    return MatchResult(
        scan_id=match.scan_id,
        tp_gt_ids=tp,
        fn_gt_ids=frozenset(all_gt) - tp,
        fp_pred_ids=frozenset(keep_pred_ids) - matched_pred,
        pairs=pairs,
        group=match.group,
    )


@dataclasses.dataclass(frozen=True)
class DistributionStats:
    """Summary of per-scan ratios: mean, sample std (n-1), median, quartiles."""

    n: int
    mean: float
    std_dev: float
    median: float
    iqr_lo: float
    iqr_hi: float

    @classmethod
    def from_values(cls, values) -> "DistributionStats":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("no values to summarize")
        std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        q25, q50, q75 = np.quantile(arr, [0.25, 0.5, 0.75])
        return cls(
            n=int(arr.size),
            mean=float(arr.mean()),
            std_dev=std,
            median=float(q50),
            iqr_lo=float(q25),
            iqr_hi=float(q75),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DistributionStats":
        return cls(**d)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    """Dataset counts, micro precision/recall, and patient-level spread."""

    n_gt: int
    n_tp: int
    n_fp: int
    n_fn: int
    precision: float | None
    recall: float | None
    patient_precision: DistributionStats | None
    patient_recall: DistributionStats | None
    n_scans: int
    n_scans_excluded_from_precision: int
    n_scans_excluded_from_recall: int
    threshold_voxels: int | None
    per_scan: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_gt": self.n_gt,
            "n_tp": self.n_tp,
            "n_fp": self.n_fp,
            "n_fn": self.n_fn,
            "precision": self.precision,
            "recall": self.recall,
            "patient_level": {
                "precision": None if self.patient_precision is None else self.patient_precision.to_dict(),
                "recall": None if self.patient_recall is None else self.patient_recall.to_dict(),
            },
            "n_scans": self.n_scans,
            "n_scans_excluded_from_precision": self.n_scans_excluded_from_precision,
            "n_scans_excluded_from_recall": self.n_scans_excluded_from_recall,
            "threshold_voxels": self.threshold_voxels,
            "per_scan": list(self.per_scan),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {d.get('schema_version')!r}")
        pl = d["patient_level"]
        return cls(
            n_gt=d["n_gt"],
            n_tp=d["n_tp"],
            n_fp=d["n_fp"],
            n_fn=d["n_fn"],
            precision=d["precision"],
            recall=d["recall"],
            patient_precision=None if pl["precision"] is None else DistributionStats.from_dict(pl["precision"]),
            patient_recall=None if pl["recall"] is None else DistributionStats.from_dict(pl["recall"]),
            n_scans=d["n_scans"],
            n_scans_excluded_from_precision=d["n_scans_excluded_from_precision"],
            n_scans_excluded_from_recall=d["n_scans_excluded_from_recall"],
            threshold_voxels=d["threshold_voxels"],
            per_scan=tuple(d["per_scan"]),
        )


def dataset_metrics(
    results: list[MatchResult],
    threshold_voxels: int | None = None,
    undefined_precision: str = "exclude",
) -> MetricsReport:
    """Fold per-scan match results into a dataset report.

    Micro precision/recall come from the summed counts. The patient-level
    distributions drop scans where the ratio is undefined: no surviving
    prediction and no TP for precision, no ground-truth lesion for
    recall. ``undefined_precision="zero"`` imputes 0.0 for such scans
    instead of dropping them.
    """
    if not results:
        raise ValueError("no scans")
    if undefined_precision not in ("exclude", "zero"):
        raise ValueError(f"undefined_precision must be 'exclude' or 'zero', got {undefined_precision!r}")
    seen = set()
    for r in results:
        if r.scan_id in seen:
            raise ValueError(f"duplicate scan_id {r.scan_id!r}")
        seen.add(r.scan_id)

    ordered = sorted(results, key=lambda r: r.scan_id)
    n_tp = sum(r.tp for r in ordered)
    n_fp = sum(r.fp for r in ordered)
    n_fn = sum(r.fn for r in ordered)
    n_gt = n_tp + n_fn

    per_scan = []
    prec_values = []
    rec_values = []
    excluded_prec = 0
    excluded_rec = 0
    for r in ordered:
        prec = r.tp / (r.tp + r.fp) if (r.tp + r.fp) > 0 else None
        rec = r.tp / r.n_gt if r.n_gt > 0 else None
        if prec is None:
            if undefined_precision == "zero":
                prec_values.append(0.0)
            else:
                excluded_prec += 1
        else:
            prec_values.append(prec)
        if rec is None:
            excluded_rec += 1
        else:
            rec_values.append(rec)
        entry = {
            "scan_id": r.scan_id,
            "n_gt": r.n_gt,
            "tp": r.tp,
            "fp": r.fp,
            "fn": r.fn,
            "precision": prec,
            "recall": rec,
        }
        if r.group is not None:
            entry["group"] = r.group
        per_scan.append(entry)

    return MetricsReport(
        n_gt=n_gt,
        n_tp=n_tp,
        n_fp=n_fp,
        n_fn=n_fn,
        precision=n_tp / (n_tp + n_fp) if (n_tp + n_fp) > 0 else None,
        recall=n_tp / n_gt if n_gt > 0 else None,
        patient_precision=DistributionStats.from_values(prec_values) if prec_values else None,
        patient_recall=DistributionStats.from_values(rec_values) if rec_values else None,
        n_scans=len(ordered),
        n_scans_excluded_from_precision=excluded_prec,
        n_scans_excluded_from_recall=excluded_rec,
        threshold_voxels=threshold_voxels,
        per_scan=tuple(per_scan),
    )


def _fmt(value: float | None) -> str:
    return "-" if value is None else percent(value)


def format_report_text(report: MetricsReport) -> str:
    """Render the report as the compact two-block text table."""
    thr = "-" if report.threshold_voxels is None else str(report.threshold_voxels)
    lines = [
        "threshold & n_gt & tp & fp & fn & precision & recall",
        f"{thr} & {report.n_gt} & {report.n_tp} & {report.n_fp} & {report.n_fn}"
        f" & {_fmt(report.precision)} & {_fmt(report.recall)}",
        "",
        "patient level & mean & std_dev & median & iqr",
    ]
    for name, stats in (("precision", report.patient_precision), ("recall", report.patient_recall)):
        if stats is None:
            lines.append(f"{name} & - & - & - & -")
        else:
            lines.append(
                f"{name} & {percent(stats.mean)} & {percent(stats.std_dev)}"
                f" & {percent(stats.median)} & {percent(stats.iqr_lo)} - {percent(stats.iqr_hi)}"
            )
    lines.append("")
    lines.append(
        f"scans: {report.n_scans} (excluded from precision: "
        f"{report.n_scans_excluded_from_precision}, from recall: {report.n_scans_excluded_from_recall})"
    )
    return "\n".join(lines) + "\n"


def write_report(
    report: MetricsReport,
    path: str | os.PathLike,
    text_path: str | os.PathLike | None = None,
) -> None:
    """Write the JSON report, plus the text table next to it."""
    path = os.fspath(path)
    if text_path is None:
        base = path[: -len(".json")] if path.endswith(".json") else path
        text_path = base + ".txt"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(format_report_text(report))


def load_report(path: str | os.PathLike) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as f:
        return MetricsReport.from_dict(json.load(f))
