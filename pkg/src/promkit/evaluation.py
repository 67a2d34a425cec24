"""Detector evaluation: confusion regions, prominence-weighted metrics, and reports.

Pixel confusion counts are aggregated across images and weighted by each
image's ground-truth prominence p_i with a margin kappa:

    Prec^pr = sum_i TP_i * (p_i - kappa) / sum_i (TP_i + FP_i)
    Rec^pr  = sum_i TP_i * (p_i - kappa) / sum_i (TP_i + FN_i)

Both share a numerator, so they carry the same sign; with kappa = 0.3 the
F1 of the pair is bounded to [-0.3, 0.7]. The margin makes detections on
barely-visible artifacts (p_i < kappa) count against the detector.

Alongside the weighted metrics, a "prominent subset" (images whose
prominence strictly exceeds a cutoff, default 0.5) is scored with plain
binary precision/recall/IoU, which also drives threshold selection.

Undefined values (zero denominators, empty subsets) are reported as None,
never 0 or NaN, so aggregation can drop them deterministically. The one
deliberate exception: f1 of two equal values returns that value directly,
which defines f1(0, 0) = 0 and keeps the harmonic mean of equals exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ArtifactRecord,
    ContractError,
    DataError,
    ValidationError,
    as_heatmap,
    as_mask,
    load_mask,
    read_fmap,
    require_same_shape,
)
from .morphology import binarize

DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(21))
DEFAULT_KAPPA = 0.3
DEFAULT_CUTOFF = 0.5


@dataclass(frozen=True)
class ConfusionSums:
    """Pixel confusion counts of one image, tagged with its prominence."""

    tp: int
    fp: int
    fn: int
    tn: int
    prominence: float = 0.0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ContractError(f"{name} must be a nonnegative integer, got {value!r}")
        if not 0.0 <= self.prominence <= 1.0:
            raise ContractError(f"prominence {self.prominence} outside [0, 1]")


@dataclass(frozen=True)
class EvalConfig:
    kappa: float = DEFAULT_KAPPA
    threshold_grid: tuple[float, ...] = DEFAULT_GRID
    prominent_cutoff: float = DEFAULT_CUTOFF

    def __post_init__(self):
        if not 0.0 <= self.kappa < 1.0:
            raise ContractError(f"kappa {self.kappa} outside [0, 1)")
        grid = tuple(float(t) for t in self.threshold_grid)
        if not grid:
            raise ContractError("threshold grid must be nonempty")
        if any(not 0.0 <= t <= 1.0 for t in grid):
            raise ContractError("threshold grid values must lie in [0, 1]")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ContractError("threshold grid must be strictly increasing")
        if not 0.0 <= self.prominent_cutoff <= 1.0:
            raise ContractError(f"prominent_cutoff {self.prominent_cutoff} outside [0, 1]")
        object.__setattr__(self, "threshold_grid", grid)


def confusion(pred: np.ndarray, gt: np.ndarray, prominence: float = 0.0) -> ConfusionSums:
    """Pixel-wise TP/FP/FN/TN of a predicted mask against ground truth."""
    pred = as_mask(pred)
    gt = as_mask(gt)
    require_same_shape(pred, gt, "confusion")
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    tn = int(np.sum(~pred & ~gt))
    return ConfusionSums(tp=tp, fp=fp, fn=fn, tn=tn, prominence=prominence)


def prominence_pr(
    sums: Sequence[ConfusionSums], kappa: float = DEFAULT_KAPPA
) -> tuple[float | None, float | None]:
    """Prominence-weighted precision and recall, aggregated before division.

    Zero denominators yield None so "no detections" stays distinguishable
    from "worthless detections".
    """
    if not 0.0 <= kappa < 1.0:
        raise ContractError(f"kappa {kappa} outside [0, 1)")
    numerator = math.fsum(s.tp * (s.prominence - kappa) for s in sums)
    den_prec = sum(s.tp + s.fp for s in sums)
    den_rec = sum(s.tp + s.fn for s in sums)
    prec = numerator / den_prec if den_prec > 0 else None
    rec = numerator / den_rec if den_rec > 0 else None
    return prec, rec


def f1(prec: float | None, rec: float | None) -> float | None:
    """Harmonic mean; negative inputs allowed, equal inputs returned as-is."""
    if prec is None or rec is None:
        return None
    if prec == rec:
        return prec
    if prec + rec == 0.0:
        return None
    return 2.0 * prec * rec / (prec + rec)


def pr_auc(points: Sequence[tuple[float | None, float | None]]) -> float | None:
    """Trapezoidal area of (recall, precision) points, sorted by recall.

    Pairs with an undefined member are dropped; fewer than two defined
    points leave the area undefined.
    """
    defined = [(r, p) for r, p in points if r is not None and p is not None]
    if len(defined) < 2:
        return None
    defined.sort(key=lambda rp: rp[0])
    return math.fsum(
        (r2 - r1) * (p1 + p2) / 2.0
        for (r1, p1), (r2, p2) in zip(defined, defined[1:])
    )


@dataclass(frozen=True)
class SubsetMetrics:
    """Binary precision/recall/IoU over the prominent subset; None = undefined."""

    precision: float | None
    recall: float | None
    product: float | None
    iou: float | None

    @classmethod
    def undefined(cls) -> "SubsetMetrics":
        return cls(precision=None, recall=None, product=None, iou=None)


def prominent_subset_eval(
    prominences: Sequence[float | None],
    gts: Sequence[np.ndarray],
    heatmaps: Sequence[np.ndarray],
    threshold: float,
    cutoff: float = DEFAULT_CUTOFF,
) -> SubsetMetrics:
    """Binary metrics at one threshold over images with prominence > cutoff."""
    if not len(prominences) == len(gts) == len(heatmaps):
        raise ContractError("prominences, gts, and heatmaps must align")
    tp = fp = fn = 0
    any_selected = False
    for prominence, gt, heat in zip(prominences, gts, heatmaps):
        if prominence is None or not prominence > cutoff:
            continue
        any_selected = True
        sums = confusion(binarize(heat, threshold), gt)
        tp += sums.tp
        fp += sums.fp
        fn += sums.fn
    if not any_selected:
        return SubsetMetrics.undefined()
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    product = precision * recall if precision is not None and recall is not None else None
    iou = tp / (tp + fp + fn) if tp + fp + fn > 0 else None
    return SubsetMetrics(precision=precision, recall=recall, product=product, iou=iou)


def select_threshold(
    prominences: Sequence[float | None],
    gts: Sequence[np.ndarray],
    heatmaps: Sequence[np.ndarray],
    grid: Sequence[float] = DEFAULT_GRID,
    cutoff: float = DEFAULT_CUTOFF,
) -> float:
    """Grid value maximizing precision x recall on the prominent subset.

    Ties resolve to the smallest threshold; if the product is undefined at
    every grid point there is nothing to maximize and a DataError is raised.
    """
    if not grid:
        raise ContractError("threshold grid must be nonempty")
    best_threshold = None
    best_product = None
    for threshold in grid:
        metrics = prominent_subset_eval(prominences, gts, heatmaps, threshold, cutoff)
        if metrics.product is None:
            continue
        if best_product is None or metrics.product > best_product:
            best_product = metrics.product
            best_threshold = threshold
    if best_threshold is None:
        raise DataError("precision x recall undefined at every threshold")
    return best_threshold


def combined_score(mean_prominence: float, confident_masks: int) -> float:
    """mean_prominence x confident_masks / 100 (both factors as reported)."""
    if not 0.0 <= mean_prominence <= 1.0:
        raise ContractError(f"mean_prominence {mean_prominence} outside [0, 1]")
    if not isinstance(confident_masks, int) or confident_masks < 0:
        raise ContractError(f"confident_masks must be a nonnegative integer, got {confident_masks!r}")
    return mean_prominence * confident_masks / 100.0


# --------------------------------------------------------------------------
# Full report


@dataclass(frozen=True)
class ThresholdRow:
    threshold: float
    prec_pr: float | None
    rec_pr: float | None
    f1: float | None
    subset: SubsetMetrics


@dataclass(frozen=True)
class EvalReport:
    kappa: float
    prominent_cutoff: float
    rows: tuple[ThresholdRow, ...]
    pr_auc: float | None
    selected_threshold: float | None

    def to_json_text(self) -> str:
        obj = {
            "kappa": self.kappa,
            "prominent_cutoff": self.prominent_cutoff,
            "pr_auc": self.pr_auc,
            "selected_threshold": self.selected_threshold,
            "thresholds": [
                {
                    "threshold": row.threshold,
                    "prec_pr": row.prec_pr,
                    "rec_pr": row.rec_pr,
                    "f1": row.f1,
                    "subset_precision": row.subset.precision,
                    "subset_recall": row.subset.recall,
                    "subset_product": row.subset.product,
                    "subset_iou": row.subset.iou,
                }
                for row in self.rows
            ],
        }
        return json.dumps(obj, indent=2) + "\n"

    def to_csv_text(self) -> str:
        def cell(value):
            return "" if value is None else repr(float(value))

        lines = [
            "threshold,prec_pr,rec_pr,f1,"
            "subset_precision,subset_recall,subset_product,subset_iou"
        ]
        for row in self.rows:
            lines.append(
                ",".join(
                    [
                        cell(row.threshold),
                        cell(row.prec_pr),
                        cell(row.rec_pr),
                        cell(row.f1),
                        cell(row.subset.precision),
                        cell(row.subset.recall),
                        cell(row.subset.product),
                        cell(row.subset.iou),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def grid_from_step(step: float) -> tuple[float, ...]:
    """Threshold grid 0, step, 2*step, ... capped at 1."""
    if not 0.0 < step <= 1.0:
        raise ContractError(f"grid step {step} outside (0, 1]")
    values = []
    index = 0
    while True:
        value = round(index * step, 10)
        if value > 1.0:
            break
        values.append(value)
        index += 1
    return tuple(values)


def load_eval_inputs(records: Sequence[ArtifactRecord], heatmap_dir: str | Path):
    """Per-record (prominence, gt mask, heatmap) triples for the ops above."""
    heatmap_dir = Path(heatmap_dir)
    prominences, gts, heats = [], [], []
    for record in records:
        if record.prominence is None:
            raise ValidationError(f"record {record.id!r}: missing prominence")
        path = heatmap_dir / f"{record.id}.fmap"
        if not path.exists():
            raise DataError(f"record {record.id!r}: missing heatmap {path}")
        heat = read_fmap(path)
        if heat.min() < 0.0 or heat.max() > 1.0:
            raise DataError(f"record {record.id!r}: heatmap values outside [0, 1]")
        gt = load_mask(record.mask_path)
        require_same_shape(heat, gt, f"record {record.id!r} heatmap vs mask")
        prominences.append(record.prominence)
        gts.append(gt)
        heats.append(as_heatmap(heat))
    return prominences, gts, heats


def evaluate(
    records: Sequence[ArtifactRecord],
    heatmap_dir: str | Path,
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """Score per-record heatmaps (FMAP files named <id>.fmap) against GT masks."""
    if not records:
        raise ContractError("evaluate requires at least one record")
    prominences, gts, heats = load_eval_inputs(records, heatmap_dir)

    rows = []
    for threshold in cfg.threshold_grid:
        sums = [
            confusion(binarize(heat, threshold), gt, prominence=prominence)
            for prominence, gt, heat in zip(prominences, gts, heats)
        ]
        prec, rec = prominence_pr(sums, cfg.kappa)
        subset = prominent_subset_eval(
            prominences, gts, heats, threshold, cfg.prominent_cutoff
        )
        rows.append(
            ThresholdRow(
                threshold=threshold, prec_pr=prec, rec_pr=rec, f1=f1(prec, rec), subset=subset
            )
        )

    auc = pr_auc([(row.rec_pr, row.prec_pr) for row in rows])
    try:
        selected = select_threshold(
            prominences, gts, heats, cfg.threshold_grid, cfg.prominent_cutoff
        )
    except DataError:
        selected = None
    return EvalReport(
        kappa=cfg.kappa,
        prominent_cutoff=cfg.prominent_cutoff,
        rows=tuple(rows),
        pr_auc=auc,
        selected_threshold=selected,
    )
