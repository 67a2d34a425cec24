"""Before/after fine-tuning comparison scores and artificial GT construction.

Given detection masks B (before) and A (after) plus a ground-truth artifact
mask, five scores describe what fine-tuning changed:

    delta_iou  (|B n GT| / |B u GT| - |A n GT| / |A u GT|) * 100
    rem_img    percent of pairs with |A n B| = 0 and |B| != 0
    add_img    percent of pairs with |A u B| > |B|
    add_pix    |A n ~B| / |~B| * 100
    rem_pix    |~A n B| / |B| * 100

Degenerate IoU unions count as 0 so delta_iou stays defined on images with
no GT artifact; the pixel ratios go undefined (None) when their denominator
is empty. Artificial GT images replace (optionally dilated) masked regions
of an SR output with a fallback rendition of the same scene.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    ContractError,
    FormatError,
    ValidationError,
    as_image,
    as_mask,
    load_mask,
    require_same_shape,
)
from .morphology import StructuringElement, dilate

DEFAULT_GT_DILATION = StructuringElement.disc(21)


@dataclass(frozen=True)
class FinetunePair:
    """Detection masks before/after fine-tuning plus the GT artifact mask."""

    before_mask: np.ndarray
    after_mask: np.ndarray
    gt_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "before_mask", as_mask(self.before_mask))
        object.__setattr__(self, "after_mask", as_mask(self.after_mask))
        object.__setattr__(self, "gt_mask", as_mask(self.gt_mask))
        require_same_shape(self.before_mask, self.after_mask, "finetune pair (before vs after)")
        require_same_shape(self.before_mask, self.gt_mask, "finetune pair (before vs gt)")


def artificial_gt(
    sr: np.ndarray,
    fallback: np.ndarray,
    mask: np.ndarray,
    dilation: StructuringElement | None = None,
) -> np.ndarray:
    """Replace masked SR regions with the fallback image, pixel for pixel."""
    sr = as_image(sr)
    fallback = as_image(fallback)
    mask = as_mask(mask)
    require_same_shape(sr, fallback, "artificial_gt (sr vs fallback)")
    require_same_shape(sr, mask, "artificial_gt (sr vs mask)")
    if dilation is not None:
        mask = dilate(mask, dilation)
    out = np.where(mask[:, :, None], fallback, sr)
    out.flags.writeable = False
    return out


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = int(np.sum(a | b))
    if union == 0:
        return 0.0
    return int(np.sum(a & b)) / union


def delta_iou(pair: FinetunePair) -> float:
    """IoU-with-GT drop from before to after, in percentage points."""
    return (_iou(pair.before_mask, pair.gt_mask) - _iou(pair.after_mask, pair.gt_mask)) * 100.0


def has_degenerate_union(pair: FinetunePair) -> bool:
    """True when either IoU term of delta_iou fell back to the 0 convention."""
    return (
        int(np.sum(pair.before_mask | pair.gt_mask)) == 0
        or int(np.sum(pair.after_mask | pair.gt_mask)) == 0
    )


def add_rem_img(pairs: list[FinetunePair]) -> tuple[float, float]:
    """Image-level percentages: artifacts added, artifacts fully removed."""
    if not pairs:
        raise ContractError("add_rem_img requires at least one pair")
    added = removed = 0
    for pair in pairs:
        a, b = pair.after_mask, pair.before_mask
        n_b = int(np.sum(b))
        if int(np.sum(a & b)) == 0 and n_b != 0:
            removed += 1
        if int(np.sum(a | b)) > n_b:
            added += 1
    return added / len(pairs) * 100.0, removed / len(pairs) * 100.0


def add_rem_pix(pair: FinetunePair) -> tuple[float | None, float | None]:
    """Pixel-level percentages: added outside B, removed inside B."""
    a, b = pair.after_mask, pair.before_mask
    n_b = int(np.sum(b))
    n_not_b = b.size - n_b
    add_pix = int(np.sum(a & ~b)) / n_not_b * 100.0 if n_not_b else None
    rem_pix = int(np.sum(~a & b)) / n_b * 100.0 if n_b else None
    return add_pix, rem_pix


def aggregate_scores(pairs: list[FinetunePair]) -> dict:
    """All five scores over a pair list; undefined terms are skipped and counted."""
    if not pairs:
        raise ContractError("aggregate_scores requires at least one pair")
    add_img, rem_img = add_rem_img(pairs)
    deltas = [delta_iou(pair) for pair in pairs]
    degenerate = sum(has_degenerate_union(pair) for pair in pairs)
    add_values, rem_values = [], []
    for pair in pairs:
        add_pix, rem_pix = add_rem_pix(pair)
        if add_pix is not None:
            add_values.append(add_pix)
        if rem_pix is not None:
            rem_values.append(rem_pix)
    return {
        "pairs": len(pairs),
        "delta_iou_mean": math.fsum(deltas) / len(deltas),
        "degenerate_union_pairs": degenerate,
        "add_img_pct": add_img,
        "rem_img_pct": rem_img,
        "add_pix_mean": math.fsum(add_values) / len(add_values) if add_values else None,
        "add_pix_defined": len(add_values),
        "rem_pix_mean": math.fsum(rem_values) / len(rem_values) if rem_values else None,
        "rem_pix_defined": len(rem_values),
    }


def load_pairs(path: str | Path) -> list[tuple[str, FinetunePair]]:
    """Read a pairs file: JSON array of {id, before_mask, after_mask, gt_mask}.

    Mask paths resolve relative to the file's directory.
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: expected a JSON array of pair entries")
    base = path.parent
    out = []
    seen = set()
    keys = {"id", "before_mask", "after_mask", "gt_mask"}
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict) or set(entry) != keys:
            raise ValidationError(
                f"{path}: entry {index} must be an object with keys {sorted(keys)}"
            )
        rid = entry["id"]
        if not isinstance(rid, str) or not rid:
            raise ValidationError(f"{path}: entry {index} id must be a nonempty string")
        if rid in seen:
            raise ValidationError(f"{path}: duplicate id {rid!r}")
        seen.add(rid)
        masks = {}
        for key in ("before_mask", "after_mask", "gt_mask"):
            value = entry[key]
            if not isinstance(value, str) or not value:
                raise ValidationError(f"pair {rid!r}: {key} must be a non-empty string")
            p = Path(value)
            masks[key] = load_mask(p if p.is_absolute() else base / p)
        out.append((rid, FinetunePair(**masks)))
    return out
