"""Shared data model and bit-exact file formats.

Pixel data travels through the toolkit as plain numpy arrays:

* image   -- float64, shape (H, W, C) with C in {1, 3}, values in [0, 1]
* heatmap -- float64, shape (H, W), every value finite
* mask    -- bool, shape (H, W)

Loaders return read-only arrays so results can be shared across threads.

FMAP feature-map format (binary, little-endian):

    bytes 0..3    magic "FMAP"
    u32           version (currently 1)
    u32           width
    u32           height
    u32           channels (1 for heatmaps)
    then          width*height*channels float32 values, row-major

No trailing bytes are allowed.

Dataset manifest: UTF-8 JSON array of objects with keys id, sr_method,
lr_path, sr_path, reference_path, mask_path and optionally prominence
(number in [0, 1]) and votes ({"yes": int, "total": int}). Relative
paths resolve against the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

_MANIFEST_REQUIRED = ("id", "sr_method", "lr_path", "sr_path", "reference_path", "mask_path")
_MANIFEST_OPTIONAL = ("prominence", "votes")


class PromkitError(Exception):
    """Base class for all toolkit errors."""


class FormatError(PromkitError):
    """A file exists but its contents violate the declared format."""


class DataError(PromkitError):
    """Payload values violate a data invariant (e.g. non-finite floats)."""


class ValidationError(PromkitError):
    """A manifest or record fails validation; the message names the record."""


class ContractError(PromkitError):
    """An operation precondition was violated by the caller."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def as_image(arr: np.ndarray) -> np.ndarray:
    """Validate and return ``arr`` as image currency (H, W, C) float64."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, np.newaxis]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ContractError(f"image must have shape (H, W, 1|3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"image must be non-empty, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("image contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise DataError("image values must lie in [0, 1]")
    return _readonly(a)


def as_heatmap(arr: np.ndarray) -> np.ndarray:
    """Validate and return ``arr`` as heatmap currency (H, W) float64."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"heatmap must have shape (H, W), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("heatmap contains non-finite values")
    return _readonly(a)


def as_mask(arr: np.ndarray) -> np.ndarray:
    """Validate and return ``arr`` as mask currency (H, W) bool."""
    a = np.asarray(arr)
    if a.dtype != np.bool_:
        if not np.isin(a, (0, 1)).all():
            raise ContractError("mask values must be boolean or 0/1")
        a = a.astype(bool)
    else:
        a = a.copy()
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractError(f"mask must have shape (H, W), got {a.shape}")
    return _readonly(a)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ContractError(f"{what}: dimension mismatch {a.shape[:2]} vs {b.shape[:2]}")


# --------------------------------------------------------------------------
# PNG I/O


def _decode_png(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    if not buf.startswith(_PNG_SIGNATURE):
        raise FormatError(f"{path}: not a PNG file")
    raw = cv2.imdecode(np.frombuffer(buf, np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: PNG could not be decoded")
    return raw


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8- or 16-bit grayscale or RGB PNG, scaled to [0, 1].

    Alpha channels are rejected. Returns (H, W, C) float64 with RGB
    channel order.
    """
    path = Path(path)
    raw = _decode_png(path)
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported bit depth {raw.dtype}")
    if raw.ndim == 2:
        data = raw[:, :, np.newaxis]
    elif raw.ndim == 3 and raw.shape[2] == 3:
        data = raw[:, :, ::-1]  # BGR -> RGB
    elif raw.ndim == 3 and raw.shape[2] == 4:
        raise FormatError(f"{path}: alpha channel not supported")
    else:
        raise FormatError(f"{path}: unsupported channel count {raw.shape}")
    return _readonly(data.astype(np.float64) / scale)


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write an image array as an 8-bit PNG."""
    img = as_image(image)
    data = np.rint(img * 255.0).astype(np.uint8)
    if data.shape[2] == 3:
        data = data[:, :, ::-1]  # RGB -> BGR
    else:
        data = data[:, :, 0]
    if not cv2.imwrite(str(Path(path)), data):
        raise OSError(f"{path}: could not write PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Load a binary mask PNG: single-channel, 0 = background, 255 = artifact."""
    path = Path(path)
    raw = _decode_png(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: mask must be single-channel")
    values = np.unique(raw)
    if not np.isin(values, (0, 255)).all():
        raise FormatError(f"{path}: mask values must be 0 or 255, found {values[:8].tolist()}")
    return _readonly(raw == 255)


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask as a single-channel 0/255 PNG."""
    m = as_mask(mask)
    if not cv2.imwrite(str(Path(path)), m.astype(np.uint8) * 255):
        raise OSError(f"{path}: could not write PNG")


# --------------------------------------------------------------------------
# FMAP I/O


def read_fmap(path: str | Path) -> np.ndarray:
    """Read a single-channel FMAP file into a heatmap array."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 20:
        raise FormatError(f"{path}: truncated FMAP header")
    if buf[:4] != FMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    version, width, height, channels = struct.unpack("<4I", buf[4:20])
    if version != FMAP_VERSION:
        raise FormatError(f"{path}: unsupported FMAP version {version}")
    if channels != 1:
        raise FormatError(f"{path}: expected 1 channel, got {channels}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    expected = 20 + 4 * width * height
    if len(buf) != expected:
        raise FormatError(f"{path}: payload length {len(buf) - 20}, expected {expected - 20}")
    data = np.frombuffer(buf, dtype="<f4", offset=20).reshape(height, width)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: payload contains non-finite values")
    return _readonly(data.astype(np.float64))


def write_fmap(heatmap: np.ndarray, path: str | Path) -> None:
    """Write a heatmap as a single-channel FMAP file (float32 payload)."""
    hm = as_heatmap(heatmap)
    height, width = hm.shape
    payload = hm.astype("<f4").tobytes()
    header = FMAP_MAGIC + struct.pack("<4I", FMAP_VERSION, width, height, 1)
    Path(path).write_bytes(header + payload)


# --------------------------------------------------------------------------
# Dataset manifest


@dataclass(frozen=True)
class ArtifactRecord:
    """One dataset example: image paths, mask, and ground-truth prominence."""

    id: str
    sr_method: str
    lr_path: Path
    sr_path: Path
    reference_path: Path
    mask_path: Path
    prominence: float | None = None
    votes: tuple[int, int] | None = None  # (yes, total)


def _validate_votes(votes: object, rid: str) -> tuple[int, int]:
    if not isinstance(votes, dict) or set(votes) != {"yes", "total"}:
        raise ValidationError(f"record {rid!r}: votes must be {{'yes': int, 'total': int}}")
    yes, total = votes["yes"], votes["total"]
    if not isinstance(yes, int) or not isinstance(total, int):
        raise ValidationError(f"record {rid!r}: vote counts must be integers")
    if total < 1 or yes < 0 or yes > total:
        raise ValidationError(f"record {rid!r}: inconsistent vote counts yes={yes} total={total}")
    return yes, total


def load_manifest(path: str | Path) -> list[ArtifactRecord]:
    """Load and validate a dataset manifest, resolving relative paths."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: manifest must be a JSON array")
    base = path.parent
    records: list[ArtifactRecord] = []
    seen: set[str] = set()
    for index, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ValidationError(f"{path}: entry {index} is not an object")
        rid = item.get("id")
        if not isinstance(rid, str) or not rid:
            raise ValidationError(f"{path}: entry {index} has no usable id")
        if rid in seen:
            raise ValidationError(f"record {rid!r}: duplicate id")
        seen.add(rid)
        for key in _MANIFEST_REQUIRED:
            if key not in item:
                raise ValidationError(f"record {rid!r}: missing key {key!r}")
        unknown = set(item) - set(_MANIFEST_REQUIRED) - set(_MANIFEST_OPTIONAL)
        if unknown:
            raise ValidationError(f"record {rid!r}: unknown key {sorted(unknown)[0]!r}")
        if not isinstance(item["sr_method"], str):
            raise ValidationError(f"record {rid!r}: sr_method must be a string")
        paths = {}
        for key in ("lr_path", "sr_path", "reference_path", "mask_path"):
            value = item[key]
            if not isinstance(value, str) or not value:
                raise ValidationError(f"record {rid!r}: {key} must be a non-empty string")
            p = Path(value)
            paths[key] = p if p.is_absolute() else base / p
        prominence = item.get("prominence")
        if prominence is not None:
            if not isinstance(prominence, (int, float)) or isinstance(prominence, bool):
                raise ValidationError(f"record {rid!r}: prominence must be a number")
            prominence = float(prominence)
            if not 0.0 <= prominence <= 1.0:
                raise ValidationError(f"record {rid!r}: prominence {prominence} outside [0, 1]")
        votes = item.get("votes")
        if votes is not None:
            votes = _validate_votes(votes, rid)
            derived = votes[0] / votes[1]
            if prominence is None:
                prominence = derived
            elif abs(prominence - derived) > 1e-9:
                raise ValidationError(
                    f"record {rid!r}: prominence {prominence} disagrees with votes {votes[0]}/{votes[1]}"
                )
        records.append(
            ArtifactRecord(
                id=rid,
                sr_method=item["sr_method"],
                prominence=prominence,
                votes=votes,
                **paths,
            )
        )
    return records


# --------------------------------------------------------------------------
# Block grids


@dataclass(frozen=True)
class BlockGrid:
    """Grid of fixed-size blocks anchored at (0, 0); partial border blocks are dropped."""

    block_w: int
    block_h: int
    stride_x: int
    stride_y: int

    def __post_init__(self):
        if min(self.block_w, self.block_h, self.stride_x, self.stride_y) < 1:
            raise ContractError("block and stride must be >= 1")
        if self.stride_x > self.block_w or self.stride_y > self.block_h:
            raise ContractError("stride must not exceed block size")

    def positions(self, height: int, width: int) -> list[tuple[int, int]]:
        """Top-left (y, x) corners of all blocks fully inside height x width, row-major."""
        ys = range(0, height - self.block_h + 1, self.stride_y)
        xs = range(0, width - self.block_w + 1, self.stride_x)
        return [(y, x) for y in ys for x in xs]

    def paint(self, scores: np.ndarray, height: int, width: int) -> np.ndarray:
        """Broadcast per-block scores to pixels.

        Each covered pixel takes the mean score of all blocks containing
        it; pixels outside every block (right/bottom margins) take the
        value of the nearest covered pixel.
        """
        positions = self.positions(height, width)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(positions),):
            raise ContractError(f"expected {len(positions)} scores, got {scores.shape}")
        if len(positions) == 0:
            raise ContractError(f"no full block fits in {height}x{width}")
        total = np.zeros((height, width), dtype=np.float64)
        count = np.zeros((height, width), dtype=np.int64)
        for (y, x), s in zip(positions, scores):
            total[y : y + self.block_h, x : x + self.block_w] += s
            count[y : y + self.block_h, x : x + self.block_w] += 1
        covered_h = max(y for y, _ in positions) + self.block_h
        covered_w = max(x for _, x in positions) + self.block_w
        out = np.zeros((height, width), dtype=np.float64)
        out[:covered_h, :covered_w] = (
            total[:covered_h, :covered_w] / count[:covered_h, :covered_w]
        )
        if covered_h < height:
            out[covered_h:, :covered_w] = out[covered_h - 1, :covered_w]
        if covered_w < width:
            out[:, covered_w:] = out[:, covered_w - 1 : covered_w]
        return out
