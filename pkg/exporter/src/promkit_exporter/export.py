"""Block-wise metric export: paired PNGs in, one FMAP out.

Blocks are scored on a fixed grid (DISTS 16x16 stride 16, LPIPS 32x32
stride 16; partial border blocks are dropped). Each covered pixel takes
the mean score of the blocks containing it; margin pixels past the last
full block copy the nearest covered pixel. A JSON sidecar records the
metric, grid, reduction, and weights digest next to every exported map.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from .fmap import write_fmap
from .models import MetricModel, load_model, weights_digest

WEIGHTS_ENV = "PROMKIT_EXPORTER_WEIGHTS"


@dataclass(frozen=True)
class Grid:
    """Fixed-size blocks anchored at (0, 0); partial border blocks dropped."""

    block_w: int
    block_h: int
    stride_x: int
    stride_y: int

    def __post_init__(self):
        if min(self.block_w, self.block_h, self.stride_x, self.stride_y) < 1:
            raise ValueError("block and stride must be >= 1")
        if self.stride_x > self.block_w or self.stride_y > self.block_h:
            raise ValueError("stride must not exceed block size")

    def positions(self, height: int, width: int) -> list[tuple[int, int]]:
        ys = range(0, height - self.block_h + 1, self.stride_y)
        xs = range(0, width - self.block_w + 1, self.stride_x)
        return [(y, x) for y in ys for x in xs]

    def paint(self, scores: np.ndarray, height: int, width: int) -> np.ndarray:
        """Mean score of covering blocks per pixel; borders copy inward."""
        positions = self.positions(height, width)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(positions),):
            raise ValueError(f"expected {len(positions)} scores, got {scores.shape}")
        if len(positions) == 0:
            raise ValueError(f"no full block fits in {height}x{width}")
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


METRIC_GRIDS = {
    "dists": Grid(16, 16, 16, 16),
    "lpips": Grid(32, 32, 16, 16),
}


@dataclass(frozen=True)
class ExportJob:
    sr_path: Path
    reference_path: Path
    metric: str
    grid: Grid
    out_path: Path


def make_job(metric: str, sr_path, reference_path, out_path) -> ExportJob:
    if metric not in METRIC_GRIDS:
        raise ValueError(f"metric must be one of {sorted(METRIC_GRIDS)}, got {metric!r}")
    return ExportJob(
        sr_path=Path(sr_path),
        reference_path=Path(reference_path),
        metric=metric,
        grid=METRIC_GRIDS[metric],
        out_path=Path(out_path),
    )


def load_png(path: str | Path) -> np.ndarray:
    """8- or 16-bit PNG as (H, W, 3) float64 RGB in [0, 1]."""
    buf = Path(path).read_bytes()
    raw = cv2.imdecode(np.frombuffer(buf, np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"{path}: not a decodable image")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    if raw.ndim == 2:
        raw = np.stack([raw, raw, raw], axis=-1)
    elif raw.ndim == 3 and raw.shape[2] == 3:
        raw = raw[:, :, ::-1]  # BGR -> RGB
    else:
        raise ValueError(f"{path}: expected grayscale or RGB, got shape {raw.shape}")
    return raw.astype(np.float64) / scale


def score_blocks(
    model: MetricModel, metric: str, sr: np.ndarray, reference: np.ndarray, grid: Grid
) -> np.ndarray:
    """Per-block scores in grid position order."""
    height, width = sr.shape[:2]
    positions = grid.positions(height, width)
    if not positions:
        raise ValueError(
            f"image {width}x{height} smaller than one {grid.block_w}x{grid.block_h} block"
        )
    blocks_sr = np.stack(
        [sr[y : y + grid.block_h, x : x + grid.block_w] for y, x in positions]
    )
    blocks_ref = np.stack(
        [reference[y : y + grid.block_h, x : x + grid.block_w] for y, x in positions]
    )
    to_tensor = lambda a: torch.from_numpy(a.transpose(0, 3, 1, 2).copy()).float()
    with torch.no_grad():
        scores = model.score(metric, to_tensor(blocks_sr), to_tensor(blocks_ref))
    return scores.double().numpy()


def resolve_weights(weights_path=None) -> Path:
    if weights_path is not None:
        return Path(weights_path)
    env = os.environ.get(WEIGHTS_ENV)
    if not env:
        raise ValueError(
            f"no weights given: pass --weights or set {WEIGHTS_ENV} to a checkpoint "
            "file (scripts/make_test_weights.py generates a synthetic one)"
        )
    return Path(env)


def export(job: ExportJob, weights_path=None) -> np.ndarray:
    """Run one export job; returns the painted map after writing it."""
    weights = resolve_weights(weights_path)
    model = load_model(weights)
    sr = load_png(job.sr_path)
    reference = load_png(job.reference_path)
    if sr.shape != reference.shape:
        raise ValueError(
            f"dimension mismatch: {job.sr_path} is {sr.shape[1]}x{sr.shape[0]}, "
            f"{job.reference_path} is {reference.shape[1]}x{reference.shape[0]}"
        )
    torch.set_num_threads(1)  # fixed thread count keeps reductions bit-stable
    height, width = sr.shape[:2]
    scores = score_blocks(model, job.metric, sr, reference, job.grid)
    painted = job.grid.paint(scores, height, width)
    write_fmap(painted, job.out_path)
    meta = {
        "metric": job.metric,
        "grid": {
            "block_w": job.grid.block_w,
            "block_h": job.grid.block_h,
            "stride_x": job.grid.stride_x,
            "stride_y": job.grid.stride_y,
        },
        "overlap_reduction": "mean",
        "weights_sha256": weights_digest(weights),
    }
    Path(str(job.out_path) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n"
    )
    return painted
