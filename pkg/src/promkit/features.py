"""Regressor input features and baseline quality maps.

Three features feed the prominence regressor, all at full image
resolution:

* dists   -- ingested from an FMAP file produced by the neural exporter
* ssm_jup -- residual statistics of the SR image against a bicubic
             upsample of its LR input, computed natively on RGB
* bd_jup  -- 0.6 * LPIPS (ingested) + 0.4 * (1 - ERQA) where ERQA is a
             native block-wise edge-fidelity score

SSIM (for baseline detectors) and ERQA are computed on luma
(0.299 R + 0.587 G + 0.114 B); ssm_jup uses all channels. Borders are
handled by edge replication for every windowed filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    BlockGrid,
    ContractError,
    DataError,
    as_heatmap,
    as_image,
    require_same_shape,
    read_fmap,
    write_fmap,
)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class FeatureConfig:
    """Block geometries and weights for the three-feature stack."""

    dists_grid: BlockGrid = BlockGrid(16, 16, 16, 16)
    lpips_grid: BlockGrid = BlockGrid(32, 32, 16, 16)
    erqa_grid: BlockGrid = BlockGrid(8, 8, 8, 8)
    lpips_weight: float = 0.6
    erqa_weight: float = 0.4
    ssm_window: int = 7
    edge_match_radius: int = 2

    def __post_init__(self):
        if abs(self.lpips_weight + self.erqa_weight - 1.0) > 1e-12:
            raise ContractError("lpips_weight + erqa_weight must equal 1")
        if abs(2.0 * self.lpips_weight - 3.0 * self.erqa_weight) > 1e-12:
            raise ContractError("lpips/erqa weights must keep the 3:2 ratio")
        if self.ssm_window < 1 or self.ssm_window % 2 == 0:
            raise ContractError("ssm_window must be odd and >= 1")
        if self.edge_match_radius < 0:
            raise ContractError("edge_match_radius must be >= 0")


@dataclass(frozen=True)
class FeatureStack:
    """The three aligned feature maps; channel order dists, ssm_jup, bd_jup."""

    dists: np.ndarray
    ssm_jup: np.ndarray
    bd_jup: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dists", as_heatmap(self.dists))
        object.__setattr__(self, "ssm_jup", as_heatmap(self.ssm_jup))
        object.__setattr__(self, "bd_jup", as_heatmap(self.bd_jup))
        require_same_shape(self.dists, self.ssm_jup, "feature stack (dists vs ssm_jup)")
        require_same_shape(self.dists, self.bd_jup, "feature stack (dists vs bd_jup)")
        if self.dists.min() < 0.0 or self.dists.max() > 1.0:
            raise DataError("dists feature must lie in [0, 1]")
        if self.ssm_jup.min() < 0.0:
            raise DataError("ssm_jup feature must be nonnegative")
        if self.bd_jup.min() < 0.0 or self.bd_jup.max() > 1.0:
            raise DataError("bd_jup feature must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.dists.shape

    def as_array(self) -> np.ndarray:
        """Stacked (H, W, 3) array in the documented channel order."""
        out = np.stack([self.dists, self.ssm_jup, self.bd_jup], axis=-1)
        out.flags.writeable = False
        return out


def luma(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma for 3-channel images; the channel itself for grayscale."""
    img = as_image(image)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


# --------------------------------------------------------------------------
# Bicubic resampling (Catmull-Rom, a = -0.5)


def _catmull_rom(d: np.ndarray) -> np.ndarray:
    a = -0.5
    d = np.abs(d)
    near = (a + 2.0) * d**3 - (a + 3.0) * d**2 + 1.0
    far = a * (d**3 - 5.0 * d**2 + 8.0 * d - 4.0)
    return np.where(d <= 1.0, near, np.where(d < 2.0, far, 0.0))


def _resample_axis(arr: np.ndarray, scale: int) -> np.ndarray:
    """Upsample axis 0 by an integer factor with half-pixel-center alignment."""
    n_in = arr.shape[0]
    n_out = n_in * scale
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(src).astype(int)
    t = src - base
    offsets = np.arange(-1, 3)
    taps = np.clip(base[:, None] + offsets[None, :], 0, n_in - 1)
    weights = _catmull_rom(offsets[None, :] - t[:, None])
    gathered = arr[taps]  # (n_out, 4, ...)
    return np.einsum("ot,ot...->o...", weights, gathered)


def bicubic_upsample(image: np.ndarray, scale: int) -> np.ndarray:
    """Catmull-Rom upsample by an integer factor, edge-clamped.

    Returns raw interpolated values; mild over/undershoot past [0, 1]
    is preserved so residuals stay faithful.
    """
    img = as_image(image)
    if scale < 1:
        raise ContractError(f"scale must be >= 1, got {scale}")
    out = _resample_axis(img, scale)
    out = np.swapaxes(_resample_axis(np.swapaxes(out, 0, 1), scale), 0, 1)
    return out


# --------------------------------------------------------------------------
# SSIM


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def _gaussian_filter(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(arr, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def ssim_map(test: np.ndarray, reference: np.ndarray, window: int = 11) -> np.ndarray:
    """Per-pixel SSIM on luma with a Gaussian window (sigma 1.5); output in [-1, 1]."""
    test = as_image(test)
    reference = as_image(reference)
    require_same_shape(test, reference, "ssim_map")
    if test.shape[2] != reference.shape[2]:
        raise ContractError("ssim_map: channel count mismatch")
    if window < 1 or window % 2 == 0:
        raise ContractError("ssim window must be odd and >= 1")
    x, y = luma(test), luma(reference)
    k = _gaussian_kernel(window, SSIM_SIGMA)
    mu1, mu2 = _gaussian_filter(x, k), _gaussian_filter(y, k)
    sigma1_sq = _gaussian_filter(x * x, k) - mu1 * mu1
    sigma2_sq = _gaussian_filter(y * y, k) - mu2 * mu2
    sigma12 = _gaussian_filter(x * y, k) - mu1 * mu2
    numerator = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * sigma12 + SSIM_C2)
    denominator = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (sigma1_sq + sigma2_sq + SSIM_C2)
    return as_heatmap(numerator / denominator)


def ssim_dissimilarity(test: np.ndarray, reference: np.ndarray, window: int = 11) -> np.ndarray:
    """(1 - SSIM) / 2, mapping SSIM's [-1, 1] onto [0, 1] (higher = worse)."""
    return as_heatmap((1.0 - ssim_map(test, reference, window)) / 2.0)


# --------------------------------------------------------------------------
# ERQA


_SOBEL_DIFF = np.array([-1.0, 0.0, 1.0])
_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0])


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude from 3x3 Sobel kernels, replicate border.

    Computed separably so constant regions give exactly zero.
    """
    gx = ndimage.correlate1d(gray, _SOBEL_DIFF, axis=1, mode="nearest")
    gx = ndimage.correlate1d(gx, _SOBEL_SMOOTH, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gray, _SOBEL_DIFF, axis=0, mode="nearest")
    gy = ndimage.correlate1d(gy, _SOBEL_SMOOTH, axis=1, mode="nearest")
    return np.hypot(gx, gy)


def otsu_threshold(values: np.ndarray) -> float:
    """Otsu's threshold over a 256-bin histogram spanning [0, max]."""
    v = np.asarray(values, dtype=np.float64).ravel()
    vmax = float(v.max())
    if vmax <= 0.0:
        return 0.0
    hist, bin_edges = np.histogram(v, bins=256, range=(0.0, vmax))
    p = hist.astype(np.float64) / v.size
    centers = (bin_edges[:-1] + bin_edges[1:]) / 2.0
    w0 = np.cumsum(p)
    w1 = 1.0 - w0
    mu_cum = np.cumsum(p * centers)
    mu_total = mu_cum[-1]
    valid = (w0 > 0.0) & (w1 > 0.0)
    sigma_b = np.zeros_like(w0)
    sigma_b[valid] = (mu_total * w0[valid] - mu_cum[valid]) ** 2 / (w0[valid] * w1[valid])
    return float(centers[int(np.argmax(sigma_b))])


def edge_mask(image: np.ndarray) -> np.ndarray:
    """Edge pixels: Sobel magnitude of luma strictly above its Otsu threshold."""
    mag = sobel_magnitude(luma(image))
    return mag > otsu_threshold(mag)


def _match_offsets(radius: int) -> list[tuple[int, int]]:
    offs = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius
    ]
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))
    return offs


def greedy_block_match(
    test_edges: np.ndarray, ref_edges: np.ndarray, radius: int
) -> int:
    """Greedy one-to-one matching of edge pixels within a block.

    Test pixels are visited row-major; each takes the first unmatched
    reference pixel among candidates ordered by squared distance, then
    (dy, dx). Returns the matched count.
    """
    offsets = _match_offsets(radius)
    available = set(zip(*np.nonzero(ref_edges)))
    h, w = ref_edges.shape
    matched = 0
    for y, x in zip(*np.nonzero(test_edges)):
        for dy, dx in offsets:
            cand = (y + dy, x + dx)
            if cand[0] < 0 or cand[0] >= h or cand[1] < 0 or cand[1] >= w:
                continue
            if cand in available:
                available.remove(cand)
                matched += 1
                break
    return matched


def erqa_map(
    test: np.ndarray,
    reference: np.ndarray,
    grid: BlockGrid | None = None,
    radius: int = 2,
) -> np.ndarray:
    """Block-wise edge-fidelity score in [0, 1].

    Edges come from Sobel + per-image Otsu on luma. Matching is local to
    each block; block score is F1 = 2m / (nt + nr) with 1.0 for blocks
    empty on both sides. Scores broadcast to block pixels; margin pixels
    outside the grid take the nearest covered value.
    """
    test = as_image(test)
    reference = as_image(reference)
    require_same_shape(test, reference, "erqa_map")
    if grid is None:
        grid = BlockGrid(8, 8, 8, 8)
    if grid.stride_x != grid.block_w or grid.stride_y != grid.block_h:
        raise ContractError("erqa_map requires a non-overlapping grid")
    height, width = test.shape[:2]
    te, re = edge_mask(test), edge_mask(reference)
    positions = grid.positions(height, width)
    if not positions:
        raise ContractError(f"no full {grid.block_h}x{grid.block_w} block fits in {height}x{width}")
    scores = np.empty(len(positions))
    for index, (y, x) in enumerate(positions):
        tb = te[y : y + grid.block_h, x : x + grid.block_w]
        rb = re[y : y + grid.block_h, x : x + grid.block_w]
        nt, nr = int(tb.sum()), int(rb.sum())
        if nt == 0 and nr == 0:
            scores[index] = 1.0
        else:
            m = greedy_block_match(tb, rb, radius)
            scores[index] = 2.0 * m / (nt + nr)
    return as_heatmap(grid.paint(scores, height, width))


# --------------------------------------------------------------------------
# ssm_jup


def ssm_jup_map(sr: np.ndarray, lr: np.ndarray, window: int = 7) -> np.ndarray:
    """Residual-statistics artifact map against a bicubic reference.

    R = sr - bicubic(lr) per channel; map = mean over channels of
    |R| * sigma_local(R, window) / (sigma_global(R) + 1e-6) using
    population standard deviations and replicate padding.
    """
    sr = as_image(sr)
    lr = as_image(lr)
    if sr.shape[2] != lr.shape[2]:
        raise ContractError("ssm_jup_map: channel count mismatch")
    if window < 1 or window % 2 == 0:
        raise ContractError("ssm window must be odd and >= 1")
    sh, sw = sr.shape[:2]
    lh, lw = lr.shape[:2]
    if sh % lh != 0 or sw % lw != 0 or sh // lh != sw // lw:
        raise ContractError(
            f"ssm_jup_map: sr {sh}x{sw} is not an integer multiple of lr {lh}x{lw}"
        )
    scale = sh // lh
    residual = sr - bicubic_upsample(lr, scale)
    channels = []
    for c in range(residual.shape[2]):
        r = residual[:, :, c]
        mean = ndimage.uniform_filter(r, size=window, mode="nearest")
        mean_sq = ndimage.uniform_filter(r * r, size=window, mode="nearest")
        sigma_local = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
        sigma_global = float(r.std())
        channels.append(np.abs(r) * sigma_local / (sigma_global + 1e-6))
    return as_heatmap(np.mean(channels, axis=0))


# --------------------------------------------------------------------------
# bd_jup and the assembled stack


def bd_jup_combine(
    lpips: np.ndarray, erqa: np.ndarray, cfg: FeatureConfig | None = None
) -> np.ndarray:
    """Weighted blend 0.6 * lpips + 0.4 * (1 - erqa), pointwise in [0, 1]."""
    cfg = cfg or FeatureConfig()
    lpips = as_heatmap(lpips)
    erqa = as_heatmap(erqa)
    require_same_shape(lpips, erqa, "bd_jup_combine")
    if lpips.min() < 0.0 or lpips.max() > 1.0:
        raise ContractError("bd_jup_combine: lpips map must lie in [0, 1]")
    if erqa.min() < 0.0 or erqa.max() > 1.0:
        raise ContractError("bd_jup_combine: erqa map must lie in [0, 1]")
    return as_heatmap(cfg.lpips_weight * lpips + cfg.erqa_weight * (1.0 - erqa))


def _load_feature_fmap(path: str | Path, name: str, expected_shape: tuple[int, int]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{name} feature map not found: {path}")
    hm = read_fmap(path)
    if hm.shape != expected_shape:
        raise ContractError(
            f"{name} feature map is {hm.shape[0]}x{hm.shape[1]}, image is "
            f"{expected_shape[0]}x{expected_shape[1]}"
        )
    return hm


def build_feature_stack(
    sr: np.ndarray,
    reference: np.ndarray,
    lr: np.ndarray,
    dists_path: str | Path,
    lpips_path: str | Path,
    cfg: FeatureConfig | None = None,
) -> FeatureStack:
    """Assemble the regressor input stack for one image.

    dists and lpips arrive as FMAP files already broadcast to image
    resolution by the exporter; ssm_jup and ERQA are computed natively.
    """
    cfg = cfg or FeatureConfig()
    sr = as_image(sr)
    reference = as_image(reference)
    require_same_shape(sr, reference, "build_feature_stack (sr vs reference)")
    shape = sr.shape[:2]
    dists = _load_feature_fmap(dists_path, "dists", shape)
    if dists.min() < 0.0 or dists.max() > 1.0:
        raise DataError("dists feature map must lie in [0, 1]")
    lpips = _load_feature_fmap(lpips_path, "lpips", shape)
    erqa = erqa_map(sr, reference, cfg.erqa_grid, cfg.edge_match_radius)
    bd_jup = bd_jup_combine(lpips, erqa, cfg)
    ssm = ssm_jup_map(sr, lr, cfg.ssm_window)
    return FeatureStack(dists=dists, ssm_jup=ssm, bd_jup=bd_jup)


FEATURE_NAMES = ("dists", "ssm_jup", "bd_jup")


def save_feature_dir(stack: FeatureStack, directory: str | Path) -> list[Path]:
    """Write the three feature maps as <name>.fmap files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in FEATURE_NAMES:
        path = directory / f"{name}.fmap"
        write_fmap(getattr(stack, name), path)
        paths.append(path)
    return paths


def load_feature_dir(directory: str | Path) -> FeatureStack:
    """Read a stack written by save_feature_dir."""
    directory = Path(directory)
    arrays = {}
    for name in FEATURE_NAMES:
        path = directory / f"{name}.fmap"
        if not path.exists():
            raise DataError(f"missing feature map {path}")
        arrays[name] = read_fmap(path)
    return FeatureStack(**arrays)
