"""Binary-mask morphology and connected components.

Implements the three-step detection-mask cleanup (open with a 25x25
square, dilate with a disc, close with a 25x25 square), generic
erode/dilate/open/close against square or disc structuring elements,
binarization, and 8-connected component extraction.

Out-of-image pixels count as background for both erosion and dilation,
so foreground touching the border erodes away and dilation never wraps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .core import ContractError, as_heatmap, as_mask, require_same_shape

# Postprocessing kernels. The dilation kernel is requested as 64 px but
# an even kernel has no center pixel, so it is adjusted down to a
# 63-px-diameter disc (radius 31); callers can surface POSTPROCESS_NOTE
# in run metadata.
OPEN_SIZE = 25
CLOSE_SIZE = 25
DILATE_DIAMETER = 63
POSTPROCESS_NOTE = "dilate kernel adjusted: 64 px requested, 63-px-diameter disc used"


@dataclass(frozen=True)
class StructuringElement:
    """Centered square or disc footprint; even sizes are bumped to the next odd."""

    shape: str  # "square" | "disc"
    size: int  # side length or diameter, odd
    requested_size: int  # size before odd adjustment

    def __post_init__(self):
        if self.shape not in ("square", "disc"):
            raise ContractError(f"unknown structuring element shape {self.shape!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise ContractError(f"structuring element size must be odd and >= 1, got {self.size}")

    @classmethod
    def square(cls, size: int) -> "StructuringElement":
        return cls("square", size + 1 if size % 2 == 0 else size, size)

    @classmethod
    def disc(cls, diameter: int) -> "StructuringElement":
        return cls("disc", diameter + 1 if diameter % 2 == 0 else diameter, diameter)

    @property
    def adjusted(self) -> bool:
        return self.size != self.requested_size

    def footprint(self) -> np.ndarray:
        """Boolean membership array of shape (size, size)."""
        if self.shape == "square":
            return np.ones((self.size, self.size), dtype=bool)
        r = (self.size - 1) // 2
        dy, dx = np.ogrid[-r : r + 1, -r : r + 1]
        return dy * dy + dx * dx <= r * r


def binarize(heatmap: np.ndarray, threshold: float) -> np.ndarray:
    """Pixel true iff heatmap value >= threshold."""
    hm = as_heatmap(heatmap)
    if not np.isfinite(threshold):
        raise ContractError("threshold must be finite")
    return as_mask(hm >= threshold)


def _morph(mask: np.ndarray, se: StructuringElement, op) -> np.ndarray:
    m = as_mask(mask)
    kernel = se.footprint().astype(np.uint8)
    out = op(m.astype(np.uint8), kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return as_mask(out.astype(bool))


def erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return _morph(mask, se, cv2.erode)


def dilate(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return _morph(mask, se, cv2.dilate)


def open_mask(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return dilate(erode(mask, se), se)


def close_mask(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return erode(dilate(mask, se), se)


def postprocess_mask(mask: np.ndarray) -> np.ndarray:
    """Detection-mask cleanup: open (25x25 square), dilate (63-px disc), close (25x25 square)."""
    square = StructuringElement.square(OPEN_SIZE)
    out = open_mask(mask, square)
    out = dilate(out, StructuringElement.disc(DILATE_DIAMETER))
    return close_mask(out, square)


@dataclass(frozen=True)
class Component:
    """One 8-connected blob of a mask."""

    pixels: tuple[tuple[int, int], ...]  # (y, x), row-major
    bbox: tuple[int, int, int, int]  # top, left, height, width
    area: int
    strength: float | None = field(default=None)

    @property
    def sort_strength(self) -> float:
        return self.strength if self.strength is not None else float(self.area)


_EIGHT = np.ones((3, 3), dtype=int)


def components(
    mask: np.ndarray,
    strength_map: np.ndarray | None = None,
    min_area: int = 1,
) -> list[Component]:
    """8-connected components with area >= min_area.

    Sorted by strength (sum of strength_map over the component, or area
    when no map is given) descending; ties broken by the top-left
    bounding-box corner in row-major order.
    """
    m = as_mask(mask)
    if strength_map is not None:
        strength_map = as_heatmap(strength_map)
        require_same_shape(m, strength_map, "components")
    if min_area < 1:
        raise ContractError(f"min_area must be >= 1, got {min_area}")
    labels, count = ndimage.label(m, structure=_EIGHT)
    out = []
    for index in range(1, count + 1):
        ys, xs = np.nonzero(labels == index)
        if ys.size < min_area:
            continue
        top, left = int(ys.min()), int(xs.min())
        bbox = (top, left, int(ys.max()) - top + 1, int(xs.max()) - left + 1)
        strength = float(strength_map[ys, xs].sum()) if strength_map is not None else None
        out.append(
            Component(
                pixels=tuple(zip(ys.tolist(), xs.tolist())),
                bbox=bbox,
                area=int(ys.size),
                strength=strength,
            )
        )
    out.sort(key=lambda c: (-c.sort_strength, c.bbox[0], c.bbox[1]))
    return out
