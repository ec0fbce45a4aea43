"""Shared raster, geometry and bounding-box primitives.

Everything here is a plain value type or a pure function, safe to share
between threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "Frame",
    "BBox",
    "Category",
    "Mosaic",
    "iou",
    "abs_diff_threshold",
    "concat_mosaic",
]


class Category(Enum):
    """Closed set of object classes, each with a fixed display colour."""

    AIRCRAFT = "aircraft"
    VEHICLE = "vehicle"
    PERSON = "person"

    @property
    def color(self) -> tuple[int, int, int]:
        return _CATEGORY_COLORS[self]


_CATEGORY_COLORS = {
    Category.AIRCRAFT: (235, 80, 60),
    Category.VEHICLE: (250, 210, 60),
    Category.PERSON: (80, 220, 100),
}


@dataclass(frozen=True, eq=False)
class Frame:
    """One decoded RGB frame of one camera.

    `pixels` is a (height, width, 3) uint8 array, row-major RGB.
    Frames within a synchronized tick share `frame_index` across cameras.
    """

    camera_id: int
    frame_index: int
    timestamp_ms: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {p.shape}")
        if p.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {p.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class Mosaic:
    """Synchronized frames of all cameras concatenated side by side.

    Column ranges map back to cameras: camera k owns columns
    [k * frame_width, (k + 1) * frame_width).
    """

    frame_index: int
    timestamp_ms: int
    camera_ids: tuple[int, ...]
    frame_width: int
    pixels: np.ndarray

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def camera_at(self, x: float) -> int:
        """Camera id owning mosaic column x."""
        k = int(x) // self.frame_width
        k = min(max(k, 0), len(self.camera_ids) - 1)
        return self.camera_ids[k]


def concat_mosaic(frames: list[Frame]) -> Mosaic:
    """Concatenate one synchronized tick's frames, ordered as given."""
    if not frames:
        raise ValueError("no frames to concatenate")
    idx = frames[0].frame_index
    h, w = frames[0].height, frames[0].width
    for f in frames:
        if f.frame_index != idx:
            raise ValueError("frames are not from the same tick")
        if f.height != h or f.width != w:
            raise ValueError("frames differ in size")
    return Mosaic(
        frame_index=idx,
        timestamp_ms=frames[0].timestamp_ms,
        camera_ids=tuple(f.camera_id for f in frames),
        frame_width=w,
        pixels=np.concatenate([f.pixels for f in frames], axis=1),
    )


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box; top-left corner (x, y), extents (w, h) in pixels.

    Coordinates are continuous so predicted boxes need no rounding.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box extents: w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def clipped(self, width: float, height: float) -> "BBox":
        """Intersect with the rectangle [0, width) x [0, height)."""
        x0 = min(max(self.x, 0.0), width)
        y0 = min(max(self.y, 0.0), height)
        x1 = min(max(self.x + self.w, 0.0), width)
        y1 = min(max(self.y + self.h, 0.0), height)
        return BBox(x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


def iou(b1: BBox, b2: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Degenerate rule: if both boxes have zero area the result is 0,
    avoiding 0/0.
    """
    ix = min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x)
    iy = min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = b1.area + b2.area - inter
    if union <= 0.0:
        return 0.0
    # Rounding of (x + w) - x can push inter a hair past union.
    return min(1.0, inter / union)


def abs_diff_threshold(f1: Frame, f2: Frame, t_diff: int = 20) -> np.ndarray:
    """Binary motion mask from two frames of the same camera.

    A pixel is on iff the absolute difference in some channel strictly
    exceeds `t_diff`. Returns a (H, W) bool array.
    """
    if f1.pixels.shape != f2.pixels.shape:
        raise ValueError(
            f"frame dimensions differ: {f1.pixels.shape} vs {f2.pixels.shape}"
        )
    if f1.camera_id != f2.camera_id:
        raise ValueError("frames are from different cameras")
    return mask_diff(f1.pixels, f2.pixels, t_diff)


def mask_diff(p1: np.ndarray, p2: np.ndarray, t_diff: int = 20) -> np.ndarray:
    """abs_diff_threshold on raw pixel arrays (shared by mosaic-level users)."""
    if p1.shape != p2.shape:
        raise ValueError(f"pixel dimensions differ: {p1.shape} vs {p2.shape}")
    d = np.abs(p1.astype(np.int16) - p2.astype(np.int16)).max(axis=2)
    return d > t_diff
