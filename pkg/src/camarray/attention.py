"""Attention mechanisms: deciding where the per-tick detection budget goes.

Three sources of requests, combined by a scheduler under a hard budget:
a startup sliding-window sweep, motion hot-spots from the frame-diff mask,
and predicted positions of tracked objects.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import iou
from .detect import DetectorWindow

__all__ = [
    "Mechanism",
    "AttentionRequest",
    "AttentionConfig",
    "sliding_window_plan",
    "difference_plan",
    "expectation_plan",
    "Scheduler",
]


class Mechanism(enum.Enum):
    SLIDING_WINDOW = "sliding_window"
    DIFFERENCE = "difference"
    EXPECTATION = "expectation"


@dataclass(frozen=True)
class AttentionRequest:
    window: DetectorWindow
    mechanism: Mechanism
    priority: int
    target_object_id: int | None = None


@dataclass(frozen=True)
class AttentionConfig:
    budget: int = 4
    window_size: int = 960
    startup_overlap: float = 0.0
    diff_threshold: int = 50
    merge_iou: float = 0.8


def _axis_positions(length: int, size: int, stride: int) -> list[int]:
    """Window origins along one axis; the final window is clamped inside."""
    positions = []
    x = 0
    while x + size < length:
        positions.append(x)
        x += stride
    last = length - size
    if not positions or positions[-1] != last:
        positions.append(last)
    return positions


def sliding_window_plan(mosaic_size: tuple[int, int], size: int,
                        overlap: float = 0.0) -> list[AttentionRequest]:
    """Row-major tiling of the whole mosaic with windows of side `size`.

    Adjacent windows overlap by overlap * size; the last row/column is
    clamped inside the mosaic so every pixel is covered.
    """
    w, h = mosaic_size
    if size > w or size > h:
        raise ValueError(f"window size {size} exceeds mosaic {w}x{h}")
    stride = max(1, int(round(size * (1.0 - overlap))))
    xs = _axis_positions(w, size, stride)
    ys = _axis_positions(h, size, stride)
    reqs = []
    rank = 0
    for y in ys:
        for x in xs:
            reqs.append(AttentionRequest(DetectorWindow(x, y, size),
                                         Mechanism.SLIDING_WINDOW, rank))
            rank += 1
    return reqs


def difference_plan(mask: np.ndarray, size: int,
                    on_count_threshold: int = 50) -> list[AttentionRequest]:
    """Tiling windows whose motion-mask on-pixel count strictly exceeds the
    threshold, ranked by descending count."""
    h, w = mask.shape
    size = min(size, w, h)
    counted = []
    for req in sliding_window_plan((w, h), size, 0.0):
        win = req.window
        count = int(np.count_nonzero(mask[win.y:win.y + size, win.x:win.x + size]))
        if count > on_count_threshold:
            counted.append((count, req.window))
    counted.sort(key=lambda t: -t[0])
    return [AttentionRequest(win, Mechanism.DIFFERENCE, rank)
            for rank, (_, win) in enumerate(counted)]


def expectation_plan(objects, frame_index: int, size: int,
                     mosaic_size: tuple[int, int]) -> list[AttentionRequest]:
    """One window per tracked object, centered on its extrapolated position.

    Velocity comes from the last two history entries (zero with a single
    observation). Stalest objects (oldest last_seen) come first; windows are
    clamped inside the mosaic.
    """
    w, h = mosaic_size
    size = min(size, w, h)
    ranked = sorted(objects, key=lambda o: (o.last_seen, o.id))
    reqs = []
    for rank, obj in enumerate(ranked):
        f_last, box_last = obj.history[-1]
        cx, cy = box_last.center
        if len(obj.history) >= 2:
            f_prev, box_prev = obj.history[-2]
            px, py = box_prev.center
            dt = f_last - f_prev
            vx, vy = (cx - px) / dt, (cy - py) / dt
        else:
            vx = vy = 0.0
        gap = frame_index - f_last
        ex, ey = cx + vx * gap, cy + vy * gap
        x = int(round(ex - size / 2.0))
        y = int(round(ey - size / 2.0))
        x = min(max(x, 0), w - size)
        y = min(max(y, 0), h - size)
        reqs.append(AttentionRequest(DetectorWindow(x, y, size),
                                     Mechanism.EXPECTATION, rank,
                                     target_object_id=obj.id))
    return reqs


def _merge_duplicates(reqs: list[AttentionRequest], merge_iou: float) -> list[AttentionRequest]:
    kept: list[AttentionRequest] = []
    for r in reqs:
        if any(iou(r.window.as_bbox(), k.window.as_bbox()) > merge_iou for k in kept):
            continue
        kept.append(r)
    return kept


class Scheduler:
    """Per-tick decision point: at most `budget` windows per tick.

    The first ticks drain the startup sliding-window sweep in row-major
    order; afterwards expectation requests come first (they sustain existing
    tracks), then difference requests, with near-duplicate windows merged.
    """

    def __init__(self, mosaic_size: tuple[int, int],
                 cfg: AttentionConfig = AttentionConfig()):
        self.mosaic_size = mosaic_size
        self.cfg = cfg
        size = min(cfg.window_size, *mosaic_size)
        self._startup: deque[AttentionRequest] = deque(
            sliding_window_plan(mosaic_size, size, cfg.startup_overlap))
        self.window_size = size

    @property
    def in_startup(self) -> bool:
        return bool(self._startup)

    def restart(self) -> None:
        """Re-run the startup sweep (after recovery)."""
        self._startup = deque(sliding_window_plan(
            self.mosaic_size, self.window_size, self.cfg.startup_overlap))

    def schedule(self, *, frame_index: int, objects=(),
                 diff_mask: np.ndarray | None = None) -> list[AttentionRequest]:
        b = self.cfg.budget
        if b < 1:
            raise ValueError("budget must be at least 1")
        if self._startup:
            return [self._startup.popleft() for _ in range(min(b, len(self._startup)))]
        reqs = expectation_plan(objects, frame_index, self.window_size, self.mosaic_size)
        if diff_mask is not None:
            reqs += difference_plan(diff_mask, self.window_size, self.cfg.diff_threshold)
        reqs = _merge_duplicates(reqs, self.cfg.merge_iou)
        return reqs[:b]
