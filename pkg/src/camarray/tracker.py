"""Consolidates per-frame detections into persistent tracked objects.

Matching is a per-category linear sum assignment over the cost
C(d, o) = 1 - IoU(B_d, B_o) * a^(f_d - f_o): the IoU against the object's
most recent box, discounted per frame of staleness. Dual thresholds gate
history appends (discounted IoU > tol_iou) and new-object creation
(best discounted IoU against every existing object < tol_new).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BBox, Category, iou
from .detect import Detection, nms

__all__ = [
    "TrackStatus",
    "TrackedObject",
    "TrackerConfig",
    "TrackEvent",
    "EventKind",
    "cost",
    "solve_assignment",
    "Tracker",
]

DISCOUNT = 0.99
TOL_IOU = 0.05
TOL_NEW = 0.001
CROSS_NMS = 0.3


class TrackStatus(enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    RETIRED = "retired"


@dataclass
class TrackedObject:
    """An identity with a box history; category is fixed for life."""

    id: int
    category: Category
    history: list[tuple[int, BBox]]
    status: TrackStatus = TrackStatus.ACTIVE

    @property
    def last_seen(self) -> int:
        return self.history[-1][0]

    @property
    def last_box(self) -> BBox:
        return self.history[-1][1]

    def append(self, frame_index: int, box: BBox) -> None:
        if frame_index <= self.last_seen:
            raise ValueError(
                f"history must be frame-monotone: {frame_index} after {self.last_seen}")
        self.history.append((frame_index, box))
        self.status = TrackStatus.ACTIVE


@dataclass(frozen=True)
class TrackerConfig:
    discount: float = DISCOUNT
    tol_iou: float = TOL_IOU
    tol_new: float = TOL_NEW
    cross_nms: float = CROSS_NMS
    coast_frames: int = 30
    retire_frames: int = 300


class EventKind(enum.Enum):
    CREATED = "created"
    UPDATED = "updated"
    RETIRED = "retired"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class TrackEvent:
    tick: int
    kind: EventKind
    object_id: int | None
    category: Category
    bbox: BBox | None
    discounted_iou: float | None = None

    def to_record(self) -> dict:
        return {
            "tick": self.tick,
            "event": self.kind.value,
            "id": self.object_id,
            "category": self.category.value,
            "bbox": [self.bbox.x, self.bbox.y, self.bbox.w, self.bbox.h] if self.bbox else None,
            "discounted_iou": self.discounted_iou,
        }


def cost(d: Detection, o: TrackedObject, a: float = DISCOUNT) -> float:
    """1 - IoU(B_d, B_o) * a^(f_d - f_o) against the object's newest box."""
    gap = d.frame_index - o.last_seen
    if gap < 0:
        raise ValueError(
            f"detection at frame {d.frame_index} older than object seen at {o.last_seen}")
    return 1.0 - iou(d.bbox, o.last_box) * a ** gap


def solve_assignment(c: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment of min(m, n) pairs.

    Rectangular matrices are squared up by padding with cost 1 (the cost
    formula's maximum), which leaves the optimum unchanged; pairs touching
    padding are dropped. Returned pairs are sorted by row index.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    m, n = c.shape
    if m == 0 or n == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite entries in cost matrix")
    s = max(m, n)
    padded = np.full((s, s), 1.0)
    padded[:m, :n] = c
    rows, cols = linear_sum_assignment(padded)
    pairs = [(int(r), int(k)) for r, k in zip(rows, cols) if r < m and k < n]
    pairs.sort()
    return pairs


class Tracker:
    """Single-writer tracker state advanced one tick at a time."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.objects: dict[int, TrackedObject] = {}
        self._next_id = 1

    def live_objects(self) -> list[TrackedObject]:
        return [o for o in self.objects.values() if o.status is not TrackStatus.RETIRED]

    def snapshot(self) -> list[TrackedObject]:
        """Read-only copy of all non-retired objects for publication."""
        return [
            TrackedObject(o.id, o.category, list(o.history), o.status)
            for o in self.objects.values()
            if o.status is not TrackStatus.RETIRED
        ]

    def step(self, detections: list[Detection], frame_index: int) -> list[TrackEvent]:
        """Consume one tick's pooled detections; returns emitted events."""
        cfg = self.cfg
        events: list[TrackEvent] = []
        pooled = nms(detections, cfg.cross_nms)

        # Match against the object set as it stood before this tick.
        existing = self.live_objects()
        by_cat: dict[Category, list[TrackedObject]] = {}
        for o in existing:
            by_cat.setdefault(o.category, []).append(o)

        leftovers: list[Detection] = []
        for cat in Category:
            dets_c = [d for d in pooled if d.category is cat]
            objs_c = by_cat.get(cat, [])
            if not dets_c:
                continue
            if not objs_c:
                leftovers.extend(dets_c)
                continue
            c = np.array([[cost(d, o, cfg.discount) for o in objs_c] for d in dets_c])
            assigned_rows = set()
            for r, k in solve_assignment(c):
                disc_iou = 1.0 - c[r, k]
                if disc_iou > cfg.tol_iou:
                    obj = objs_c[k]
                    obj.append(frame_index, dets_c[r].bbox)
                    events.append(TrackEvent(frame_index, EventKind.UPDATED, obj.id,
                                             cat, dets_c[r].bbox, disc_iou))
                    assigned_rows.add(r)
            for r, d in enumerate(dets_c):
                if r not in assigned_rows:
                    leftovers.append(d)

        for d in leftovers:
            objs_c = by_cat.get(d.category, [])
            best = max((1.0 - cost(d, o, cfg.discount) for o in objs_c), default=0.0)
            if best < cfg.tol_new:
                obj = TrackedObject(self._next_id, d.category,
                                    [(frame_index, d.bbox)])
                self._next_id += 1
                self.objects[obj.id] = obj
                events.append(TrackEvent(frame_index, EventKind.CREATED, obj.id,
                                         d.category, d.bbox, best))
            else:
                # Outmatched but not novel: dropped, logged for tuning.
                events.append(TrackEvent(frame_index, EventKind.DISCARDED, None,
                                         d.category, d.bbox, best))

        for o in self.objects.values():
            if o.status is TrackStatus.RETIRED:
                continue
            gap = frame_index - o.last_seen
            if gap > cfg.retire_frames:
                o.status = TrackStatus.RETIRED
                events.append(TrackEvent(frame_index, EventKind.RETIRED, o.id,
                                         o.category, o.last_box))
            elif gap > cfg.coast_frames:
                o.status = TrackStatus.COASTING
        return events
