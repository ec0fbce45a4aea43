"""Detector abstraction: classified, confidence-scored boxes in mosaic windows.

The heavy neural detector is deliberately behind an interface; shipped
implementations are a ground-truth oracle (for benchmarks and tests), a
motion-blob detector, and an adapter speaking a small wire protocol to an
external detector process.
"""

from __future__ import annotations

import enum
import socket
import threading
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import imgio
from .core import BBox, Category, Mosaic, iou, mask_diff

__all__ = [
    "Detection",
    "DetectorWindow",
    "DetectionSource",
    "TOL_DETECT",
    "TOL_NMS",
    "nms",
    "Detector",
    "OracleDetector",
    "BlobDetector",
    "ExternalDetector",
]

TOL_DETECT = 0.65
TOL_NMS = 0.45


class DetectionSource(enum.Enum):
    ORACLE = "oracle"
    BLOB = "blob"
    EXTERNAL = "external"


@dataclass(frozen=True)
class Detection:
    """A classified box in global mosaic coordinates with confidence p."""

    category: Category
    bbox: BBox
    probability: float
    frame_index: int
    source: DetectionSource

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class DetectorWindow:
    """Square detector input region, mosaic coordinates."""

    x: int
    y: int
    size: int

    def as_bbox(self) -> BBox:
        return BBox(self.x, self.y, self.size, self.size)

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.x + self.size and self.y <= py < self.y + self.size


def nms(dets: list[Detection], tol_nms: float = TOL_NMS) -> list[Detection]:
    """Greedy per-category non-maximum suppression.

    Repeatedly keeps the highest-probability detection and suppresses
    same-category detections overlapping it with IoU > tol_nms. Ties in
    probability are broken by input order. Result is sorted by descending
    probability.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].probability, i))
    suppressed = [False] * len(dets)
    kept: list[Detection] = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(dets[i])
        for j in order:
            if j == i or suppressed[j]:
                continue
            if dets[j].category is dets[i].category and iou(dets[j].bbox, dets[i].bbox) > tol_nms:
                suppressed[j] = True
    return kept


class Detector:
    """Interface: produce detections for one window of the mosaic."""

    def detect(self, window: DetectorWindow, mosaic: Mosaic) -> list[Detection]:
        raise NotImplementedError


def _finalize(dets: list[Detection], mosaic: Mosaic, tol_detect: float,
              tol_nms: float) -> list[Detection]:
    """Shared post-processing: clip to mosaic, confidence gate, NMS."""
    out = []
    for d in dets:
        clipped = d.bbox.clipped(mosaic.width, mosaic.height)
        if clipped.area <= 0 or d.probability <= tol_detect:
            continue
        out.append(replace(d, bbox=clipped))
    return nms(out, tol_nms)


class OracleDetector(Detector):
    """Ground-truth backed detector with a configurable noise model.

    Noise: Gaussian jitter of box centers, per-object dropout, and spurious
    boxes at `false_positive_rate` per window. Noise draws are seeded per
    (frame, window) so results do not depend on call order.
    """

    def __init__(self, scenario, *, sigma_jitter: float = 2.0,
                 dropout: float = 0.05, false_positive_rate: float = 0.01,
                 seed: int = 0, tol_detect: float = TOL_DETECT,
                 tol_nms: float = TOL_NMS,
                 min_visible_fraction: float = 0.1):
        self.scenario = scenario
        self.sigma_jitter = sigma_jitter
        self.dropout = dropout
        self.false_positive_rate = false_positive_rate
        self.seed = seed
        self.tol_detect = tol_detect
        self.tol_nms = tol_nms
        self.min_visible_fraction = min_visible_fraction

    def _noiseless(self) -> bool:
        return self.sigma_jitter == 0 and self.dropout == 0 and self.false_positive_rate == 0

    def detect(self, window: DetectorWindow, mosaic: Mosaic) -> list[Detection]:
        truth = self.scenario.ground_truth(mosaic.frame_index)
        rng = np.random.default_rng(
            np.random.SeedSequence((self.seed, mosaic.frame_index, window.x, window.y)))
        wbox = window.as_bbox()
        dets: list[Detection] = []
        for gt in truth:
            if not gt.visible or gt.bbox is None:
                continue
            inter = _intersection_area(gt.bbox, wbox)
            if inter <= 0 or inter / max(gt.bbox.area, 1e-9) < self.min_visible_fraction:
                continue
            if self.dropout > 0 and rng.random() < self.dropout:
                continue
            box = gt.bbox
            if self.sigma_jitter > 0:
                dx, dy = rng.normal(0.0, self.sigma_jitter, size=2)
                box = box.translated(dx, dy)
            # The detector only sees the window: clip the box to it.
            box = _clip_to_window(box, window)
            if box.area <= 0:
                continue
            p = 1.0 if self._noiseless() else float(1.0 - 0.3 * rng.random())
            dets.append(Detection(gt.category, box, p, mosaic.frame_index,
                                  DetectionSource.ORACLE))
        if self.false_positive_rate > 0 and rng.random() < self.false_positive_rate:
            side = float(rng.uniform(8, 60))
            fx = float(rng.uniform(window.x, window.x + window.size - side))
            fy = float(rng.uniform(window.y, window.y + window.size - side))
            cat = rng.choice(list(Category))
            p = float(rng.uniform(0.66, 0.9))
            dets.append(Detection(cat, BBox(fx, fy, side, side), p,
                                  mosaic.frame_index, DetectionSource.ORACLE))
        return _finalize(dets, mosaic, self.tol_detect, self.tol_nms)


def _intersection_area(b1: BBox, b2: BBox) -> float:
    ix = min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x)
    iy = min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y)
    return max(ix, 0.0) * max(iy, 0.0)


def _clip_to_window(b: BBox, w: DetectorWindow) -> BBox:
    x0 = max(b.x, w.x)
    y0 = max(b.y, w.y)
    x1 = min(b.x + b.w, w.x + w.size)
    y1 = min(b.y + b.h, w.y + w.size)
    return BBox(x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


class BlobDetector(Detector):
    """Motion-blob detector: connected components of the frame-diff mask.

    Keeps the previous mosaic internally; the diff mask is computed once
    per tick and shared by all window queries of that tick.
    """

    def __init__(self, *, t_diff: int = 20, min_area: int = 4,
                 category: Category = Category.VEHICLE,
                 p_saturation_area: float = 400.0,
                 tol_detect: float = TOL_DETECT, tol_nms: float = TOL_NMS):
        self.t_diff = t_diff
        self.min_area = min_area
        self.category = category
        self.p_saturation_area = p_saturation_area
        self.tol_detect = tol_detect
        self.tol_nms = tol_nms
        self._lock = threading.Lock()
        self._prev: Mosaic | None = None
        self._mask: np.ndarray | None = None
        self._mask_index: int | None = None

    def _mask_for(self, mosaic: Mosaic) -> np.ndarray | None:
        with self._lock:
            if self._mask_index == mosaic.frame_index:
                return self._mask
            prev = self._prev
            if prev is not None and prev.frame_index < mosaic.frame_index:
                self._mask = mask_diff(mosaic.pixels, prev.pixels, self.t_diff)
            else:
                self._mask = None
            self._prev = mosaic
            self._mask_index = mosaic.frame_index
            return self._mask

    def detect(self, window: DetectorWindow, mosaic: Mosaic) -> list[Detection]:
        mask = self._mask_for(mosaic)
        if mask is None:
            return []
        y0 = max(window.y, 0)
        x0 = max(window.x, 0)
        y1 = min(window.y + window.size, mosaic.height)
        x1 = min(window.x + window.size, mosaic.width)
        sub = mask[y0:y1, x0:x1]
        if not sub.any():
            return []
        labels, n = ndimage.label(sub, structure=np.ones((3, 3), dtype=int))
        dets = []
        for sl in ndimage.find_objects(labels):
            area = int(np.count_nonzero(labels[sl]))
            if area < self.min_area:
                continue
            box = BBox(x0 + sl[1].start, y0 + sl[0].start,
                       sl[1].stop - sl[1].start, sl[0].stop - sl[0].start)
            p = min(1.0, 0.66 + 0.34 * min(1.0, area / self.p_saturation_area))
            dets.append(Detection(self.category, box, p, mosaic.frame_index,
                                  DetectionSource.BLOB))
        return _finalize(dets, mosaic, self.tol_detect, self.tol_nms)


class ExternalDetector(Detector):
    """Adapter to an external detector over a local socket.

    Wire protocol, one request per detect call:
      -> ``DETECT v1 <x> <y> <size> <w> <h>\\n`` + PPM (P6) bytes of the
         window crop (w, h are the crop dimensions)
      <- ``OK <n>\\n`` + n lines ``<category> <x> <y> <w> <h> <p>`` in
         window-local coordinates, or ``ERR <message>\\n``

    A missed 100 ms deadline yields an empty result and sets `degraded`;
    the pipeline is never blocked.
    """

    def __init__(self, address: tuple[str, int] | str, *,
                 deadline_s: float = 0.1,
                 tol_detect: float = TOL_DETECT, tol_nms: float = TOL_NMS):
        self.address = address
        self.deadline_s = deadline_s
        self.tol_detect = tol_detect
        self.tol_nms = tol_nms
        self.degraded = False
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if isinstance(self.address, str):
            s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        else:
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.settimeout(self.deadline_s)
        s.connect(self.address)
        return s

    def close(self) -> None:
        with self._lock:
            self._close_locked()

    def _close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def detect(self, window: DetectorWindow, mosaic: Mosaic) -> list[Detection]:
        y0, x0 = max(window.y, 0), max(window.x, 0)
        y1 = min(window.y + window.size, mosaic.height)
        x1 = min(window.x + window.size, mosaic.width)
        crop = np.ascontiguousarray(mosaic.pixels[y0:y1, x0:x1])
        header = f"DETECT v1 {window.x} {window.y} {window.size} {crop.shape[1]} {crop.shape[0]}\n"
        payload = header.encode() + imgio.encode_ppm(crop)
        with self._lock:
            try:
                if self._sock is None:
                    self._sock = self._connect()
                self._sock.settimeout(self.deadline_s)
                self._sock.sendall(payload)
                reply = self._read_reply(self._sock)
            except (OSError, ValueError):
                self._close_locked()
                self.degraded = True
                return []
        self.degraded = False
        dets = []
        for cat_s, bx, by, bw, bh, p in reply:
            try:
                cat = Category(cat_s)
            except ValueError:
                continue
            dets.append(Detection(cat, BBox(x0 + bx, y0 + by, bw, bh),
                                  min(max(p, 0.0), 1.0), mosaic.frame_index,
                                  DetectionSource.EXTERNAL))
        return _finalize(dets, mosaic, self.tol_detect, self.tol_nms)

    @staticmethod
    def _read_line(sock: socket.socket) -> str:
        chunks = bytearray()
        while True:
            c = sock.recv(1)
            if not c:
                raise OSError("connection closed")
            if c == b"\n":
                return chunks.decode()
            chunks += c

    def _read_reply(self, sock: socket.socket) -> list[tuple[str, float, float, float, float, float]]:
        status = self._read_line(sock)
        if status.startswith("ERR"):
            raise ValueError(status)
        if not status.startswith("OK "):
            raise ValueError(f"malformed reply {status!r}")
        n = int(status.split()[1])
        rows = []
        for _ in range(n):
            parts = self._read_line(sock).split()
            rows.append((parts[0], float(parts[1]), float(parts[2]),
                         float(parts[3]), float(parts[4]), float(parts[5])))
        return rows
