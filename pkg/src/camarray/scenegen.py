"""Deterministic synthetic multi-camera scenarios with exact ground truth.

The background is one smooth function of viewing direction shared by all
cameras, so narrow bands on both sides of a seam image the same landscape
(the assumption the seam correction relies on). Objects follow waypoint
paths and are drawn as filled category-coloured rectangles; per-camera
affine exposure distortions are applied last, after ground truth capture.

Rendering requires the remote-tower camera geometry: all cameras share one
position, are level (pitch = roll = 0) and are fanned at exactly one hfov
apart, so the mosaic is a continuous panorama in azimuth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BBox, Category, Frame
from .world3d import CameraModel, HeightField, height_at

__all__ = [
    "ExposureDistortion",
    "SceneObject",
    "GroundTruth",
    "Scenario",
    "render_tick",
    "load_scenario",
    "save_scenario",
]


@dataclass(frozen=True)
class ExposureDistortion:
    """Global per-channel affine distortion of one camera, optional drift."""

    gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drift_amplitude: float = 0.0
    drift_period: float = 300.0

    def apply(self, pixels: np.ndarray, frame_index: int) -> np.ndarray:
        drift = 0.0
        if self.drift_amplitude:
            drift = self.drift_amplitude * math.sin(2 * math.pi * frame_index / self.drift_period)
        out = pixels.astype(np.float64)
        out *= np.asarray(self.gain)
        out += np.asarray(self.offset) + drift
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)

    def is_identity(self) -> bool:
        return self.gain == (1.0, 1.0, 1.0) and self.offset == (0.0, 0.0, 0.0) \
            and self.drift_amplitude == 0.0


@dataclass(frozen=True)
class SceneObject:
    """Waypoint-driven object; waypoints are (time_s, easting, northing[, height])."""

    object_id: int
    category: Category
    size: tuple[float, float]            # width, height in meters
    waypoints: tuple[tuple[float, ...], ...]

    def position_at(self, time_s: float, terrain: HeightField | None) -> tuple[float, float, float]:
        wp = self.waypoints
        if time_s <= wp[0][0]:
            t0 = wp[0]
            e, n = t0[1], t0[2]
            h = t0[3] if len(t0) > 3 else None
        elif time_s >= wp[-1][0]:
            t1 = wp[-1]
            e, n = t1[1], t1[2]
            h = t1[3] if len(t1) > 3 else None
        else:
            for a, b in zip(wp, wp[1:]):
                if a[0] <= time_s <= b[0]:
                    u = 0.0 if b[0] == a[0] else (time_s - a[0]) / (b[0] - a[0])
                    e = a[1] + u * (b[1] - a[1])
                    n = a[2] + u * (b[2] - a[2])
                    ha = a[3] if len(a) > 3 else None
                    hb = b[3] if len(b) > 3 else None
                    h = None if ha is None or hb is None else ha + u * (hb - ha)
                    break
        if h is None:
            if terrain is not None:
                th = height_at(terrain, e, n)
                h = 0.0 if math.isnan(th) else th
            else:
                h = 0.0
        return e, n, h


@dataclass(frozen=True)
class GroundTruth:
    """Per-object truth for one tick, computed pre-distortion."""

    object_id: int
    category: Category
    bbox: BBox | None            # mosaic coordinates; None when fully out of view
    world: tuple[float, float, float]
    visible: bool


@dataclass(eq=False)
class Scenario:
    seed: int
    tick_rate: float
    duration: int
    cameras: list[CameraModel]
    terrain: HeightField | None = None
    distortions: dict[int, ExposureDistortion] = field(default_factory=dict)
    objects: list[SceneObject] = field(default_factory=list)
    _bg: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _gt: dict[int, list[GroundTruth]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self.cameras:
            raise ValueError("scenario needs at least one camera")
        c0 = self.cameras[0]
        for k, cam in enumerate(self.cameras):
            if cam.pitch != 0.0 or cam.roll != 0.0:
                raise ValueError("scenario cameras must be level (pitch = roll = 0)")
            if cam.position != c0.position:
                raise ValueError("scenario cameras must share one position")
            if (cam.width, cam.height, cam.hfov) != (c0.width, c0.height, c0.hfov):
                raise ValueError("scenario cameras must share frame size and hfov")
            if abs(cam.yaw - (c0.yaw + k * c0.hfov)) > 1e-9:
                raise ValueError("scenario cameras must be fanned one hfov apart")

    @property
    def mosaic_size(self) -> tuple[int, int]:
        c0 = self.cameras[0]
        return c0.width * len(self.cameras), c0.height

    # Continuous panorama mapping: azimuth/elevation -> mosaic pixel.
    def _mosaic_col(self, azimuth: float) -> float:
        c0 = self.cameras[0]
        left_edge = c0.yaw - c0.hfov / 2.0
        rel = (azimuth - left_edge) % (2.0 * math.pi)
        if rel > math.pi + len(self.cameras) * c0.hfov / 2.0:
            rel -= 2.0 * math.pi
        return rel / c0.hfov * c0.width - 0.5

    def _mosaic_row(self, elevation: float) -> float:
        c0 = self.cameras[0]
        return (0.5 - elevation / c0.vfov) * c0.height - 0.5

    def _object_rects(self, frame_index: int) -> list[GroundTruth]:
        c0 = self.cameras[0]
        mw, mh = self.mosaic_size
        time_s = frame_index / self.tick_rate
        out = []
        for obj in self.objects:
            e, n, h = obj.position_at(time_s, self.terrain)
            v = np.array([e, n, h]) - np.array(c0.position)
            dist = float(np.linalg.norm(v))
            if dist < 1e-6:
                out.append(GroundTruth(obj.object_id, obj.category, None, (e, n, h), False))
                continue
            az = math.atan2(v[0], v[1])
            el = math.atan2(v[2], math.hypot(v[0], v[1]))
            half_w = math.atan(obj.size[0] / (2.0 * dist))
            ang_h = 2.0 * math.atan(obj.size[1] / (2.0 * dist))
            x0 = self._mosaic_col(az - half_w)
            x1 = self._mosaic_col(az + half_w)
            y1 = self._mosaic_row(el)
            y0 = self._mosaic_row(el + ang_h)
            ix0, ix1 = int(round(x0)), int(round(x1))
            iy0, iy1 = int(round(y0)), int(round(y1))
            if ix1 <= ix0:
                ix1 = ix0 + 1
            if iy1 <= iy0:
                iy1 = iy0 + 1
            cx0, cx1 = max(ix0, 0), min(ix1, mw)
            cy0, cy1 = max(iy0, 0), min(iy1, mh)
            if cx1 <= cx0 or cy1 <= cy0:
                out.append(GroundTruth(obj.object_id, obj.category, None, (e, n, h), False))
                continue
            bbox = BBox(cx0, cy0, cx1 - cx0, cy1 - cy0)
            out.append(GroundTruth(obj.object_id, obj.category, bbox, (e, n, h), True))
        return out

    def ground_truth(self, frame_index: int) -> list[GroundTruth]:
        """Geometry-only truth; no rendering involved."""
        cached = self._gt.get(frame_index)
        if cached is None:
            cached = self._object_rects(frame_index)
            self._gt = {frame_index: cached}   # keep only the latest tick
        return cached

    def background(self, camera_index: int) -> np.ndarray:
        """Static pre-distortion background of one camera (cached)."""
        bg = self._bg.get(camera_index)
        if bg is None:
            bg = _render_background(self, self.cameras[camera_index])
            self._bg[camera_index] = bg
        return bg


def _palette_params(seed: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB6)))
    def comps():
        return [
            (rng.uniform(0.8, 4.0), rng.uniform(0.5, 3.0),
             rng.uniform(0, 2 * math.pi), rng.uniform(4.0, 10.0))
            for _ in range(3)
        ]
    return {
        "sky_base": np.array([120.0, 138.0, 165.0]) + rng.uniform(-8, 8, 3),
        "ground_base": np.array([98.0, 106.0, 88.0]) + rng.uniform(-8, 8, 3),
        "sky": [comps() for _ in range(3)],
        "ground": [comps() for _ in range(3)],
    }


def _render_background(scenario: Scenario, cam: CameraModel) -> np.ndarray:
    params = _palette_params(scenario.seed)
    w, h = cam.width, cam.height
    a = cam.yaw + cam.hfov * ((np.arange(w) + 0.5) / w - 0.5)
    e = cam.vfov * (0.5 - (np.arange(h) + 0.5) / h)
    aa = a[None, :]
    ee = e[:, None]
    sky = ee > 0.0   # horizon of the level camera
    img = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        chan = np.where(sky, params["sky_base"][c], params["ground_base"][c])
        # Mild vertical shading keeps the two bands visually distinct.
        chan = chan + np.where(sky, 60.0 * ee, 25.0 * ee)
        for zone, comps in (("sky", params["sky"][c]), ("ground", params["ground"][c])):
            acc = np.zeros((h, w))
            for fa, fe, ph, amp in comps:
                acc += amp * np.sin(fa * aa + fe * ee + ph)
            chan = np.where(sky if zone == "sky" else ~sky, chan + acc, chan)
        img[:, :, c] = chan
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_tick(scenario: Scenario, frame_index: int) -> tuple[list[Frame], list[GroundTruth]]:
    """Synchronized frames of every camera plus ground truth for one tick."""
    if not 0 <= frame_index < scenario.duration:
        raise ValueError(f"frame {frame_index} outside scenario duration {scenario.duration}")
    truths = scenario.ground_truth(frame_index)
    c0 = scenario.cameras[0]
    w = c0.width
    timestamp_ms = int(round(frame_index / scenario.tick_rate * 1000.0))

    frames = []
    for k, cam in enumerate(scenario.cameras):
        px = scenario.background(k).copy()
        # Draw farthest first so closer objects overpaint.
        order = sorted((gt for gt in truths if gt.visible),
                       key=lambda g: -_dist(scenario, g.world))
        for gt in order:
            b = gt.bbox
            x0 = int(b.x) - k * w
            x1 = int(b.x + b.w) - k * w
            y0, y1 = int(b.y), int(b.y + b.h)
            x0, x1 = max(x0, 0), min(x1, w)
            if x1 > x0:
                px[y0:y1, x0:x1] = gt.category.color
        dist = scenario.distortions.get(cam.camera_id)
        if dist is not None and not dist.is_identity():
            px = dist.apply(px, frame_index)
        frames.append(Frame(cam.camera_id, frame_index, timestamp_ms, px))
    return frames, truths


def _dist(scenario: Scenario, world: tuple[float, float, float]) -> float:
    return float(np.linalg.norm(np.array(world) - np.array(scenario.cameras[0].position)))


# -- Scenario files -----------------------------------------------------------

def load_scenario(path: str | Path) -> Scenario:
    from .world3d import read_ascii_grid

    raw = json.loads(Path(path).read_text())
    if raw.get("version") != 1:
        raise ValueError("unsupported scenario version")
    fw, fh = raw["frame"]["width"], raw["frame"]["height"]
    cameras = [
        CameraModel(
            camera_id=c["id"],
            position=tuple(c["position"]),
            yaw=c["yaw"],
            pitch=c.get("pitch", 0.0),
            roll=c.get("roll", 0.0),
            hfov=c["hfov"],
            width=fw,
            height=fh,
        )
        for c in raw["cameras"]
    ]
    terrain = None
    t = raw.get("terrain")
    if t:
        if "ascii_grid" in t:
            grid_path = Path(path).parent / t["ascii_grid"]
            terrain = read_ascii_grid(grid_path)
        elif "flat_height" in t:
            terrain = _flat_field(t["flat_height"], cameras[0].position)
    distortions = {
        d["camera"]: ExposureDistortion(
            gain=tuple(d.get("gain", (1, 1, 1))),
            offset=tuple(d.get("offset", (0, 0, 0))),
            drift_amplitude=d.get("drift_amplitude", 0.0),
            drift_period=d.get("drift_period", 300.0),
        )
        for d in raw.get("distortions", [])
    }
    objects = [
        SceneObject(
            object_id=o["id"],
            category=Category(o["category"]),
            size=tuple(o["size"]),
            waypoints=tuple(tuple(wp) for wp in o["waypoints"]),
        )
        for o in raw.get("objects", [])
    ]
    return Scenario(
        seed=raw.get("seed", 0),
        tick_rate=raw.get("tick_rate", 30.0),
        duration=raw.get("duration", 300),
        cameras=cameras,
        terrain=terrain,
        distortions=distortions,
        objects=objects,
    )


def _flat_field(height: float, center: tuple[float, float, float],
                extent_m: float = 4000.0, cell: float = 2.0) -> HeightField:
    n = int(extent_m / cell)
    return HeightField(
        origin=(center[0] - extent_m / 2, center[1] - extent_m / 2),
        cell_size=cell,
        heights=np.full((n, n), height),
    )


def save_scenario(path: str | Path, scenario: Scenario,
                  terrain_file: str | None = None) -> None:
    c0 = scenario.cameras[0]
    doc = {
        "version": 1,
        "seed": scenario.seed,
        "tick_rate": scenario.tick_rate,
        "duration": scenario.duration,
        "frame": {"width": c0.width, "height": c0.height},
        "cameras": [
            {"id": c.camera_id, "position": list(c.position), "yaw": c.yaw,
             "pitch": c.pitch, "roll": c.roll, "hfov": c.hfov}
            for c in scenario.cameras
        ],
        "distortions": [
            {"camera": cid, "gain": list(d.gain), "offset": list(d.offset),
             "drift_amplitude": d.drift_amplitude, "drift_period": d.drift_period}
            for cid, d in scenario.distortions.items()
        ],
        "objects": [
            {"id": o.object_id, "category": o.category.value, "size": list(o.size),
             "waypoints": [list(wp) for wp in o.waypoints]}
            for o in scenario.objects
        ],
    }
    if terrain_file is not None:
        doc["terrain"] = {"ascii_grid": terrain_file}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
