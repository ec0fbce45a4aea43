"""Calibrated cameras over a georeferenced heightfield.

World frame is a planar metric CRS: x = easting, y = northing, z = height.
Camera yaw is a compass bearing (radians clockwise from north), pitch tilts
up (+) or down (-), roll turns about the view axis. Pixel columns map
linearly to azimuth across the horizontal field of view and rows linearly
to elevation, with pixel-center sampling; a frame's column/azimuth relation
is therefore exactly linear, which the calibration tooling relies on.
"""

from __future__ import annotations

import math
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox

__all__ = [
    "CameraModel",
    "HeightField",
    "DepthMap",
    "SKY",
    "pixel_to_ray",
    "pixel_rays",
    "project",
    "raycast",
    "height_at",
    "build_depth_map",
    "position_event",
    "ground_anchor",
    "read_ascii_grid",
    "write_ascii_grid",
    "write_camera_file",
    "read_camera_file",
]

SKY = math.inf


@dataclass(frozen=True)
class CameraModel:
    """Pinhole-style camera: pose, field of view, aspect, resolution."""

    camera_id: int
    position: tuple[float, float, float]
    yaw: float
    pitch: float
    roll: float
    hfov: float
    width: int
    height: int
    aspect: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.hfov < math.pi:
            raise ValueError(f"hfov {self.hfov} outside (0, pi)")
        if self.aspect == 0.0:
            object.__setattr__(self, "aspect", self.width / self.height)
        if self.aspect <= 0:
            raise ValueError("aspect must be positive")

    @property
    def vfov(self) -> float:
        return self.hfov / self.aspect

    def basis(self) -> np.ndarray:
        """World-from-camera rotation; camera axes are (right, forward, up)."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        r_yaw = np.array([[cy, sy, 0.0], [-sy, cy, 0.0], [0.0, 0.0, 1.0]])
        r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
        r_roll = np.array([[cr, 0.0, sr], [0.0, 1.0, 0.0], [-sr, 0.0, cr]])
        return r_yaw @ r_pitch @ r_roll


def _local_dir(azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    """Camera-local unit direction for angular offsets from the view axis."""
    ce = np.cos(elevation)
    return np.stack([np.sin(azimuth) * ce, np.cos(azimuth) * ce, np.sin(elevation)], axis=-1)


def pixel_to_ray(cam: CameraModel, px: float, py: float) -> tuple[np.ndarray, np.ndarray]:
    """Ray (origin, unit direction) through the center of pixel (px, py).

    Columns are spaced uniformly in azimuth over hfov, rows uniformly in
    elevation over vfov; yaw, pitch then roll orient the bundle.
    """
    a = cam.hfov * ((px + 0.5) / cam.width - 0.5)
    e = cam.vfov * (0.5 - (py + 0.5) / cam.height)
    d = cam.basis() @ _local_dir(np.float64(a), np.float64(e))
    return np.array(cam.position, dtype=np.float64), d


def pixel_rays(cam: CameraModel) -> np.ndarray:
    """(H, W, 3) unit directions for every pixel center."""
    xs = cam.hfov * ((np.arange(cam.width) + 0.5) / cam.width - 0.5)
    ys = cam.vfov * (0.5 - (np.arange(cam.height) + 0.5) / cam.height)
    a, e = np.meshgrid(xs, ys)
    local = _local_dir(a, e)
    return local @ cam.basis().T


def project(cam: CameraModel, point) -> tuple[float, float, float] | None:
    """Inverse of pixel_to_ray: world point -> (px, py, distance).

    Returns None for a point at the camera origin. Points outside the field
    of view still project (to out-of-range pixels); callers clip.
    """
    v = np.asarray(point, dtype=np.float64) - np.asarray(cam.position)
    dist = float(np.linalg.norm(v))
    if dist == 0.0:
        return None
    d = cam.basis().T @ (v / dist)
    a = math.atan2(d[0], d[1])
    e = math.atan2(d[2], math.hypot(d[0], d[1]))
    px = (a / cam.hfov + 0.5) * cam.width - 0.5
    py = (0.5 - e / cam.vfov) * cam.height - 0.5
    return px, py, dist


@dataclass(eq=False)
class HeightField:
    """Georeferenced terrain raster; heights sampled at cell centers.

    `heights` is (rows, cols) with row 0 the northernmost. The continuous
    surface is the bilinear interpolant between cell-center samples; nodata
    cells are holes.
    """

    origin: tuple[float, float]   # (xllcorner, yllcorner)
    cell_size: float
    heights: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self) -> None:
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("heightfield needs at least a 2x2 grid")
        grid = np.flipud(h).copy()          # south-up for interpolation
        grid[grid == self.nodata] = np.nan
        self.heights = h
        self._grid = grid
        cs = self.cell_size
        self._x0 = self.origin[0] + cs / 2.0
        self._y0 = self.origin[1] + cs / 2.0
        self._x1 = self._x0 + (h.shape[1] - 1) * cs
        self._y1 = self._y0 + (h.shape[0] - 1) * cs
        self._max_h = float(np.nanmax(grid)) if np.any(np.isfinite(grid)) else -math.inf
        flat = np.isfinite(grid).all() and np.ptp(grid) == 0.0
        self._flat_height = float(grid.flat[0]) if flat else None

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    def domain(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the interpolated surface."""
        return self._x0, self._y0, self._x1, self._y1


def height_at(hf: HeightField, x: float, y: float) -> float:
    """Bilinear surface height; nan outside the domain or over nodata."""
    x0, y0, x1, y1 = hf.domain()
    if not (x0 <= x <= x1 and y0 <= y <= y1):
        return math.nan
    cs = hf.cell_size
    i = min(int((x - x0) / cs), hf.cols - 2)
    j = min(int((y - y0) / cs), hf.rows - 2)
    u = (x - (x0 + i * cs)) / cs
    v = (y - (y0 + j * cs)) / cs
    g = hf._grid
    return float(
        g[j, i] * (1 - u) * (1 - v)
        + g[j, i + 1] * u * (1 - v)
        + g[j + 1, i] * (1 - u) * v
        + g[j + 1, i + 1] * u * v
    )


_EPS = 1e-12


def _cell_hit(hf: HeightField, i: int, j: int, origin: np.ndarray, d: np.ndarray,
              ta: float, tb: float) -> float | None:
    """First ray-surface contact inside cell (i, j) over t in [ta, tb].

    The bilinear patch makes height quadratic along the ray, so the contact
    parameter is a closed-form root (exact up to float rounding).
    """
    g = hf._grid
    h00, h10 = g[j, i], g[j, i + 1]
    h01, h11 = g[j + 1, i], g[j + 1, i + 1]
    if math.isnan(h00) or math.isnan(h10) or math.isnan(h01) or math.isnan(h11):
        return None
    cs = hf.cell_size
    x0, y0 = hf._x0 + i * cs, hf._y0 + j * cs
    # Local parameter s = t - ta for conditioning.
    ua = (origin[0] + ta * d[0] - x0) / cs
    va = (origin[1] + ta * d[1] - y0) / cs
    beta = d[0] / cs
    delta = d[1] / cs
    hx, hy = h10 - h00, h01 - h00
    hxy = h11 - h10 - h01 + h00
    surf_a = h00 + hx * ua + hy * va + hxy * ua * va
    c0 = (origin[2] + ta * d[2]) - surf_a
    b0 = d[2] - (hx * beta + hy * delta + hxy * (ua * delta + beta * va))
    a0 = -hxy * beta * delta
    sb = tb - ta
    slop = 1e-9 * max(1.0, sb)
    if c0 < 0:
        return ta  # entered the interval already below the surface
    roots: list[float] = []
    if abs(a0) < _EPS:
        if abs(b0) > _EPS:
            roots.append(-c0 / b0)
    else:
        disc = b0 * b0 - 4.0 * a0 * c0
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        q = -0.5 * (b0 + math.copysign(sq, b0)) if b0 != 0 else sq / 2.0
        if q != 0:
            roots.extend([q / a0, c0 / q])
        else:
            roots.append(0.0)
    valid = sorted(s for s in roots if -slop <= s <= sb + slop)
    if not valid:
        return None
    return ta + min(max(valid[0], 0.0), sb)


def raycast(hf: HeightField, origin, direction) -> tuple[np.ndarray, float] | None:
    """March the ray across the grid; first surface contact or None for sky.

    Raises if the origin sits below the terrain surface.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("zero direction")
    d = d / norm

    x0, y0, x1, y1 = hf.domain()
    inside = x0 <= o[0] <= x1 and y0 <= o[1] <= y1
    if inside:
        h = height_at(hf, o[0], o[1])
        if not math.isnan(h) and o[2] < h:
            raise ValueError("ray origin below terrain")

    # Clip to the horizontal domain (slab method).
    t_lo, t_hi = 0.0, math.inf
    for axis, (lo, hi) in ((0, (x0, x1)), (1, (y0, y1))):
        if abs(d[axis]) < _EPS:
            if not lo <= o[axis] <= hi:
                return None
        else:
            ta = (lo - o[axis]) / d[axis]
            tb = (hi - o[axis]) / d[axis]
            if ta > tb:
                ta, tb = tb, ta
            t_lo, t_hi = max(t_lo, ta), min(t_hi, tb)
    if t_hi < t_lo:
        return None

    cs = hf.cell_size
    ci_max, cj_max = hf.cols - 2, hf.rows - 2

    def cell_of(t: float) -> tuple[int, int]:
        x = o[0] + t * d[0]
        y = o[1] + t * d[1]
        return (min(max(int((x - x0) / cs), 0), ci_max),
                min(max(int((y - y0) / cs), 0), cj_max))

    if abs(d[0]) < _EPS and abs(d[1]) < _EPS:
        # Vertical ray: single cell column.
        i, j = cell_of(0.0)
        t = _cell_hit(hf, i, j, o, d, 0.0, 1e12)
        if t is None:
            return None
        return o + t * d, t

    t = t_lo
    i, j = cell_of(t + 1e-12)
    step_i = 1 if d[0] > 0 else -1
    step_j = 1 if d[1] > 0 else -1
    if abs(d[0]) < _EPS:
        t_max_x, t_delta_x = math.inf, math.inf
    else:
        next_x = x0 + (i + (1 if d[0] > 0 else 0)) * cs
        t_max_x = (next_x - o[0]) / d[0]
        t_delta_x = cs / abs(d[0])
    if abs(d[1]) < _EPS:
        t_max_y, t_delta_y = math.inf, math.inf
    else:
        next_y = y0 + (j + (1 if d[1] > 0 else 0)) * cs
        t_max_y = (next_y - o[1]) / d[1]
        t_delta_y = cs / abs(d[1])

    max_steps = (hf.cols + hf.rows) * 2 + 8
    for _ in range(max_steps):
        t_exit = min(t_max_x, t_max_y, t_hi)
        hit_t = _cell_hit(hf, i, j, o, d, t, t_exit)
        if hit_t is not None:
            return o + hit_t * d, hit_t
        if t_exit >= t_hi:
            return None
        if d[2] >= 0 and o[2] + t_exit * d[2] > hf._max_h:
            return None
        if t_max_x < t_max_y:
            i += step_i
            t = t_max_x
            t_max_x += t_delta_x
            if not 0 <= i <= ci_max:
                return None
        else:
            j += step_j
            t = t_max_y
            t_max_y += t_delta_y
            if not 0 <= j <= cj_max:
                return None
    return None


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel ray lengths for one camera; +inf marks sky."""

    camera_id: int
    depth: np.ndarray

    def __post_init__(self) -> None:
        if self.depth.ndim != 2:
            raise ValueError("depth map must be 2-D")


def build_depth_map(cam: CameraModel, hf: HeightField, workers: int = 1) -> DepthMap:
    """Raycast every pixel of the camera against the terrain.

    Uniform (flat) terrain takes a vectorized plane-intersection path that
    is verified equivalent to the per-pixel march.
    """
    dirs = pixel_rays(cam)
    o = np.array(cam.position, dtype=np.float64)
    if hf._flat_height is not None:
        return DepthMap(cam.camera_id, _flat_depths(hf, o, dirs))
    depth = np.full((cam.height, cam.width), np.inf, dtype=np.float32)

    def do_row(y: int) -> None:
        for x in range(cam.width):
            hit = raycast(hf, o, dirs[y, x])
            if hit is not None:
                depth[y, x] = hit[1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(do_row, range(cam.height)))
    else:
        for y in range(cam.height):
            do_row(y)
    return DepthMap(cam.camera_id, depth)


def _flat_depths(hf: HeightField, o: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    c = hf._flat_height
    x0, y0, x1, y1 = hf.domain()
    if o[2] < c:
        raise ValueError("camera below terrain")
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (c - o[2]) / dz
    hit_x = o[0] + t * dirs[..., 0]
    hit_y = o[1] + t * dirs[..., 1]
    ok = (dz < 0) & (hit_x >= x0) & (hit_x <= x1) & (hit_y >= y0) & (hit_y <= y1)
    out = np.where(ok, t, np.inf).astype(np.float32)
    return out


def ground_anchor(bbox: BBox) -> tuple[float, float]:
    """Pixel anchoring an object's ground contact: bottom-center of its box.

    Kept behind one function so the convention can be revised in one place.
    """
    return bbox.x + (bbox.w - 1) / 2.0, bbox.y + bbox.h - 1


def position_event(cam: CameraModel, dm: DepthMap, px: float, py: float):
    """World position of the surface event at pixel (px, py), or None (sky)."""
    ix = min(max(int(round(px)), 0), cam.width - 1)
    iy = min(max(int(round(py)), 0), cam.height - 1)
    depth = float(dm.depth[iy, ix])
    if not math.isfinite(depth):
        return None
    o, d = pixel_to_ray(cam, ix, iy)
    return o + depth * d


# -- Terrain and calibration file formats ------------------------------------

def read_ascii_grid(path: str | Path) -> HeightField:
    """ESRI ASCII grid: 5-6 header lines then row-major heights, north first."""
    text = Path(path).read_text()
    tokens = text.split()
    header: dict[str, float] = {}
    pos = 0
    while pos + 1 < len(tokens) and re.fullmatch(r"[A-Za-z_]+", tokens[pos]):
        header[tokens[pos].lower()] = float(tokens[pos + 1])
        pos += 2
    for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if key not in header:
            raise ValueError(f"ASCII grid header missing {key}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    nodata = header.get("nodata_value", -9999.0)
    values = np.array([float(t) for t in tokens[pos:]], dtype=np.float64)
    if values.size != nrows * ncols:
        raise ValueError(f"expected {nrows * ncols} heights, got {values.size}")
    return HeightField(
        origin=(header["xllcorner"], header["yllcorner"]),
        cell_size=header["cellsize"],
        heights=values.reshape(nrows, ncols),
        nodata=nodata,
    )


def write_ascii_grid(path: str | Path, hf: HeightField) -> None:
    lines = [
        f"ncols {hf.cols}",
        f"nrows {hf.rows}",
        f"xllcorner {hf.origin[0]!r}",
        f"yllcorner {hf.origin[1]!r}",
        f"cellsize {hf.cell_size!r}",
        f"NODATA_value {hf.nodata!r}",
    ]
    for row in hf.heights:
        lines.append(" ".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


_DEPTH_MAGIC = b"CADM"


def write_depth_map(path: str | Path, dm: DepthMap) -> None:
    h, w = dm.depth.shape
    header = _DEPTH_MAGIC + struct.pack("<IIIi", 1, w, h, dm.camera_id)
    Path(path).write_bytes(header + dm.depth.astype("<f4").tobytes())


def read_depth_map(path: str | Path) -> DepthMap:
    raw = Path(path).read_bytes()
    if raw[:4] != _DEPTH_MAGIC:
        raise ValueError("not a depth map file")
    version, w, h, camera_id = struct.unpack("<IIIi", raw[4:20])
    if version != 1:
        raise ValueError(f"unsupported depth map version {version}")
    depth = np.frombuffer(raw[20:], dtype="<f4").reshape(h, w).copy()
    return DepthMap(camera_id, depth)


_CAMERA_KEYS = ("position_e", "position_n", "position_h", "yaw", "pitch",
                "roll", "hfov", "aspect", "res_w", "res_h")


def write_camera_file(path: str | Path, cam: CameraModel) -> None:
    """Plain-text key=value calibration file; floats round-trip bit-exact."""
    lines = [
        f"camera_id={cam.camera_id}",
        f"position_e={cam.position[0]!r}",
        f"position_n={cam.position[1]!r}",
        f"position_h={cam.position[2]!r}",
        f"yaw={cam.yaw!r}",
        f"pitch={cam.pitch!r}",
        f"roll={cam.roll!r}",
        f"hfov={cam.hfov!r}",
        f"aspect={cam.aspect!r}",
        f"res_w={cam.width}",
        f"res_h={cam.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_camera_file(path: str | Path) -> CameraModel:
    fields: dict[str, str] = {}
    for ln in Path(path).read_text().splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        key, _, value = ln.partition("=")
        fields[key.strip()] = value.strip()
    missing = [k for k in ("camera_id",) + _CAMERA_KEYS if k not in fields]
    if missing:
        raise ValueError(f"camera file missing keys: {missing}")
    return CameraModel(
        camera_id=int(fields["camera_id"]),
        position=(float(fields["position_e"]), float(fields["position_n"]),
                  float(fields["position_h"])),
        yaw=float(fields["yaw"]),
        pitch=float(fields["pitch"]),
        roll=float(fields["roll"]),
        hfov=float(fields["hfov"]),
        aspect=float(fields["aspect"]),
        width=int(fields["res_w"]),
        height=int(fields["res_h"]),
    )
