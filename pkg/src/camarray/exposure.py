"""Per-seam affine exposure/white-balance correction and seam quality metric.

Each seam between two adjacent cameras gets, per vertical block and per
colour channel, an affine map f(x) = a*x + b on each side. The maps bring
the first two moments of narrow bands on both sides of the seam to a shared
spectrum. Application blends from the identity at the image center to the
full map at the seam border.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Frame, mask_diff

__all__ = [
    "Side",
    "ExposureMode",
    "ExposureConfig",
    "ExposureMap",
    "SeamMaps",
    "BandStats",
    "band_stats",
    "fit_affine",
    "smooth_exposure",
    "update_exposure",
    "apply_exposure",
    "seam_cost",
    "identity_map",
    "write_maps_table",
    "read_maps_table",
]

CHANNELS = "rgb"


class Side(enum.Enum):
    """Which side of the seam a frame sits on."""

    LEFT = "left"    # seam at the frame's right edge
    RIGHT = "right"  # seam at the frame's left edge


class ExposureMode(enum.Enum):
    STANDARD = "standard"
    OBJECT_REMOVAL = "object_removal"
    SMOOTHING = "smoothing"


@dataclass(frozen=True)
class ExposureConfig:
    band_width: int = 32
    blocks: int = 16
    alpha: float = 0.05
    t_diff: int = 20
    min_valid_fraction: float = 0.25
    min_band_pixels: int = 64
    sigma_min: float = 1e-3
    downsample: int = 8


@dataclass(eq=False)
class ExposureMap:
    """Affine coefficients for one side of one seam.

    gain/offset are (K, 3) float arrays, one row per vertical block,
    channels ordered r, g, b. Treated as an immutable snapshot once
    published; `_cache` only memoizes apply buffers per frame shape.
    """

    seam_id: tuple[int, int]
    side: Side
    band_width: int
    gain: np.ndarray
    offset: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.gain = np.asarray(self.gain, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        if self.gain.shape != self.offset.shape or self.gain.ndim != 2 or self.gain.shape[1] != 3:
            raise ValueError("gain/offset must both be (K, 3)")
        if not np.all(np.isfinite(self.gain)) or not np.all(np.isfinite(self.offset)):
            raise ValueError("non-finite exposure coefficients")
        if np.any(self.gain <= 0):
            raise ValueError("gains must be positive")

    @property
    def block_count(self) -> int:
        return self.gain.shape[0]

    def same_geometry(self, other: "ExposureMap") -> bool:
        return (
            self.seam_id == other.seam_id
            and self.side == other.side
            and self.block_count == other.block_count
        )


@dataclass(frozen=True, eq=False)
class SeamMaps:
    """The pair of side maps that together correct one seam."""

    left: ExposureMap
    right: ExposureMap


def identity_map(seam_id: tuple[int, int], side: Side, blocks: int,
                 band_width: int) -> ExposureMap:
    return ExposureMap(
        seam_id=seam_id,
        side=side,
        band_width=band_width,
        gain=np.ones((blocks, 3)),
        offset=np.zeros((blocks, 3)),
    )


def block_bounds(height: int, blocks: int) -> list[tuple[int, int]]:
    """Row ranges of the K vertical blocks.

    Heights are floor(H/K); remainder rows join the last block.
    """
    if blocks < 1:
        raise ValueError("need at least one block")
    if blocks > height:
        raise ValueError(f"more blocks ({blocks}) than rows ({height})")
    bh = height // blocks
    bounds = [(k * bh, (k + 1) * bh) for k in range(blocks - 1)]
    bounds.append(((blocks - 1) * bh, height))
    return bounds


@dataclass(frozen=True, eq=False)
class BandStats:
    """First two moments of the seam band, per block and channel.

    mean/std are (K, 3); std is the population standard deviation.
    valid_count counts band pixels that survived mask exclusion.
    """

    mean: np.ndarray
    std: np.ndarray
    valid_count: np.ndarray
    band_area: np.ndarray


def band_stats(frame: Frame, side: Side, band_width: int, blocks: int,
               exclusion_mask: np.ndarray | None = None) -> BandStats:
    """Moments of the band of `band_width` columns nearest the seam.

    `exclusion_mask` is an optional (H, W) bool array over the full frame;
    masked pixels are dropped from the statistics. Empty blocks are allowed
    and reported with valid_count 0 (mean/std 0 there).
    """
    h, w = frame.height, frame.width
    if band_width > w // 2:
        raise ValueError(f"band width {band_width} exceeds half frame width {w // 2}")
    if side is Side.LEFT:
        band = frame.pixels[:, w - band_width:, :]
        m = exclusion_mask[:, w - band_width:] if exclusion_mask is not None else None
    else:
        band = frame.pixels[:, :band_width, :]
        m = exclusion_mask[:, :band_width] if exclusion_mask is not None else None

    bounds = block_bounds(h, blocks)
    mean = np.zeros((blocks, 3))
    std = np.zeros((blocks, 3))
    count = np.zeros(blocks, dtype=np.int64)
    area = np.zeros(blocks, dtype=np.int64)
    for k, (r0, r1) in enumerate(bounds):
        px = band[r0:r1].reshape(-1, 3).astype(np.float64)
        area[k] = px.shape[0]
        if m is not None:
            keep = ~m[r0:r1].reshape(-1)
            px = px[keep]
        count[k] = px.shape[0]
        if px.shape[0] > 0:
            mean[k] = px.mean(axis=0)
            std[k] = px.std(axis=0)
    return BandStats(mean=mean, std=std, valid_count=count, band_area=area)


def fit_affine(left: BandStats, right: BandStats, *,
               sigma_min: float = 1e-3,
               min_band_pixels: int = 64,
               seam_id: tuple[int, int] = (0, 1),
               band_width: int = 32) -> tuple[ExposureMap, ExposureMap, np.ndarray]:
    """Moment-matching affine fit toward the shared seam spectrum.

    Shared moments are the equal-weight averages mu* = (mu_L + mu_R)/2 and
    sigma* = (sigma_L + sigma_R)/2; each side then gets a = sigma*/sigma,
    b = mu* - a*mu. Where sigma < sigma_min the gain degenerates to 1 and
    only the mean is shifted.

    Returns (left_map, right_map, fit_ok) where fit_ok flags blocks with
    enough valid pixels on both sides; blocks with fit_ok False carry
    identity coefficients and must be resolved by the caller (fallback to
    smoothing or to the previous map).
    """
    k = left.mean.shape[0]
    if right.mean.shape[0] != k:
        raise ValueError("block counts differ between sides")
    fit_ok = (left.valid_count > min_band_pixels) & (right.valid_count > min_band_pixels)

    mu_star = (left.mean + right.mean) / 2.0
    sigma_star = (left.std + right.std) / 2.0

    def side_coeffs(stats: BandStats) -> tuple[np.ndarray, np.ndarray]:
        gain = np.ones((k, 3))
        offset = np.zeros((k, 3))
        ok = fit_ok[:, None] & (stats.std >= sigma_min)
        np.divide(sigma_star, stats.std, out=gain, where=ok)
        # Degenerate sigma: keep gain 1, still align the means.
        degenerate = fit_ok[:, None] & ~ok
        offset = np.where(fit_ok[:, None], mu_star - gain * stats.mean, 0.0)
        offset = np.where(degenerate, mu_star - stats.mean, offset)
        gain = np.maximum(gain, 1e-12)
        return gain, offset

    gl, ol = side_coeffs(left)
    gr, or_ = side_coeffs(right)
    lmap = ExposureMap(seam_id, Side.LEFT, band_width, gl, ol)
    rmap = ExposureMap(seam_id, Side.RIGHT, band_width, gr, or_)
    return lmap, rmap, fit_ok


def smooth_exposure(prev: ExposureMap, new: ExposureMap, alpha: float = 0.05) -> ExposureMap:
    """Convex blend (1 - alpha) * prev + alpha * new, coefficient-wise."""
    if not prev.same_geometry(new):
        raise ValueError("exposure map geometry mismatch")
    return ExposureMap(
        seam_id=new.seam_id,
        side=new.side,
        band_width=new.band_width,
        gain=(1.0 - alpha) * prev.gain + alpha * new.gain,
        offset=(1.0 - alpha) * prev.offset + alpha * new.offset,
    )


def update_exposure(frames: tuple[Frame, Frame],
                    prev_maps: SeamMaps | None,
                    mode: ExposureMode = ExposureMode.STANDARD,
                    cfg: ExposureConfig = ExposureConfig(),
                    prev_frames: tuple[Frame, Frame] | None = None) -> SeamMaps:
    """Compute this tick's seam maps from a synchronized frame pair.

    standard        fit from the raw bands.
    object_removal  fit from bands with moving pixels (diff against
                    `prev_frames`) excluded; blocks whose valid fraction
                    drops below min_valid_fraction fall back to the
                    smoothing rule.
    smoothing       blend the standard fit into the previous maps with
                    weight alpha.

    On the first call (no prev_maps) smoothing and fallbacks use the fresh
    fit directly.
    """
    left_f, right_f = frames
    seam_id = (left_f.camera_id, right_f.camera_id)
    if left_f.height != right_f.height:
        raise ValueError("seam frames differ in height")

    def raw_fit() -> tuple[ExposureMap, ExposureMap, np.ndarray]:
        ls = band_stats(left_f, Side.LEFT, cfg.band_width, cfg.blocks)
        rs = band_stats(right_f, Side.RIGHT, cfg.band_width, cfg.blocks)
        return fit_affine(ls, rs, sigma_min=cfg.sigma_min,
                          min_band_pixels=cfg.min_band_pixels,
                          seam_id=seam_id, band_width=cfg.band_width)

    def resolve(maps: tuple[ExposureMap, ExposureMap], ok: np.ndarray,
                fallback: SeamMaps | None) -> SeamMaps:
        # Blocks that could not be fitted keep the fallback (previous maps
        # if any, identity otherwise).
        lm, rm = maps
        if np.all(ok):
            return SeamMaps(lm, rm)
        if fallback is None:
            fallback = SeamMaps(
                identity_map(seam_id, Side.LEFT, cfg.blocks, cfg.band_width),
                identity_map(seam_id, Side.RIGHT, cfg.blocks, cfg.band_width),
            )
        sel = ok[:, None]
        return SeamMaps(
            replace(lm, gain=np.where(sel, lm.gain, fallback.left.gain),
                    offset=np.where(sel, lm.offset, fallback.left.offset), _cache={}),
            replace(rm, gain=np.where(sel, rm.gain, fallback.right.gain),
                    offset=np.where(sel, rm.offset, fallback.right.offset), _cache={}),
        )

    if mode is ExposureMode.STANDARD:
        lm, rm, ok = raw_fit()
        return resolve((lm, rm), ok, prev_maps)

    if mode is ExposureMode.SMOOTHING:
        lm, rm, ok = raw_fit()
        fresh = resolve((lm, rm), ok, prev_maps)
        if prev_maps is None:
            return fresh
        return SeamMaps(
            smooth_exposure(prev_maps.left, fresh.left, cfg.alpha),
            smooth_exposure(prev_maps.right, fresh.right, cfg.alpha),
        )

    if mode is ExposureMode.OBJECT_REMOVAL:
        if prev_frames is None:
            lm, rm, ok = raw_fit()
            return resolve((lm, rm), ok, prev_maps)
        mask_l = mask_diff(left_f.pixels, prev_frames[0].pixels, cfg.t_diff)
        mask_r = mask_diff(right_f.pixels, prev_frames[1].pixels, cfg.t_diff)
        ls = band_stats(left_f, Side.LEFT, cfg.band_width, cfg.blocks, mask_l)
        rs = band_stats(right_f, Side.RIGHT, cfg.band_width, cfg.blocks, mask_r)
        lm, rm, ok = fit_affine(ls, rs, sigma_min=cfg.sigma_min,
                                min_band_pixels=cfg.min_band_pixels,
                                seam_id=seam_id, band_width=cfg.band_width)
        frac = np.minimum(
            ls.valid_count / np.maximum(ls.band_area, 1),
            rs.valid_count / np.maximum(rs.band_area, 1),
        )
        removal_ok = ok & (frac >= cfg.min_valid_fraction)

        # Blocks dominated by motion: exponential smoothing of the raw fit.
        lm_raw, rm_raw, ok_raw = raw_fit()
        raw = resolve((lm_raw, rm_raw), ok_raw, prev_maps)
        if prev_maps is None:
            smoothed = raw
        else:
            smoothed = SeamMaps(
                smooth_exposure(prev_maps.left, raw.left, cfg.alpha),
                smooth_exposure(prev_maps.right, raw.right, cfg.alpha),
            )
        sel = removal_ok[:, None]
        return SeamMaps(
            replace(lm, gain=np.where(sel, lm.gain, smoothed.left.gain),
                    offset=np.where(sel, lm.offset, smoothed.left.offset), _cache={}),
            replace(rm, gain=np.where(sel, rm.gain, smoothed.right.gain),
                    offset=np.where(sel, rm.offset, smoothed.right.offset), _cache={}),
        )

    raise ValueError(f"unknown exposure mode {mode!r}")


def _lambda_profile(width: int, side: Side) -> np.ndarray:
    """Blend weight per column: 0 at the image center, 1 at the seam border."""
    c0 = (width - 1) / 2.0
    cols = np.arange(width, dtype=np.float64)
    if side is Side.LEFT:
        lam = (cols - c0) / ((width - 1) - c0)
    else:
        lam = (c0 - cols) / c0
    return np.clip(lam, 0.0, 1.0)


def _apply_arrays(emap: ExposureMap, height: int, width: int) -> tuple[np.ndarray, np.ndarray, slice]:
    """Precompute out = p * M + A over the near half; cached per frame shape.

    Based on out = p + lam*(a*p + b - p) = p*(1 + lam*(a-1)) + lam*b.
    """
    key = (height, width)
    hit = emap._cache.get(key)
    if hit is not None:
        return hit
    lam = _lambda_profile(width, emap.side)
    nz = np.nonzero(lam > 0)[0]
    col_slice = slice(int(nz[0]), int(nz[-1]) + 1) if nz.size else slice(0, 0)
    lam = lam[col_slice]

    bounds = block_bounds(height, emap.block_count)
    g_rows = np.empty((height, 3))
    b_rows = np.empty((height, 3))
    for k, (r0, r1) in enumerate(bounds):
        g_rows[r0:r1] = emap.gain[k]
        b_rows[r0:r1] = emap.offset[k]
    m = 1.0 + lam[None, :, None] * (g_rows[:, None, :] - 1.0)
    a = lam[None, :, None] * b_rows[:, None, :]
    entry = (m.astype(np.float32), a.astype(np.float32), col_slice)
    emap._cache[key] = entry
    return entry


def apply_exposure(frame: Frame, emap: ExposureMap) -> Frame:
    """Apply the map to the half of the frame nearest the seam.

    Per pixel: out = clamp(p + lam(col) * (f(p) - p), 0, 255) where lam
    ramps linearly from 0 at the center column to 1 at the seam border.
    The far half is returned untouched.
    """
    m, a, cols = _apply_arrays(emap, frame.height, frame.width)
    out = frame.pixels.copy()
    region = out[:, cols, :]
    buf = region.astype(np.float32)
    np.multiply(buf, m, out=buf)
    np.add(buf, a, out=buf)
    np.rint(buf, out=buf)
    np.clip(buf, 0.0, 255.0, out=buf)
    out[:, cols, :] = buf.astype(np.uint8)
    return Frame(frame.camera_id, frame.frame_index, frame.timestamp_ms, out)


def apply_exposure_inplace(pixels: np.ndarray, emap: ExposureMap) -> None:
    """apply_exposure on a raw pixel array, mutating it (hot path)."""
    h, w = pixels.shape[:2]
    m, a, cols = _apply_arrays(emap, h, w)
    region = pixels[:, cols, :]
    buf = region.astype(np.float32)
    np.multiply(buf, m, out=buf)
    np.add(buf, a, out=buf)
    np.rint(buf, out=buf)
    np.clip(buf, 0.0, 255.0, out=buf)
    pixels[:, cols, :] = buf.astype(np.uint8)


def _box_downsample(px: np.ndarray, factor: int) -> np.ndarray:
    h, w = px.shape[:2]
    h2, w2 = h // factor, w // factor
    if h2 < 1 or w2 < 2:
        raise ValueError(f"frame too small for downsample factor {factor}")
    trimmed = px[: h2 * factor, : w2 * factor].astype(np.float64)
    return trimmed.reshape(h2, factor, w2, factor, 3).mean(axis=(1, 3))


def seam_cost(left: Frame | np.ndarray, right: Frame | np.ndarray,
              downsample_factor: int = 8) -> float:
    """Gradient-trend discrepancy across the seam; 0 for a perfect trend.

    After box-filter downsampling, compares whether the column gradient on
    each side continues across the seam, per row:
        d+ = ||(R1 - R0) - (R0 - L0)||    d- = ||(L-1 - L0) - (L0 - R0)||
    with the Euclidean norm over RGB, and averages (d+ + d-)/2 over rows.
    """
    lp = left.pixels if isinstance(left, Frame) else left
    rp = right.pixels if isinstance(right, Frame) else right
    if lp.shape[0] != rp.shape[0]:
        raise ValueError("seam frames differ in height")
    ld = _box_downsample(lp, downsample_factor)
    rd = _box_downsample(rp, downsample_factor)
    lm1, l0 = ld[:, -2, :], ld[:, -1, :]
    r0, rp1 = rd[:, 0, :], rd[:, 1, :]
    d_plus = np.linalg.norm((rp1 - r0) - (r0 - l0), axis=1)
    d_minus = np.linalg.norm((lm1 - l0) - (l0 - r0), axis=1)
    return float(np.mean((d_plus + d_minus) / 2.0))


_TABLE_VERSION = "camarray-exposure-v1"


def write_maps_table(maps: list[SeamMaps]) -> str:
    """Serialize seam maps to the versioned plain-text table."""
    lines = [f"# {_TABLE_VERSION}", "# seam side block channel gain offset"]
    for sm in maps:
        for emap in (sm.left, sm.right):
            sid = f"{emap.seam_id[0]}-{emap.seam_id[1]}"
            for k in range(emap.block_count):
                for c, ch in enumerate(CHANNELS):
                    lines.append(
                        f"{sid} {emap.side.value} {k} {ch} "
                        f"{float(emap.gain[k, c])!r} {float(emap.offset[k, c])!r}"
                    )
    return "\n".join(lines) + "\n"


def read_maps_table(text: str, band_width: int = 32) -> list[SeamMaps]:
    lines = text.strip().splitlines()
    if not lines or lines[0] != f"# {_TABLE_VERSION}":
        raise ValueError("missing or unknown exposure table version")
    entries: dict[tuple[tuple[int, int], Side], dict[int, dict[int, tuple[float, float]]]] = {}
    for ln in lines[1:]:
        if not ln or ln.startswith("#"):
            continue
        sid_s, side_s, k_s, ch, a_s, b_s = ln.split()
        lo, hi = sid_s.split("-")
        key = ((int(lo), int(hi)), Side(side_s))
        entries.setdefault(key, {}).setdefault(int(k_s), {})[CHANNELS.index(ch)] = (
            float(a_s), float(b_s))
    by_seam: dict[tuple[int, int], dict[Side, ExposureMap]] = {}
    for (sid, side), blocks in entries.items():
        k = max(blocks) + 1
        gain = np.ones((k, 3))
        offset = np.zeros((k, 3))
        for bi, chans in blocks.items():
            for ci, (a, b) in chans.items():
                gain[bi, ci] = a
                offset[bi, ci] = b
        by_seam.setdefault(sid, {})[side] = ExposureMap(sid, side, band_width, gain, offset)
    out = []
    for sid in sorted(by_seam):
        sides = by_seam[sid]
        out.append(SeamMaps(sides[Side.LEFT], sides[Side.RIGHT]))
    return out
