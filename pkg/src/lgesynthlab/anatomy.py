"""AHA-17 parcellation, radial layers, transmurality and n-SD scar GT.

Conventions: points are (x, y) in pixel coordinates (x = column, y = row).
Angles are measured from the positive x axis at lv_center, increasing
counterclockwise in image coordinates; all assignments are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

RAY_STEP = 0.25  # subpixel step for ray casting, in pixels

BASAL_IDS = tuple(range(1, 7))
MID_IDS = tuple(range(7, 13))
APICAL_IDS = tuple(range(13, 17))
APEX_ID = 17

SLICE_LEVELS = ("basal", "mid", "apical", "apex")


@dataclass
class SegmentMap:
    labels: np.ndarray  # uint8, 0 = non-myocardial
    slice_level: str


@dataclass
class LayerMap:
    labels: np.ndarray  # uint8: 0 none, 1 endo, 2 mid, 3 epi
    degenerate_rays: int = 0


@dataclass
class TransmuralityProfile:
    bin_coverage: np.ndarray
    max_coverage: float
    bin_width: float


@dataclass
class NsdParams:
    remote_region: np.ndarray
    n: float = 1.5


def _angle(point, center) -> float:
    return math.atan2(point[1] - center[1], point[0] - center[0])


def _pixel_angles(shape, center):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return np.arctan2(yy - center[1], xx - center[0])


def valid_ids(slice_level: str) -> tuple:
    if slice_level == "basal":
        return BASAL_IDS
    if slice_level == "mid":
        return MID_IDS
    if slice_level == "apical":
        return APICAL_IDS
    if slice_level == "apex":
        return (APEX_ID,)
    raise ValueError(f"unknown slice level: {slice_level}")


def aha_segment_map(myo_mask, lv_center, rv_ant, rv_inf, slice_level) -> SegmentMap:
    """Assign one AHA segment id per myocardial pixel, anchored at the RV
    insertion points.

    The septal arc runs counterclockwise from rv_ant to rv_inf; the free
    wall fills the complement, enumerated from rv_ant moving away from the
    septum (i.e. clockwise).
    """
    myo_mask = np.asarray(myo_mask, dtype=bool)
    if not myo_mask.any():
        raise ValueError("empty myocardium mask")
    if slice_level not in SLICE_LEVELS:
        raise ValueError(f"unknown slice level: {slice_level}")

    labels = np.zeros(myo_mask.shape, dtype=np.uint8)
    if slice_level == "apex":
        labels[myo_mask] = APEX_ID
        return SegmentMap(labels=labels, slice_level=slice_level)

    theta_a = _angle(rv_ant, lv_center)
    theta_i = _angle(rv_inf, lv_center)
    septal_span = (theta_i - theta_a) % (2 * math.pi)
    one_deg = math.radians(1.0)
    if septal_span < one_deg or septal_span > 2 * math.pi - one_deg:
        raise ValueError("degenerate septal arc")
    free_span = 2 * math.pi - septal_span

    # Sector table: (phi_start, phi_end, id) with phi = offset CCW from rv_ant.
    if slice_level in ("basal", "mid"):
        base = 0 if slice_level == "basal" else 6
        s = septal_span
        f4 = free_span / 4.0
        sectors = [
            (0.0, s / 2.0, base + 2),              # anteroseptal
            (s / 2.0, s, base + 3),                # inferoseptal
            (s, s + f4, base + 4),                 # inferior
            (s + f4, s + 2 * f4, base + 5),        # inferolateral
            (s + 2 * f4, s + 3 * f4, base + 6),    # anterolateral
            (s + 3 * f4, 2 * math.pi, base + 1),   # anterior
        ]
    else:  # apical: whole septal arc is segment 14
        s = septal_span
        f3 = free_span / 3.0
        sectors = [
            (0.0, s, 14),                          # septal
            (s, s + f3, 15),                       # inferior
            (s + f3, s + 2 * f3, 16),              # lateral
            (s + 2 * f3, 2 * math.pi, 13),         # anterior
        ]

    phi = (_pixel_angles(myo_mask.shape, lv_center) - theta_a) % (2 * math.pi)
    # float rounding can land the modulo exactly on 2*pi; wrap it to 0
    phi = np.where(phi >= 2 * math.pi, 0.0, phi)
    for lo, hi, seg_id in sectors:
        sel = myo_mask & (phi >= lo) & (phi < hi)
        labels[sel] = seg_id
    # Ties at an exact sector boundary go to the lower id of the two sectors.
    bounds = sorted({lo for lo, _, _ in sectors})
    for b in bounds:
        on_edge = myo_mask & (phi == b)
        if on_edge.any():
            adjacent = [sid for lo, hi, sid in sectors if lo == b or (hi % (2 * math.pi)) == b]
            labels[on_edge] = min(adjacent)
    return SegmentMap(labels=labels, slice_level=slice_level)


def _cast_rays(mask, center, thetas, r_max):
    """Bilinear-sample a mask along rays; returns radii and float samples."""
    rs = np.arange(RAY_STEP, r_max, RAY_STEP)
    cos = np.cos(thetas)[:, None]
    sin = np.sin(thetas)[:, None]
    xs = center[0] + rs[None, :] * cos
    ys = center[1] + rs[None, :] * sin
    vals = ndimage.map_coordinates(
        mask.astype(np.float32), [ys.ravel(), xs.ravel()], order=1, mode="constant", cval=0.0
    ).reshape(len(thetas), len(rs))
    return rs, vals


def _wall_bounds(vals, rs):
    """First/last 0.5-crossing radius per ray (subpixel, linearly interpolated
    between adjacent samples); NaN where the ray never enters the wall."""
    hits = vals >= 0.5
    any_hit = hits.any(axis=1)
    i_first = np.argmax(hits, axis=1)
    i_last = hits.shape[1] - 1 - np.argmax(hits[:, ::-1], axis=1)
    first = rs[i_first].astype(np.float64)
    last = rs[i_last].astype(np.float64)
    rows = np.arange(vals.shape[0])
    # refine the entry crossing between samples i_first-1 and i_first
    refinable = any_hit & (i_first > 0)
    r = rows[refinable]
    v0 = vals[r, i_first[refinable] - 1]
    v1 = vals[r, i_first[refinable]]
    frac = np.where(v1 > v0, (0.5 - v0) / np.maximum(v1 - v0, 1e-12), 1.0)
    first[refinable] = rs[i_first[refinable] - 1] + RAY_STEP * np.clip(frac, 0.0, 1.0)
    # refine the exit crossing between samples i_last and i_last+1
    refinable = any_hit & (i_last < vals.shape[1] - 1)
    r = rows[refinable]
    v0 = vals[r, i_last[refinable]]
    v1 = vals[r, i_last[refinable] + 1]
    frac = np.where(v0 > v1, (v0 - 0.5) / np.maximum(v0 - v1, 1e-12), 0.0)
    last[refinable] = rs[i_last[refinable]] + RAY_STEP * np.clip(frac, 0.0, 1.0)
    first[~any_hit] = np.nan
    last[~any_hit] = np.nan
    return first, last


def radial_layer_map(myo_mask, lv_center) -> LayerMap:
    """Three radial layers from normalized wall depth r = (d-d_endo)/(d_epi-d_endo).

    Each myocardial pixel casts its own ray from lv_center; endo/epi bounds
    come from the first/last myocardial hit with 0.25-pixel bilinear steps.
    Rays with wall thickness < 1 pixel are assigned the mid layer and
    counted as degenerate.
    """
    myo_mask = np.asarray(myo_mask, dtype=bool)
    ys, xs = np.nonzero(myo_mask)
    labels = np.zeros(myo_mask.shape, dtype=np.uint8)
    if len(ys) == 0:
        return LayerMap(labels=labels)
    dx = xs - lv_center[0]
    dy = ys - lv_center[1]
    dist = np.hypot(dx, dy)
    thetas = np.arctan2(dy, dx)
    r_max = float(np.hypot(*myo_mask.shape))
    rs, hits = _cast_rays(myo_mask, lv_center, thetas, r_max)
    d_endo, d_epi = _wall_bounds(hits, rs)

    thickness = d_epi - d_endo
    degenerate = ~np.isfinite(thickness) | (thickness < 1.0)
    r = np.zeros(len(ys))
    ok = ~degenerate
    r[ok] = (dist[ok] - d_endo[ok]) / thickness[ok]
    r = np.clip(r, 0.0, 1.0 - 1e-9)
    layer = np.where(r < 1.0 / 3.0, 1, np.where(r < 2.0 / 3.0, 2, 3)).astype(np.uint8)
    layer[degenerate] = 2
    labels[ys, xs] = layer
    return LayerMap(labels=labels, degenerate_rays=int(degenerate.sum()))


def transmurality(scar_mask, myo_mask, lv_center, bin_width: float = 5.0) -> TransmuralityProfile:
    """Per-angular-bin scar coverage: radial scar extent over wall extent,
    averaged over rays within the bin."""
    scar_mask = np.asarray(scar_mask, dtype=bool)
    myo_mask = np.asarray(myo_mask, dtype=bool)
    if (scar_mask & ~myo_mask).any():
        raise ValueError("scar mask must be a subset of the myocardium")
    n_bins = int(round(360.0 / bin_width))
    rays_per_bin = 4
    if not scar_mask.any():
        return TransmuralityProfile(np.zeros(n_bins), 0.0, bin_width)

    offsets = (np.arange(rays_per_bin) + 0.5) / rays_per_bin
    thetas = np.deg2rad(
        (np.arange(n_bins)[:, None] + offsets[None, :]) * bin_width
    ).ravel()
    r_max = float(np.hypot(*myo_mask.shape))
    rs, myo_hits = _cast_rays(myo_mask, lv_center, thetas, r_max)
    _, scar_hits = _cast_rays(scar_mask, lv_center, thetas, r_max)

    wall_extent = myo_hits.sum(axis=1) * RAY_STEP
    scar_extent = scar_hits.sum(axis=1) * RAY_STEP
    cov = np.zeros(len(thetas))
    valid = wall_extent > 0
    cov[valid] = np.clip(scar_extent[valid] / wall_extent[valid], 0.0, 1.0)
    cov = cov.reshape(n_bins, rays_per_bin)
    valid = valid.reshape(n_bins, rays_per_bin)
    bin_cov = np.zeros(n_bins)
    has_rays = valid.any(axis=1)
    bin_cov[has_rays] = np.array(
        [cov[i, valid[i]].mean() for i in np.nonzero(has_rays)[0]]
    )
    return TransmuralityProfile(bin_cov, float(bin_cov.max()), bin_width)


def nsd_threshold(image, myo_mask, params: NsdParams) -> np.ndarray:
    """Classical n-SD scar GT: myocardial pixels brighter than remote mean
    plus n population standard deviations."""
    image = np.asarray(image, dtype=np.float64)
    myo_mask = np.asarray(myo_mask, dtype=bool)
    remote = np.asarray(params.remote_region, dtype=bool)
    if (remote & ~myo_mask).any():
        raise ValueError("remote region must be a subset of the myocardium")
    if remote.sum() < 16:
        raise ValueError("insufficient remote sample")
    vals = image[remote]
    cutoff = vals.mean() + params.n * vals.std()  # population std
    return myo_mask & (image > cutoff)
