"""Preprocessing and generator conditioning bundles.

A conditioning bundle pairs the scar-boundary edge map with the mean-filled
image and a caption; at training time the mask is the real scar, at inference
time a parametric ellipse placed on a negative image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .phantom import PhantomSample
from .scarscript import Caption, ScarPlacement, ellipsoid_scar_mask


@dataclass
class ConditioningBundle:
    edge_map: np.ndarray
    masked_image: np.ndarray
    caption: Caption
    target_scar_mask: np.ndarray
    source_id: str


def preprocess(image: np.ndarray, pixel_spacing: float, target_size: int) -> np.ndarray:
    """Resample to a 1 mm-equivalent grid, center crop/pad to target_size,
    clip at the image's own 98th percentile (nearest rank) and min-max
    normalize to [0, 1]. A constant image maps to all zeros."""
    if pixel_spacing <= 0:
        raise ValueError("pixel spacing must be positive")
    img = np.asarray(image, dtype=np.float64)
    if abs(pixel_spacing - 1.0) > 1e-12:
        img = ndimage.zoom(img, pixel_spacing, order=1)

    # center crop / pad
    out = np.zeros((target_size, target_size), dtype=np.float64)
    h, w = img.shape
    sy = max((h - target_size) // 2, 0)
    sx = max((w - target_size) // 2, 0)
    ty = max((target_size - h) // 2, 0)
    tx = max((target_size - w) // 2, 0)
    ch = min(h, target_size)
    cw = min(w, target_size)
    out[ty : ty + ch, tx : tx + cw] = img[sy : sy + ch, sx : sx + cw]

    flat = np.sort(out.ravel())
    cutoff = flat[int(math.ceil(0.98 * flat.size)) - 1]  # nearest-rank percentile
    out = np.minimum(out, cutoff)
    lo, hi = out.min(), out.max()
    if hi - lo <= 0:
        return np.zeros_like(out, dtype=np.float32)
    return ((out - lo) / (hi - lo)).astype(np.float32)


def mask_fill_mean(image: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Replace the region with its own mean intensity; identity on empty region."""
    image = np.asarray(image)
    region = np.asarray(region, dtype=bool)
    out = image.copy()
    if region.any():
        out[region] = image[region].mean()
    return out


def edge_map(mask: np.ndarray) -> np.ndarray:
    """Inner 4-neighborhood boundary of a binary mask (out-of-image counts
    as outside)."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def build_training_bundle(sample: PhantomSample, caption: Caption,
                          source_id: str | None = None) -> ConditioningBundle:
    if not sample.is_positive:
        raise ValueError("training bundles require positive images")
    scar = sample.scar_mask
    return ConditioningBundle(
        edge_map=edge_map(scar),
        masked_image=mask_fill_mean(sample.image, scar),
        caption=caption,
        target_scar_mask=scar.copy(),
        source_id=source_id if source_id is not None else sample.patient_id,
    )


def build_inference_bundle(sample: PhantomSample, placement: ScarPlacement,
                           caption: Caption, source_id: str | None = None) -> ConditioningBundle:
    if sample.is_positive:
        raise ValueError("inference bundles require negative images")
    target = ellipsoid_scar_mask(placement, sample.myo_mask)
    return ConditioningBundle(
        edge_map=edge_map(target),
        masked_image=mask_fill_mean(sample.image, target),
        caption=caption,
        target_scar_mask=target,
        source_id=source_id if source_id is not None else sample.patient_id,
    )
