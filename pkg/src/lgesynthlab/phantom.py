"""Deterministic short-axis LGE phantom generator.

Geometry: blood pool = disk, myocardium = annulus with angularly varying
thickness, RV = crescent attached on the septal side. Per-patient anatomy is
derived from the patient id and reused across that patient's images with
small jitter; everything is a pure function of (spec, patient_id, seed).
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import anatomy, scarscript
from .manifest import ManifestRecord, save_image16, save_mask, write_manifest

DEFAULT_INTENSITIES = {
    "background_mean": 0.15,
    "myo_mean": 0.30,
    "blood_mean": 0.75,
    "scar_mean": 0.70,
    "noise_sigma": 0.03,
}

GEOMETRY_MARGIN = 6.0  # pixels kept free between epicardium+RV and image border


@dataclass
class PhantomSpec:
    image_size: int = 64
    lv_center_jitter: float = 1.5
    blood_pool_radius_range: tuple = (8.0, 11.0)
    wall_thickness_range: tuple = (4.5, 6.5)
    rv_arc_degrees_range: tuple = (100.0, 140.0)
    scar_probability: float = 0.5
    intensity_model: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    slice_level: str = "mid"
    scar_size_range: tuple = (4.0, 9.0)  # ellipse semi-axis range, pixels

    def validate(self) -> None:
        im = self.intensity_model
        max_extent = (self.blood_pool_radius_range[1] + self.wall_thickness_range[1]
                      + self.lv_center_jitter + GEOMETRY_MARGIN)
        if max_extent > self.image_size / 2:
            raise ValueError("blood pool radius + wall thickness exceed image half-size")
        if not 0.0 <= self.scar_probability <= 1.0:
            raise ValueError("scar_probability must lie in [0, 1]")
        if im["scar_mean"] <= im["myo_mean"] + 3.0 * im["noise_sigma"]:
            raise ValueError("scar intensity not separable from remote myocardium")
        if self.slice_level not in anatomy.SLICE_LEVELS:
            raise ValueError(f"unknown slice level: {self.slice_level}")


@dataclass
class PhantomSample:
    image: np.ndarray
    myo_mask: np.ndarray
    scar_mask: np.ndarray
    lv_center: tuple
    rv_insertion_anterior: tuple
    rv_insertion_inferior: tuple
    slice_level: str
    patient_id: str
    is_positive: bool


def _id_hash(patient_id: str) -> int:
    return int.from_bytes(hashlib.sha256(patient_id.encode("utf-8")).digest()[:8], "big")


def _patient_anatomy(spec: PhantomSpec, patient_id: str) -> dict:
    rng = np.random.default_rng([_id_hash(patient_id)])
    return {
        "blood_radius": rng.uniform(*spec.blood_pool_radius_range),
        "wall_base": rng.uniform(*spec.wall_thickness_range),
        "wall_amp": rng.uniform(0.2, 0.8),
        "wall_phase": rng.uniform(0.0, 2.0 * math.pi),
        "rv_dir": rng.uniform(0.0, 2.0 * math.pi),
        "rv_arc": math.radians(rng.uniform(*spec.rv_arc_degrees_range)),
        "rv_height": rng.uniform(4.0, 6.0),
        "center_offset": rng.uniform(-1.0, 1.0, size=2),
    }


def _outer_boundary(myo_mask: np.ndarray, blood_mask: np.ndarray) -> np.ndarray:
    outside = ~(myo_mask | blood_mask)
    neigh = ndimage.binary_dilation(outside, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return myo_mask & neigh


def _snap_to_contour(point, contour_mask) -> tuple:
    ys, xs = np.nonzero(contour_mask)
    d2 = (xs - point[0]) ** 2 + (ys - point[1]) ** 2
    k = int(np.argmin(d2))
    return (int(xs[k]), int(ys[k]))


def generate_phantom(spec: PhantomSpec, patient_id: str, seed: int,
                     force_positive: bool | None = None) -> PhantomSample:
    """Generate one phantom image with ground-truth masks and landmarks.

    force_positive overrides the Bernoulli(scar_probability) draw; cohort
    generation uses it to make scar status a patient-level property.
    """
    spec.validate()
    if seed < 0:
        raise ValueError("seed must be non-negative")
    size = spec.image_size
    anat = _patient_anatomy(spec, patient_id)
    rng = np.random.default_rng([_id_hash(patient_id), int(seed)])

    jitter = rng.uniform(-spec.lv_center_jitter, spec.lv_center_jitter, size=2)
    cx = size / 2.0 + anat["center_offset"][0] + jitter[0]
    cy = size / 2.0 + anat["center_offset"][1] + jitter[1]
    rb = anat["blood_radius"] + rng.uniform(-0.3, 0.3)

    yy, xx = np.mgrid[0:size, 0:size]
    dist = np.hypot(xx - cx, yy - cy)
    theta = np.arctan2(yy - cy, xx - cx)
    thickness = anat["wall_base"] + anat["wall_amp"] * np.sin(theta + anat["wall_phase"])
    epi_r = rb + thickness

    blood_mask = dist < rb
    myo_mask = (dist >= rb) & (dist < epi_r)

    # RV crescent: a tapered band outside the epicardium on the septal side.
    delta = np.angle(np.exp(1j * (theta - anat["rv_dir"])))
    half_arc = anat["rv_arc"] / 2.0
    in_arc = np.abs(delta) <= half_arc
    rv_h = anat["rv_height"] * np.sqrt(np.clip(np.cos(delta * math.pi / (2.0 * half_arc)), 0.0, 1.0))
    rv_band = in_arc & (dist >= epi_r) & (dist < epi_r + np.where(in_arc, rv_h, 0.0))
    rv_rim = rv_band & (dist >= epi_r + np.where(in_arc, rv_h, 0.0) - 1.5)

    # Insertion points on the epicardial contour at the arc ends; the septal
    # arc runs counterclockwise from the anterior to the inferior insertion.
    contour = _outer_boundary(myo_mask, blood_mask)
    pts = []
    for ang in (anat["rv_dir"] - half_arc, anat["rv_dir"] + half_arc):
        er = rb + anat["wall_base"] + anat["wall_amp"] * math.sin(ang + anat["wall_phase"])
        pts.append(_snap_to_contour((cx + er * math.cos(ang), cy + er * math.sin(ang)), contour))
    rv_ant, rv_inf = pts

    # Scar
    if force_positive is None:
        is_positive = bool(rng.uniform() < spec.scar_probability)
    else:
        is_positive = bool(force_positive)
    scar_mask = np.zeros((size, size), dtype=bool)
    if is_positive:
        seg = anatomy.aha_segment_map(myo_mask, (cx, cy), rv_ant, rv_inf, spec.slice_level)
        lay = anatomy.radial_layer_map(myo_mask, (cx, cy))
        for _ in range(16):
            placement_seed = int(rng.integers(2**31))
            try:
                placement = scarscript.sample_scar_placement(
                    seg, lay, spec.scar_size_range, placement_seed, lv_center=(cx, cy))
                scar_mask = scarscript.ellipsoid_scar_mask(placement, myo_mask)
                break
            except ValueError:
                continue
        else:
            raise RuntimeError("failed to place a non-degenerate scar")

    im = spec.intensity_model
    image = np.full((size, size), im["background_mean"], dtype=np.float64)
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=6.0)
    background = ~(blood_mask | myo_mask | rv_band)
    image[background] += 0.5 * texture[background]
    image[blood_mask] = im["blood_mean"]
    image[myo_mask] = im["myo_mean"]
    image[rv_band] = im["blood_mean"]
    image[rv_rim] = im["myo_mean"]
    image[scar_mask] = im["scar_mean"]
    image += rng.normal(0.0, im["noise_sigma"], size=(size, size))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    return PhantomSample(
        image=image, myo_mask=myo_mask, scar_mask=scar_mask,
        lv_center=(cx, cy), rv_insertion_anterior=rv_ant, rv_insertion_inferior=rv_inf,
        slice_level=spec.slice_level, patient_id=patient_id, is_positive=is_positive)


def _split_counts(n_patients: int, fractions: tuple) -> list[int]:
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    raw = [f * n_patients for f in fractions]
    counts = [int(math.floor(r)) for r in raw]
    rest = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in rest[: n_patients - sum(counts)]:
        counts[i] += 1
    if any(c == 0 for c in counts):
        raise ValueError("split fractions produce an empty split")
    return counts


def generate_cohort(spec: PhantomSpec, n_patients: int, images_per_patient: int,
                    split_fractions: tuple, seed: int, out_dir: str) -> list[ManifestRecord]:
    """Generate a patient-level-split cohort; writes PNGs and a JSON-Lines
    manifest under out_dir and returns the records."""
    spec.validate()
    if n_patients < 3:
        raise ValueError("need at least 3 patients")
    counts = _split_counts(n_patients, split_fractions)
    rng = np.random.default_rng([int(seed), 0xC0F0])
    order = rng.permutation(n_patients)
    split_of = {}
    for rank, pidx in enumerate(order):
        split_of[pidx] = "train" if rank < counts[0] else (
            "val" if rank < counts[0] + counts[1] else "test")

    records = []
    for i in range(n_patients):
        patient_id = f"s{seed}_p{i:03d}"
        positive = bool(rng.uniform() < spec.scar_probability)
        for j in range(images_per_patient):
            sample = generate_phantom(spec, patient_id, seed=j, force_positive=positive)
            rec_id = f"{patient_id}_img{j}"
            image_path = os.path.join(out_dir, "images", f"{rec_id}.png")
            myo_path = os.path.join(out_dir, "masks", f"{rec_id}_myo.png")
            scar_path = os.path.join(out_dir, "masks", f"{rec_id}_scar.png")
            save_image16(sample.image, image_path)
            save_mask(sample.myo_mask, myo_path)
            save_mask(sample.scar_mask, scar_path)
            records.append(ManifestRecord(
                id=rec_id, patient_id=patient_id, split=split_of[i],
                image_path=image_path, myo_mask_path=myo_path, scar_mask_path=scar_path,
                lv_center=(float(sample.lv_center[0]), float(sample.lv_center[1])),
                rv_insertion_anterior=sample.rv_insertion_anterior,
                rv_insertion_inferior=sample.rv_insertion_inferior,
                slice_level=sample.slice_level, is_positive=sample.is_positive,
                provenance="real_phantom"))
    write_manifest(records, os.path.join(out_dir, "manifest.jsonl"))
    return records
