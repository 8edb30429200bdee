"""Dataset manifest records and image/mask file IO.

Images are stored as 16-bit grayscale PNG (intensities mapped from [0,1]),
masks and label maps as 8-bit grayscale PNG with raw label values. The
manifest is JSON-Lines, one record per image.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass
class ManifestRecord:
    id: str
    patient_id: str
    split: str
    image_path: str
    myo_mask_path: str
    scar_mask_path: str
    lv_center: tuple  # (x, y)
    rv_insertion_anterior: tuple
    rv_insertion_inferior: tuple
    slice_level: str
    is_positive: bool
    provenance: str  # "real_phantom" | "synthetic"
    caption: str | None = None
    qc: dict | None = None  # {"dice": float, "passed": bool}

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        for key in ("lv_center", "rv_insertion_anterior", "rv_insertion_inferior"):
            d[key] = list(d[key])
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        for key in ("lv_center", "rv_insertion_anterior", "rv_insertion_inferior"):
            d[key] = tuple(d[key])
        return cls(**d)


def write_manifest(records: list[ManifestRecord], path: str) -> None:
    """Write records as JSON-Lines. File paths are stored relative to the
    manifest's directory so the manifest bytes do not depend on where the
    output root lives."""
    base = os.path.dirname(os.path.abspath(path))
    os.makedirs(base, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            rel = dataclasses.replace(
                rec,
                image_path=os.path.relpath(os.path.abspath(rec.image_path), base),
                myo_mask_path=os.path.relpath(os.path.abspath(rec.myo_mask_path), base),
                scar_mask_path=os.path.relpath(os.path.abspath(rec.scar_mask_path), base))
            fh.write(rel.to_json() + "\n")


def read_manifest(path: str) -> list[ManifestRecord]:
    """Read a manifest, resolving stored relative paths against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = ManifestRecord.from_json(line)
            rec.image_path = os.path.join(base, rec.image_path)
            rec.myo_mask_path = os.path.join(base, rec.myo_mask_path)
            rec.scar_mask_path = os.path.join(base, rec.scar_mask_path)
            records.append(rec)
    return records


def manifest_checksum(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def save_image16(image: np.ndarray, path: str) -> None:
    """Save a float image in [0,1] as 16-bit grayscale PNG."""
    arr = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(np.uint16)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(arr).save(path)


def load_image16(path: str) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float64)
    return (arr / 65535.0).astype(np.float32)


def save_mask(mask: np.ndarray, path: str) -> None:
    """Save a binary mask or small-integer label map as 8-bit PNG."""
    arr = np.asarray(mask)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.max(initial=0) > 255:
        raise ValueError("label values exceed 8-bit range")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def load_mask(path: str, binary: bool = True) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.uint8)
    return arr > 0 if binary else arr


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
