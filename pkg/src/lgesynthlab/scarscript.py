"""Parametric scar placement and anatomical caption generation.

Wall vocabulary is a closed set; inferoseptal segments (3, 9) report under
the alias "posteroseptal". Captions follow a single template so that every
caption parses back to its descriptor set.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .anatomy import LayerMap, SegmentMap, TransmuralityProfile

WALL_VOCABULARY = (
    "anterior",
    "anteroseptal",
    "posteroseptal",
    "inferior",
    "inferolateral",
    "anterolateral",
    "septal",
    "lateral",
    "apical",
)

SEGMENT_WALL = {
    1: "anterior", 2: "anteroseptal", 3: "posteroseptal",
    4: "inferior", 5: "inferolateral", 6: "anterolateral",
    7: "anterior", 8: "anteroseptal", 9: "posteroseptal",
    10: "inferior", 11: "inferolateral", 12: "anterolateral",
    13: "anterior", 14: "septal", 15: "inferior", 16: "lateral",
    17: "apical",
}

LAYER_WORDS = {1: "subendocardial", 2: "midwall", 3: "subepicardial"}

CONSTANT_CAPTION = "LGE image of the heart"

WALL_SHARE_THRESHOLD = 0.10   # minimum scar-pixel share for a wall to be named
TRANSMURAL_THRESHOLD = 0.75   # max coverage at/above which scar is transmural
MAX_CAPTION_WALLS = 2         # caption names at most the two largest walls
MIN_SCAR_AREA = 4             # pixels; smaller ellipse masks are degenerate
ORIENTATION_JITTER = math.radians(15.0)


@dataclass
class ScarPlacement:
    target_segment_id: int
    target_layer: int  # 1 endo, 2 mid, 3 epi
    center: tuple      # (x, y)
    semi_axes: tuple   # (a, b), a >= b
    orientation: float # radians


@dataclass
class DescriptorSet:
    walls: list           # ordered by descending scar-pixel share
    layer_descriptor: str # subendocardial | midwall | subepicardial | transmural
    is_empty: bool = False


@dataclass
class Caption:
    text: str
    mode: str  # "descriptive" | "constant"
    descriptors: DescriptorSet | None = None


def sample_scar_placement(segment_map: SegmentMap, layer_map: LayerMap,
                          size_range: tuple, seed: int,
                          lv_center: tuple | None = None) -> ScarPlacement:
    """Pick a (segment, layer) cell uniformly among nonempty cells, a center
    uniformly within it, axes from size_range and a wall-tangent orientation
    with +/-15 degree jitter."""
    seg = segment_map.labels
    lay = layer_map.labels
    rng = np.random.default_rng(seed)

    cells = []
    for sid in sorted(np.unique(seg[seg > 0])):
        for lid in (1, 2, 3):
            ys, xs = np.nonzero((seg == sid) & (lay == lid))
            if len(ys):
                cells.append((int(sid), lid, xs, ys))
    if not cells:
        raise ValueError("no myocardium")

    sid, lid, xs, ys = cells[rng.integers(len(cells))]
    k = rng.integers(len(xs))
    cx, cy = float(xs[k]), float(ys[k])

    lo, hi = size_range
    a = rng.uniform(lo, hi)
    b = rng.uniform(lo, hi)
    if b > a:
        a, b = b, a

    if lv_center is None:
        yy, xx = np.nonzero(seg > 0)
        lv_center = (float(xx.mean()), float(yy.mean()))
    ray_angle = math.atan2(cy - lv_center[1], cx - lv_center[0])
    orientation = ray_angle + math.pi / 2.0 + rng.uniform(-ORIENTATION_JITTER, ORIENTATION_JITTER)
    return ScarPlacement(sid, lid, (cx, cy), (float(a), float(b)), float(orientation))


def ellipsoid_scar_mask(placement: ScarPlacement, myo_mask,
                        min_area: int = MIN_SCAR_AREA) -> np.ndarray:
    """Rasterize the rotated ellipse interior and clip it to the myocardium."""
    myo_mask = np.asarray(myo_mask, dtype=bool)
    a, b = placement.semi_axes
    if not (a >= b > 0):
        raise ValueError("semi-axes must satisfy a >= b > 0")
    cx, cy = placement.center
    yy, xx = np.mgrid[0 : myo_mask.shape[0], 0 : myo_mask.shape[1]]
    dx = xx - cx
    dy = yy - cy
    c, s = math.cos(placement.orientation), math.sin(placement.orientation)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    inside = (u / a) ** 2 + (v / b) ** 2 < 1.0  # strict interior
    mask = inside & myo_mask
    if mask.sum() < min_area:
        raise ValueError("degenerate scar")
    return mask


def extract_descriptors(scar_mask, segment_map: SegmentMap, layer_map: LayerMap,
                        profile: TransmuralityProfile) -> DescriptorSet:
    """Wall names with >= 10% scar-pixel share (merged across basal/mid ids of
    the same name), ordered by descending share; layer is transmural above the
    coverage threshold, else the plurality radial layer."""
    scar_mask = np.asarray(scar_mask, dtype=bool)
    if not scar_mask.any():
        return DescriptorSet(walls=[], layer_descriptor="", is_empty=True)
    seg = segment_map.labels
    if (scar_mask & (seg == 0)).any():
        raise ValueError("scar mask must lie within the segment map")

    total = scar_mask.sum()
    shares: dict[str, float] = {}
    for sid in np.unique(seg[scar_mask]):
        wall = SEGMENT_WALL[int(sid)]
        shares[wall] = shares.get(wall, 0.0) + (scar_mask & (seg == sid)).sum() / total
    walls = [w for w in shares if shares[w] >= WALL_SHARE_THRESHOLD]
    walls.sort(key=lambda w: (-shares[w], WALL_VOCABULARY.index(w)))

    if profile.max_coverage >= TRANSMURAL_THRESHOLD:
        layer_word = "transmural"
    else:
        lay = layer_map.labels
        counts = [(scar_mask & (lay == lid)).sum() for lid in (1, 2, 3)]
        layer_word = LAYER_WORDS[1 + int(np.argmax(counts))]
    return DescriptorSet(walls=walls, layer_descriptor=layer_word)


def render_caption(descriptors: DescriptorSet | None, mode: str) -> Caption:
    if mode == "constant":
        return Caption(text=CONSTANT_CAPTION, mode="constant", descriptors=None)
    if mode != "descriptive":
        raise ValueError(f"unknown caption mode: {mode}")
    if descriptors is None or descriptors.is_empty:
        raise ValueError("no enhancement to describe")
    walls = descriptors.walls[:MAX_CAPTION_WALLS]
    text = f"{descriptors.layer_descriptor.capitalize()} enhancement in the {', '.join(walls)} wall"
    return Caption(text=text, mode="descriptive", descriptors=descriptors)


_CAPTION_RE = re.compile(
    r"^(Subendocardial|Midwall|Subepicardial|Transmural) enhancement in the (.+) wall$"
)


def parse_caption(text: str) -> Caption:
    """Inverse of render_caption over the closed caption grammar."""
    if text == CONSTANT_CAPTION:
        return Caption(text=text, mode="constant", descriptors=None)
    m = _CAPTION_RE.match(text)
    if m is None:
        raise ValueError(f"unparseable caption: {text!r}")
    layer_word = m.group(1).lower()
    walls = m.group(2).split(", ")
    for w in walls:
        if w not in WALL_VOCABULARY:
            raise ValueError(f"unknown wall word: {w!r}")
    return Caption(text=text, mode="descriptive",
                   descriptors=DescriptorSet(walls=walls, layer_descriptor=layer_word))
