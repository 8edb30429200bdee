import math

import numpy as np
import pytest

from lgesynthlab import anatomy, phantom, scarscript

from conftest import annulus_mask


def maps_for(sample):
    seg = anatomy.aha_segment_map(sample.myo_mask, sample.lv_center,
                                  sample.rv_insertion_anterior,
                                  sample.rv_insertion_inferior, sample.slice_level)
    lay = anatomy.radial_layer_map(sample.myo_mask, sample.lv_center)
    return seg, lay


# Placement


def test_placement_center_in_target_cell(sample_bank):
    s = sample_bank[0]
    seg, lay = maps_for(s)
    for seed in range(30):
        p = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), seed,
                                             lv_center=s.lv_center)
        x, y = int(p.center[0]), int(p.center[1])
        assert seg.labels[y, x] == p.target_segment_id
        assert lay.labels[y, x] == p.target_layer
        assert p.semi_axes[0] >= p.semi_axes[1] > 0
        lo, hi = 4.0, 9.0
        assert lo <= p.semi_axes[1] and p.semi_axes[0] <= hi


def test_placement_deterministic(sample_bank):
    s = sample_bank[0]
    seg, lay = maps_for(s)
    a = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), 7, lv_center=s.lv_center)
    b = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), 7, lv_center=s.lv_center)
    assert a == b


def test_placement_cell_coverage(sample_bank):
    """Uniform cell choice should visit many (segment, layer) cells."""
    s = sample_bank[0]
    seg, lay = maps_for(s)
    cells = {(scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), seed,
                                               lv_center=s.lv_center).target_segment_id,
              scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), seed,
                                               lv_center=s.lv_center).target_layer)
             for seed in range(80)}
    assert len(cells) >= 8


def test_placement_orientation_tangent(sample_bank):
    """Orientation stays within the +/-15 degree jitter of the wall tangent."""
    s = sample_bank[0]
    seg, lay = maps_for(s)
    for seed in range(20):
        p = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), seed,
                                             lv_center=s.lv_center)
        ray = math.atan2(p.center[1] - s.lv_center[1], p.center[0] - s.lv_center[0])
        diff = (p.orientation - (ray + math.pi / 2) + math.pi) % (2 * math.pi) - math.pi
        assert abs(diff) <= scarscript.ORIENTATION_JITTER + 1e-9


def test_placement_requires_myocardium():
    empty_seg = anatomy.SegmentMap(np.zeros((8, 8), np.uint8), "mid")
    empty_lay = anatomy.LayerMap(np.zeros((8, 8), np.uint8))
    with pytest.raises(ValueError):
        scarscript.sample_scar_placement(empty_seg, empty_lay, (2.0, 4.0), 0)


# Ellipse rasterization


def ellipse_oracle(placement, myo_mask):
    """Point-by-point membership check from the rotated-ellipse definition."""
    out = np.zeros_like(myo_mask, dtype=bool)
    a, b = placement.semi_axes
    for y in range(myo_mask.shape[0]):
        for x in range(myo_mask.shape[1]):
            dx, dy = x - placement.center[0], y - placement.center[1]
            u = dx * math.cos(placement.orientation) + dy * math.sin(placement.orientation)
            v = -dx * math.sin(placement.orientation) + dy * math.cos(placement.orientation)
            if (u / a) ** 2 + (v / b) ** 2 < 1.0 and myo_mask[y, x]:
                out[y, x] = True
    return out


def test_ellipse_matches_pointwise_oracle(sample_bank):
    s = sample_bank[1]
    seg, lay = maps_for(s)
    for seed in (0, 1, 2):
        p = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), seed,
                                             lv_center=s.lv_center)
        got = scarscript.ellipsoid_scar_mask(p, s.myo_mask)
        assert np.array_equal(got, ellipse_oracle(p, s.myo_mask))


def test_ellipse_clipped_to_myocardium(sample_bank):
    s = sample_bank[2]
    seg, lay = maps_for(s)
    p = scarscript.sample_scar_placement(seg, lay, (6.0, 9.0), 3, lv_center=s.lv_center)
    mask = scarscript.ellipsoid_scar_mask(p, s.myo_mask)
    assert not (mask & ~s.myo_mask).any()


def test_unit_circle_single_pixel():
    myo = np.ones((9, 9), dtype=bool)
    p = scarscript.ScarPlacement(7, 2, (4.0, 4.0), (1.0, 1.0), 0.0)
    mask = scarscript.ellipsoid_scar_mask(p, myo, min_area=1)
    assert mask.sum() == 1 and mask[4, 4]


def test_degenerate_scar_rejected():
    myo = np.zeros((9, 9), dtype=bool)
    myo[4, 4] = True
    p = scarscript.ScarPlacement(7, 2, (4.0, 4.0), (1.5, 1.0), 0.0)
    with pytest.raises(ValueError, match="degenerate"):
        scarscript.ellipsoid_scar_mask(p, myo)


def test_invalid_axes_rejected():
    myo = np.ones((9, 9), dtype=bool)
    with pytest.raises(ValueError):
        scarscript.ellipsoid_scar_mask(
            scarscript.ScarPlacement(7, 2, (4.0, 4.0), (1.0, 2.0), 0.0), myo)


# Descriptors


def descriptor_oracle(scar_mask, seg_labels, lay_labels, max_coverage):
    """Brute-force overlap counting, written independently of the library."""
    total = int(scar_mask.sum())
    per_wall = {}
    for y, x in zip(*np.nonzero(scar_mask)):
        wall = scarscript.SEGMENT_WALL[int(seg_labels[y, x])]
        per_wall[wall] = per_wall.get(wall, 0) + 1
    walls = [w for w, c in per_wall.items() if c / total >= 0.10]
    walls.sort(key=lambda w: (-per_wall[w], scarscript.WALL_VOCABULARY.index(w)))
    if max_coverage >= 0.75:
        layer = "transmural"
    else:
        cnt = {1: 0, 2: 0, 3: 0}
        for y, x in zip(*np.nonzero(scar_mask)):
            cnt[int(lay_labels[y, x])] += 1
        layer = {1: "subendocardial", 2: "midwall", 3: "subepicardial"}[
            max((1, 2, 3), key=lambda k: (cnt[k], -k))]
    return walls, layer


def test_descriptors_match_counting_oracle(positive_bank):
    for s in positive_bank:
        seg, lay = maps_for(s)
        prof = anatomy.transmurality(s.scar_mask, s.myo_mask, s.lv_center)
        got = scarscript.extract_descriptors(s.scar_mask, seg, lay, prof)
        walls, layer = descriptor_oracle(s.scar_mask, seg.labels, lay.labels,
                                         prof.max_coverage)
        assert got.walls == walls
        assert got.layer_descriptor == layer


def test_full_wall_scar_is_transmural(sample_bank):
    s = sample_bank[3]
    seg, lay = maps_for(s)
    prof = anatomy.transmurality(s.myo_mask, s.myo_mask, s.lv_center)
    got = scarscript.extract_descriptors(s.myo_mask, seg, lay, prof)
    assert got.layer_descriptor == "transmural"
    assert set(got.walls) == {scarscript.SEGMENT_WALL[i] for i in anatomy.MID_IDS}


def test_empty_scar_descriptor():
    seg = anatomy.SegmentMap(np.zeros((8, 8), np.uint8), "mid")
    lay = anatomy.LayerMap(np.zeros((8, 8), np.uint8))
    prof = anatomy.TransmuralityProfile(np.zeros(72), 0.0, 5.0)
    got = scarscript.extract_descriptors(np.zeros((8, 8), bool), seg, lay, prof)
    assert got.is_empty and got.walls == []


def test_scar_outside_segments_rejected():
    seg = anatomy.SegmentMap(np.zeros((8, 8), np.uint8), "mid")
    lay = anatomy.LayerMap(np.zeros((8, 8), np.uint8))
    prof = anatomy.TransmuralityProfile(np.zeros(72), 0.0, 5.0)
    scar = np.zeros((8, 8), bool)
    scar[2, 2] = True
    with pytest.raises(ValueError):
        scarscript.extract_descriptors(scar, seg, lay, prof)


def test_inferoseptal_reports_as_posteroseptal():
    mask = annulus_mask(r_in=10.0, r_out=16.0)
    center = (32.0, 32.0)
    ant = (center[0] + 20 * math.cos(2.0), center[1] + 20 * math.sin(2.0))
    inf = (center[0] + 20 * math.cos(2.0 + 2 * math.pi / 3),
           center[1] + 20 * math.sin(2.0 + 2 * math.pi / 3))
    seg = anatomy.aha_segment_map(mask, center, ant, inf, "mid")
    lay = anatomy.radial_layer_map(mask, center)
    scar = (seg.labels == 9)
    prof = anatomy.transmurality(scar, mask, center)
    got = scarscript.extract_descriptors(scar, seg, lay, prof)
    assert got.walls == ["posteroseptal"]
    assert got.layer_descriptor == "transmural"


# Captions


def test_verbatim_reference_caption():
    desc = scarscript.DescriptorSet(walls=["posteroseptal"],
                                    layer_descriptor="transmural")
    cap = scarscript.render_caption(desc, "descriptive")
    assert cap.text == "Transmural enhancement in the posteroseptal wall"


def test_two_wall_caption():
    desc = scarscript.DescriptorSet(walls=["anterior", "anterolateral"],
                                    layer_descriptor="subendocardial")
    cap = scarscript.render_caption(desc, "descriptive")
    assert cap.text == "Subendocardial enhancement in the anterior, anterolateral wall"


def test_caption_caps_at_two_walls():
    desc = scarscript.DescriptorSet(walls=["anterior", "inferior", "lateral"],
                                    layer_descriptor="midwall")
    cap = scarscript.render_caption(desc, "descriptive")
    assert cap.text.count(",") == 1


def test_constant_caption():
    cap = scarscript.render_caption(None, "constant")
    assert cap.text == "LGE image of the heart"
    assert cap.mode == "constant"


def test_render_rejects_empty_or_unknown():
    with pytest.raises(ValueError):
        scarscript.render_caption(None, "descriptive")
    with pytest.raises(ValueError):
        scarscript.render_caption(
            scarscript.DescriptorSet([], "", is_empty=True), "descriptive")
    with pytest.raises(ValueError):
        scarscript.render_caption(
            scarscript.DescriptorSet(["anterior"], "midwall"), "poetic")


def test_caption_round_trip(positive_bank):
    for s in positive_bank:
        seg, lay = maps_for(s)
        prof = anatomy.transmurality(s.scar_mask, s.myo_mask, s.lv_center)
        desc = scarscript.extract_descriptors(s.scar_mask, seg, lay, prof)
        cap = scarscript.render_caption(desc, "descriptive")
        back = scarscript.parse_caption(cap.text)
        assert back.mode == "descriptive"
        assert back.descriptors.walls == desc.walls[:scarscript.MAX_CAPTION_WALLS]
        assert back.descriptors.layer_descriptor == desc.layer_descriptor
    assert scarscript.parse_caption(scarscript.CONSTANT_CAPTION).mode == "constant"


def test_parse_rejects_garbage():
    for bad in ("Transmural enhancement in the cranial wall",
                "enhancement in the anterior wall",
                "Transmural enhancement"):
        with pytest.raises(ValueError):
            scarscript.parse_caption(bad)
