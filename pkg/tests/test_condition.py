import numpy as np
import pytest

from lgesynthlab import anatomy, condition, phantom, scarscript

from test_scarscript import maps_for


# preprocess


def test_preprocess_identity_spacing_shape():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (64, 64))
    out = condition.preprocess(img, 1.0, 64)
    assert out.shape == (64, 64)
    assert out.min() == 0.0 and out.max() == 1.0


def test_preprocess_percentile_matches_nearest_rank_oracle():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 10, (64, 64))
    out = condition.preprocess(img, 1.0, 64)
    # nearest-rank 98th percentile: the ceil(0.98 n)-th smallest value
    vals = sorted(img.ravel().tolist())
    k = -(-98 * len(vals) // 100)  # ceiling division
    cutoff = vals[k - 1]
    clipped = np.minimum(img, cutoff)
    want = (clipped - clipped.min()) / (clipped.max() - clipped.min())
    assert np.abs(out - want).max() < 1e-6


def test_preprocess_clips_hot_pixels():
    rng = np.random.default_rng(3)
    img = rng.uniform(0.2, 0.6, (64, 64))
    img[10, 10] = 1000.0
    out = condition.preprocess(img, 1.0, 64)
    # the single hot pixel is clipped down to the 98th percentile, so it no
    # longer dominates the normalization
    assert out[10, 10] == 1.0
    assert np.median(out) > 0.3


def test_preprocess_resamples_spacing():
    img = np.zeros((32, 32))
    img[8:24, 8:24] = 1.0
    out = condition.preprocess(img, 2.0, 64)
    assert out.shape == (64, 64)
    # a 16-px block at 2 mm spacing becomes a ~32-px block on the 1 mm grid
    assert 30 <= (out > 0.5).sum(axis=1).max() <= 34


def test_preprocess_pads_small_images():
    img = np.ones((16, 16))
    out = condition.preprocess(img, 1.0, 64)
    assert out.shape == (64, 64)
    assert out[:8].sum() == 0  # padded border


def test_preprocess_constant_image_zeros():
    out = condition.preprocess(np.full((64, 64), 0.7), 1.0, 64)
    assert (out == 0).all()


def test_preprocess_rejects_bad_spacing():
    with pytest.raises(ValueError):
        condition.preprocess(np.zeros((8, 8)), 0.0, 8)


# mask fill and edges


def test_mask_fill_mean_exact():
    img = np.arange(16, dtype=float).reshape(4, 4)
    region = np.zeros((4, 4), bool)
    region[0, 0] = region[0, 1] = True
    out = condition.mask_fill_mean(img, region)
    assert out[0, 0] == out[0, 1] == 0.5
    assert (out[1:] == img[1:]).all()
    # empty region is the identity
    assert np.array_equal(condition.mask_fill_mean(img, np.zeros((4, 4), bool)), img)


def test_edge_map_matches_neighborhood_oracle():
    rng = np.random.default_rng(2)
    mask = rng.uniform(size=(20, 20)) < 0.4
    got = condition.edge_map(mask)
    want = np.zeros_like(mask)
    for y in range(20):
        for x in range(20):
            if not mask[y, x]:
                continue
            nb = []
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                yy, xx = y + dy, x + dx
                nb.append(mask[yy, xx] if 0 <= yy < 20 and 0 <= xx < 20 else False)
            want[y, x] = not all(nb)
    assert np.array_equal(got, want)


def test_edge_map_solid_block():
    mask = np.zeros((10, 10), bool)
    mask[2:8, 2:8] = True
    edges = condition.edge_map(mask)
    assert edges.sum() == 20  # perimeter of a 6x6 block
    assert not edges[3:7, 3:7].any()


# bundles


def test_training_bundle_fields(positive_bank):
    s = positive_bank[0]
    seg, lay = maps_for(s)
    prof = anatomy.transmurality(s.scar_mask, s.myo_mask, s.lv_center)
    cap = scarscript.render_caption(
        scarscript.extract_descriptors(s.scar_mask, seg, lay, prof), "descriptive")
    b = condition.build_training_bundle(s, cap, source_id="rec7")
    assert np.array_equal(b.target_scar_mask, s.scar_mask)
    assert np.array_equal(b.edge_map, condition.edge_map(s.scar_mask))
    assert b.source_id == "rec7"
    # scar region replaced by one constant value
    assert len(np.unique(b.masked_image[s.scar_mask])) == 1
    assert np.array_equal(b.masked_image[~s.scar_mask], s.image[~s.scar_mask])


def test_training_bundle_rejects_negative(default_spec):
    s = phantom.generate_phantom(default_spec, "neg", 0, force_positive=False)
    cap = scarscript.render_caption(None, "constant")
    with pytest.raises(ValueError):
        condition.build_training_bundle(s, cap)


def test_inference_bundle_places_ellipse(default_spec):
    s = phantom.generate_phantom(default_spec, "neg2", 0, force_positive=False)
    seg, lay = maps_for(s)
    p = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), 11, lv_center=s.lv_center)
    cap = scarscript.render_caption(None, "constant")
    b = condition.build_inference_bundle(s, p, cap, source_id="src1")
    assert b.target_scar_mask.any()
    assert not (b.target_scar_mask & ~s.myo_mask).any()
    assert np.array_equal(b.edge_map, condition.edge_map(b.target_scar_mask))


def test_inference_bundle_rejects_positive(positive_bank):
    s = positive_bank[1]
    seg, lay = maps_for(s)
    p = scarscript.sample_scar_placement(seg, lay, (4.0, 9.0), 0, lv_center=s.lv_center)
    with pytest.raises(ValueError):
        condition.build_inference_bundle(s, p, scarscript.render_caption(None, "constant"))
