import math

import numpy as np
import pytest

from lgesynthlab import phantom
from lgesynthlab.manifest import load_image16, load_mask, manifest_checksum, read_manifest

from conftest import low_noise_spec


def test_same_inputs_identical_output(default_spec):
    a = phantom.generate_phantom(default_spec, "p0", seed=3)
    b = phantom.generate_phantom(default_spec, "p0", seed=3)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.myo_mask, b.myo_mask)
    assert np.array_equal(a.scar_mask, b.scar_mask)
    assert a.lv_center == b.lv_center


def test_seed_changes_image_not_patient_anatomy(default_spec):
    a = phantom.generate_phantom(default_spec, "p0", seed=0, force_positive=False)
    b = phantom.generate_phantom(default_spec, "p0", seed=1, force_positive=False)
    assert not np.array_equal(a.image, b.image)
    # the underlying anatomy is a patient property; the per-image jitter is small
    assert abs(a.lv_center[0] - b.lv_center[0]) <= 2 * default_spec.lv_center_jitter
    assert abs(a.lv_center[1] - b.lv_center[1]) <= 2 * default_spec.lv_center_jitter


def test_patient_id_changes_anatomy(default_spec):
    masks = [phantom.generate_phantom(default_spec, f"q{i}", seed=0).myo_mask
             for i in range(6)]
    areas = {int(m.sum()) for m in masks}
    assert len(areas) > 1


def test_scar_inside_myocardium(sample_bank):
    for s in sample_bank:
        assert not (s.scar_mask & ~s.myo_mask).any()
        assert s.is_positive == bool(s.scar_mask.any())


def test_force_positive_flag(default_spec):
    pos = phantom.generate_phantom(default_spec, "p1", seed=0, force_positive=True)
    neg = phantom.generate_phantom(default_spec, "p1", seed=0, force_positive=False)
    assert pos.scar_mask.any() and pos.is_positive
    assert not neg.scar_mask.any() and not neg.is_positive


def test_intensity_ordering():
    spec = low_noise_spec()
    s = phantom.generate_phantom(spec, "p2", seed=0, force_positive=True)
    im = spec.intensity_model
    remote = s.myo_mask & ~s.scar_mask
    assert abs(s.image[remote].mean() - im["myo_mean"]) < 0.02
    assert abs(s.image[s.scar_mask].mean() - im["scar_mean"]) < 0.03
    assert s.image[s.scar_mask].mean() > s.image[remote].mean() + 0.2


def test_image_range_and_dtype(sample_bank):
    for s in sample_bank:
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.image.dtype == np.float32
        assert s.myo_mask.dtype == bool


def test_geometry_margin(sample_bank):
    # heart structures stay away from the border so cropping never truncates
    for s in sample_bank:
        ys, xs = np.nonzero(s.myo_mask)
        size = s.image.shape[0]
        assert ys.min() >= 2 and xs.min() >= 2
        assert ys.max() < size - 2 and xs.max() < size - 2


def test_insertions_on_myo_boundary(sample_bank):
    for s in sample_bank:
        for x, y in (s.rv_insertion_anterior, s.rv_insertion_inferior):
            assert s.myo_mask[int(y), int(x)]


def test_validate_rejects_inseparable_scar():
    intensities = dict(phantom.DEFAULT_INTENSITIES)
    intensities["scar_mean"] = intensities["myo_mean"] + 0.01
    with pytest.raises(ValueError):
        phantom.PhantomSpec(intensity_model=intensities).validate()


def test_validate_rejects_oversized_heart():
    with pytest.raises(ValueError):
        phantom.PhantomSpec(image_size=32).validate()


def test_negative_seed_rejected(default_spec):
    with pytest.raises(ValueError):
        phantom.generate_phantom(default_spec, "p0", seed=-1)


def split_counts_oracle(n, fractions):
    """Largest-remainder apportionment, written independently."""
    quotas = [f * n for f in fractions]
    floors = [math.floor(q) for q in quotas]
    remainder = n - sum(floors)
    by_frac = sorted(range(len(fractions)), key=lambda i: quotas[i] - floors[i],
                     reverse=True)
    for i in by_frac[:remainder]:
        floors[i] += 1
    return floors


@pytest.mark.parametrize("n,fractions", [
    (100, (0.6, 0.2, 0.2)),
    (10, (0.5, 0.25, 0.25)),
    (7, (0.6, 0.2, 0.2)),
    (23, (0.34, 0.33, 0.33)),
])
def test_split_counts_against_oracle(n, fractions):
    got = phantom._split_counts(n, fractions)
    assert got == split_counts_oracle(n, fractions)
    assert sum(got) == n


def test_split_counts_rejects_empty_split():
    with pytest.raises(ValueError):
        phantom._split_counts(4, (0.9, 0.05, 0.05))


def test_cohort_layout_and_determinism(tmp_path, default_spec):
    recs = phantom.generate_cohort(default_spec, 10, 2, (0.5, 0.25, 0.25), 0,
                                   str(tmp_path / "a"))
    assert len(recs) == 20
    by_split = {s: {r.patient_id for r in recs if r.split == s}
                for s in ("train", "val", "test")}
    assert sorted(len(v) for v in by_split.values()) == [2, 3, 5]
    # split is a patient-level property
    assert not (by_split["train"] & by_split["val"] & by_split["test"])
    # positivity is a patient-level property
    for pid in {r.patient_id for r in recs}:
        flags = {r.is_positive for r in recs if r.patient_id == pid}
        assert len(flags) == 1
    # same config in a different directory gives byte-identical manifests
    phantom.generate_cohort(default_spec, 10, 2, (0.5, 0.25, 0.25), 0,
                            str(tmp_path / "b"))
    assert (manifest_checksum(tmp_path / "a" / "manifest.jsonl")
            == manifest_checksum(tmp_path / "b" / "manifest.jsonl"))


def test_cohort_roundtrips_through_files(tmp_path, default_spec):
    recs = phantom.generate_cohort(default_spec, 4, 1, (0.5, 0.25, 0.25), 1,
                                   str(tmp_path / "c"))
    loaded = read_manifest(str(tmp_path / "c" / "manifest.jsonl"))
    assert [r.id for r in loaded] == [r.id for r in recs]
    s = phantom.generate_phantom(default_spec, loaded[0].patient_id, seed=0,
                                 force_positive=loaded[0].is_positive)
    img = load_image16(loaded[0].image_path)
    assert np.abs(img - s.image).max() <= 0.5 / 65535 + 1e-6
    assert np.array_equal(load_mask(loaded[0].myo_mask_path), s.myo_mask)


def test_positive_fraction_matches_probability(default_spec):
    # patient-level Bernoulli(0.5); binomial 99.9% interval for n=200
    rng_samples = [phantom.generate_phantom(default_spec, f"frac_p{i}", seed=0)
                   for i in range(200)]
    frac = np.mean([s.is_positive for s in rng_samples])
    assert 0.38 < frac < 0.62
