"""Staged experiment orchestration with a content-addressed run ledger.

Stage graph (each stage depends on the previous one):
    cohort -> train-ae -> train-base -> train-control -> synth -> qc
           -> train-seg -> eval -> report

The reward segmenter is trained inside the train-control stage (on all real
training images) and reused unchanged as the QC oracle. Downstream segmenters
are trained per (seed, N) arm with per-arm artifact caching, so adding a new
N re-trains only the new arms.
"""

from __future__ import annotations

import dataclasses
import json
import os
import shutil
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import anatomy, condition, evalqc, genmodel, phantom, rewardseg, scarscript
from .ckptio import config_hash
from .manifest import (ManifestRecord, file_sha256, load_image16, load_mask,
                       manifest_checksum, read_manifest, save_image16, save_mask,
                       write_manifest)

STAGES = ("cohort", "train-ae", "train-base", "train-control", "synth", "qc",
          "train-seg", "eval", "report")


@dataclass
class CohortConfig:
    n_patients: int = 100
    images_per_patient: int = 3
    split_fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        self.split_fractions = tuple(self.split_fractions)


@dataclass
class SynthesisConfig:
    n_candidates: int = 1200
    n_targets: tuple = (300,)
    size_range: tuple = (4.0, 9.0)
    sampling_steps: int = 10
    guidance_scale: float = 9.0
    caption_mode: str = "descriptive"

    def __post_init__(self):
        self.n_targets = tuple(self.n_targets)
        self.size_range = tuple(self.size_range)
        if any(n > self.n_candidates for n in self.n_targets):
            raise ValueError("every N target must be <= n_candidates")


@dataclass
class ExperimentConfig:
    phantom_spec: dict = field(default_factory=dict)          # PhantomSpec overrides
    cohort: CohortConfig = field(default_factory=CohortConfig)
    gen: genmodel.GenConfig = field(default_factory=genmodel.GenConfig)
    reward: genmodel.RewardConfig = field(default_factory=genmodel.RewardConfig)
    reward_seg: rewardseg.SegTrainConfig = field(default_factory=rewardseg.SegTrainConfig)
    downstream_seg: rewardseg.SegTrainConfig = field(default_factory=rewardseg.SegTrainConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    out_root: str = "runs/default"

    def spec(self) -> phantom.PhantomSpec:
        return phantom.PhantomSpec(**self.phantom_spec)

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        kwargs = dict(raw)
        for key, sub in (("cohort", CohortConfig), ("gen", genmodel.GenConfig),
                         ("reward", genmodel.RewardConfig),
                         ("reward_seg", rewardseg.SegTrainConfig),
                         ("downstream_seg", rewardseg.SegTrainConfig),
                         ("synthesis", SynthesisConfig)):
            if key in kwargs and isinstance(kwargs[key], dict):
                kwargs[key] = sub(**kwargs[key])
        for key in ("seeds",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Run ledger

@dataclass
class LedgerEntry:
    stage: str
    inputs_hash: str
    outputs_hash: str
    wall_time: float
    seed: int


class RunLedger:
    """Append-only JSON-Lines stage ledger under the output root."""

    def __init__(self, out_root: str):
        self.path = os.path.join(out_root, "ledger.jsonl")

    def entries(self) -> list[LedgerEntry]:
        if not os.path.exists(self.path):
            return []
        with open(self.path, "r", encoding="utf-8") as fh:
            return [LedgerEntry(**json.loads(line)) for line in fh if line.strip()]

    def latest(self, stage: str) -> LedgerEntry | None:
        found = None
        for e in self.entries():
            if e.stage == stage:
                found = e
        return found

    def append(self, entry: LedgerEntry) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(dataclasses.asdict(entry), sort_keys=True) + "\n")


def _hash_tree(root: str) -> str:
    """Content hash over every file under root (ledger files excluded),
    keyed by relative path so the hash is location-independent."""
    items = []
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            items.append((rel, file_sha256(path)))
    items.sort()
    return config_hash(items)


# ---------------------------------------------------------------------------
# Shared helpers

def _stage_dir(config: ExperimentConfig, stage: str) -> str:
    return os.path.join(config.out_root, stage.replace("train-", "train_"))


def _anatomy_maps(rec: ManifestRecord, myo_mask):
    seg = anatomy.aha_segment_map(myo_mask, rec.lv_center, rec.rv_insertion_anterior,
                                  rec.rv_insertion_inferior, rec.slice_level)
    lay = anatomy.radial_layer_map(myo_mask, rec.lv_center)
    return seg, lay


def _caption_for_mask(scar_mask, myo_mask, rec: ManifestRecord, mode: str) -> scarscript.Caption:
    if mode == "constant":
        return scarscript.render_caption(None, "constant")
    seg, lay = _anatomy_maps(rec, myo_mask)
    profile = anatomy.transmurality(scar_mask, myo_mask, rec.lv_center)
    desc = scarscript.extract_descriptors(scar_mask, seg, lay, profile)
    return scarscript.render_caption(desc, "descriptive")


def _sample_from_record(rec: ManifestRecord, image, myo, scar) -> phantom.PhantomSample:
    return phantom.PhantomSample(
        image=image, myo_mask=myo, scar_mask=scar, lv_center=rec.lv_center,
        rv_insertion_anterior=rec.rv_insertion_anterior,
        rv_insertion_inferior=rec.rv_insertion_inferior,
        slice_level=rec.slice_level, patient_id=rec.patient_id,
        is_positive=rec.is_positive)


def _load_record(rec: ManifestRecord):
    return (load_image16(rec.image_path), load_mask(rec.myo_mask_path),
            load_mask(rec.scar_mask_path))


def _split_images(records, split):
    return [load_image16(r.image_path) for r in records if r.split == split]


def _cohort_manifest(config) -> list[ManifestRecord]:
    return read_manifest(os.path.join(_stage_dir(config, "cohort"), "manifest.jsonl"))


# ---------------------------------------------------------------------------
# Stage implementations

def _run_cohort(config: ExperimentConfig) -> None:
    phantom.generate_cohort(config.spec(), config.cohort.n_patients,
                            config.cohort.images_per_patient,
                            tuple(config.cohort.split_fractions),
                            config.seed, _stage_dir(config, "cohort"))


def _run_train_ae(config: ExperimentConfig) -> None:
    records = _cohort_manifest(config)
    ckpt = genmodel.train_autoencoder(_split_images(records, "train"),
                                      _split_images(records, "val"),
                                      config.gen, config.seed)
    genmodel.save_generator(ckpt, os.path.join(_stage_dir(config, "train-ae"), "ae.pt"))


def _run_train_base(config: ExperimentConfig) -> None:
    records = _cohort_manifest(config)
    ckpt = genmodel.load_generator(os.path.join(_stage_dir(config, "train-ae"), "ae.pt"))
    ckpt = genmodel.train_base(ckpt, _split_images(records, "train"), config.gen, config.seed)
    genmodel.save_generator(ckpt, os.path.join(_stage_dir(config, "train-base"), "base.pt"))


def _training_bundles(config: ExperimentConfig, records):
    """Conditioning bundles and source-image lookup for positive train images."""
    bundles, images = [], {}
    for rec in records:
        if rec.split != "train" or not rec.is_positive:
            continue
        image, myo, scar = _load_record(rec)
        caption = _caption_for_mask(scar, myo, rec, config.synthesis.caption_mode)
        sample = _sample_from_record(rec, image, myo, scar)
        bundles.append(condition.build_training_bundle(sample, caption, source_id=rec.id))
        images[rec.id] = image
    return bundles, images


def _run_train_control(config: ExperimentConfig) -> None:
    records = _cohort_manifest(config)
    out_dir = _stage_dir(config, "train-control")
    reward_ckpt = rewardseg.train_segmenter(records, config.reward_seg, config.seed)
    rewardseg.save_segmenter(reward_ckpt, os.path.join(out_dir, "reward_seg.pt"))
    bundles, images = _training_bundles(config, records)
    if not bundles:
        raise ValueError("no positive training images for control training")
    ckpt = genmodel.load_generator(os.path.join(_stage_dir(config, "train-base"), "base.pt"))
    ckpt = genmodel.train_controlled(ckpt, bundles, images, reward_ckpt, config.reward,
                                     config.gen, config.seed,
                                     log_path=os.path.join(out_dir, "training_log.csv"))
    genmodel.save_generator(ckpt, os.path.join(out_dir, "generator.pt"))


def _run_synth(config: ExperimentConfig) -> None:
    """Generate candidate images from negative train-split images only."""
    records = _cohort_manifest(config)
    out_dir = _stage_dir(config, "synth")
    ckpt = genmodel.load_generator(
        os.path.join(_stage_dir(config, "train-control"), "generator.pt"))
    negatives = [r for r in records if r.split == "train" and not r.is_positive]
    if not negatives:
        raise ValueError("no negative train images to condition on")
    cache = {}
    rows = []
    for k in range(config.synthesis.n_candidates):
        rec = negatives[k % len(negatives)]
        if rec.id not in cache:
            image, myo, scar = _load_record(rec)
            seg, lay = _anatomy_maps(rec, myo)
            cache[rec.id] = (image, myo, seg, lay)
        image, myo, seg, lay = cache[rec.id]
        sample = _sample_from_record(rec, image, myo, np.zeros_like(myo))
        bundle = None
        for attempt in range(8):
            try:
                placement = scarscript.sample_scar_placement(
                    seg, lay, tuple(config.synthesis.size_range),
                    seed=config.seed * 1_000_003 + k * 31 + attempt,
                    lv_center=rec.lv_center)
                caption = _caption_for_mask(
                    scarscript.ellipsoid_scar_mask(placement, myo), myo, rec,
                    config.synthesis.caption_mode)
                bundle = condition.build_inference_bundle(sample, placement, caption,
                                                          source_id=rec.id)
                break
            except ValueError:
                continue
        if bundle is None:
            raise RuntimeError(f"failed to place candidate scar {k}")
        gen_img = genmodel.sample(ckpt, bundle, config.synthesis.sampling_steps,
                                  config.synthesis.guidance_scale,
                                  seed=config.seed * 2_000_003 + k)
        cand_id = f"cand_{k:05d}"
        save_image16(gen_img, os.path.join(out_dir, "images", f"{cand_id}.png"))
        save_mask(bundle.target_scar_mask, os.path.join(out_dir, "masks", f"{cand_id}_target.png"))
        rows.append({"candidate_id": cand_id, "source_id": rec.id,
                     "caption": bundle.caption.text,
                     "caption_mode": bundle.caption.mode})
    with open(os.path.join(out_dir, "bundles.jsonl"), "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _load_candidates(config: ExperimentConfig):
    synth_dir = _stage_dir(config, "synth")
    with open(os.path.join(synth_dir, "bundles.jsonl"), "r", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    records = {r.id: r for r in _cohort_manifest(config)}
    out = []
    for row in rows:
        img = load_image16(os.path.join(synth_dir, "images", f"{row['candidate_id']}.png"))
        target = load_mask(os.path.join(synth_dir, "masks",
                                        f"{row['candidate_id']}_target.png"))
        out.append((row, img, target, records[row["source_id"]]))
    return out


def _run_qc(config: ExperimentConfig) -> None:
    out_dir = _stage_dir(config, "qc")
    qc_model = rewardseg.load_segmenter(
        os.path.join(_stage_dir(config, "train-control"), "reward_seg.pt"))
    results = []
    for row, img, target, rec in _load_candidates(config):
        _, label_map = rewardseg.segment(qc_model, img)
        pred = label_map == 2
        d = evalqc.dice(pred, target)
        passed = d > evalqc.QC_DICE_THRESHOLD
        save_mask(pred, os.path.join(out_dir, "pred_masks", f"{row['candidate_id']}.png"))
        results.append({"candidate_id": row["candidate_id"], "source_id": row["source_id"],
                        "dice": round(d, 6), "passed": bool(passed)})
    with open(os.path.join(out_dir, "qc_results.jsonl"), "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_curated(config: ExperimentConfig) -> list[evalqc.GeneratedSample]:
    """QC-passed generated samples in generation order, with the predicted
    mask attached as downstream GT."""
    qc_dir = _stage_dir(config, "qc")
    synth_dir = _stage_dir(config, "synth")
    with open(os.path.join(qc_dir, "qc_results.jsonl"), "r", encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    out = []
    for row in rows:
        if not row["passed"]:
            continue
        img = load_image16(os.path.join(synth_dir, "images", f"{row['candidate_id']}.png"))
        pred = load_mask(os.path.join(qc_dir, "pred_masks", f"{row['candidate_id']}.png"))
        out.append(evalqc.GeneratedSample(
            image=img, bundle_id=row["candidate_id"], predicted_scar_mask=pred,
            dice_vs_condition=row["dice"], passed=True, source_id=row["source_id"]))
    return out


def hybrid_train(real_records: list[ManifestRecord],
                 curated: list[evalqc.GeneratedSample], n_synthetic: int,
                 seg_config: rewardseg.SegTrainConfig, seed: int,
                 myo_masks: dict | None = None) -> rewardseg.SegmenterCheckpoint:
    """Downstream training on real train images plus the first n_synthetic
    curated samples (synthetic GT = QC-predicted mask); validation stays
    real-only. n_synthetic = 0 reduces exactly to real-only training."""
    if len(curated) < n_synthetic:
        raise ValueError(
            f"only {len(curated)} curated samples available, need {n_synthetic}; "
            "generate more candidates")
    if myo_masks is None:
        myo_masks = {}
        by_id = {r.id: r for r in real_records}
        for s in curated[:n_synthetic]:
            myo_masks[s.source_id] = load_mask(by_id[s.source_id].myo_mask_path)
    extra = []
    for s in curated[:n_synthetic]:
        labels = rewardseg.label_map_from_masks(myo_masks[s.source_id],
                                                s.predicted_scar_mask)
        extra.append((s.image, labels))
    return rewardseg.train_segmenter(real_records, seg_config, seed, extra_train=extra)


def _arm_name(kind: str, seed: int, n: int) -> str:
    return f"{kind}_s{seed}" if kind == "real" else f"{kind}{n}_s{seed}"


def _run_train_seg(config: ExperimentConfig) -> None:
    records = _cohort_manifest(config)
    curated = load_curated(config)
    out_dir = _stage_dir(config, "train-seg")
    arm_key = config_hash({"seg": asdict(config.downstream_seg),
                           "qc_hash": _hash_tree(_stage_dir(config, "qc"))})
    arms = [("real", s, 0) for s in config.seeds]
    arms += [("hybrid", s, n) for n in config.synthesis.n_targets for s in config.seeds]
    for kind, seed, n in arms:
        path = os.path.join(out_dir, _arm_name(kind, seed, n) + ".pt")
        sidecar = path + ".arm.json"
        key = config_hash({"arm": arm_key, "kind": kind, "seed": seed, "n": n})
        if os.path.exists(path) and os.path.exists(sidecar):
            with open(sidecar) as fh:
                if json.load(fh).get("key") == key:
                    continue  # cached arm
        ckpt = hybrid_train(records, curated, n, config.downstream_seg, seed)
        rewardseg.save_segmenter(ckpt, path)
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump({"key": key}, fh)


def _downstream_metrics(ckpt, records: list[ManifestRecord]) -> dict:
    """Test-split scar segmentation and patient-level detection metrics."""
    test = [r for r in records if r.split == "test"]
    dices, tp_dices = [], []
    per_patient_areas: dict[str, list] = {}
    per_patient_label: dict[str, bool] = {}
    for rec in test:
        image, myo, scar = _load_record(rec)
        _, label_map = rewardseg.segment(ckpt, image)
        pred = label_map == 2
        d = evalqc.dice(pred, scar)
        dices.append(d)
        if pred.any():
            tp_dices.append(d)
        per_patient_areas.setdefault(rec.patient_id, []).append(int(pred.sum()))
        per_patient_label[rec.patient_id] = (
            per_patient_label.get(rec.patient_id, False) or rec.is_positive)
    det = evalqc.patient_detection(per_patient_areas, per_patient_label)
    return {
        "dice": float(np.mean(dices)),
        "dice_tp_only": float(np.mean(tp_dices)) if tp_dices else 0.0,
        "accuracy": det["accuracy"],
        "balanced_accuracy": det["balanced_accuracy"],
        "confusion": det["confusion"],
    }


def _run_eval(config: ExperimentConfig) -> None:
    records = _cohort_manifest(config)
    out_dir = _stage_dir(config, "eval")
    seg_dir = _stage_dir(config, "train-seg")
    qc_dir = _stage_dir(config, "qc")
    synth_dir = _stage_dir(config, "synth")

    # Generation quality (vs the source negative images) over all candidates.
    with open(os.path.join(qc_dir, "qc_results.jsonl"), "r", encoding="utf-8") as fh:
        qc_rows = [json.loads(line) for line in fh if line.strip()]
    by_id = {r.id: r for r in records}
    sources = {}
    generated = []
    for row in qc_rows:
        rec = by_id[row["source_id"]]
        if rec.id not in sources:
            image, myo, _ = _load_record(rec)
            sources[rec.id] = (image, myo)
        img = load_image16(os.path.join(synth_dir, "images", f"{row['candidate_id']}.png"))
        pred = load_mask(os.path.join(qc_dir, "pred_masks", f"{row['candidate_id']}.png"))
        generated.append(evalqc.GeneratedSample(
            image=img, bundle_id=row["candidate_id"], predicted_scar_mask=pred,
            dice_vs_condition=row["dice"], passed=row["passed"], source_id=row["source_id"]))
    gen_report = evalqc.evaluate_generation(generated, sources)

    downstream = {}
    arms = [("real", s, 0) for s in config.seeds]
    arms += [("hybrid", s, n) for n in config.synthesis.n_targets for s in config.seeds]
    for kind, seed, n in arms:
        name = _arm_name(kind, seed, n)
        ckpt = rewardseg.load_segmenter(os.path.join(seg_dir, name + ".pt"))
        downstream[name] = _downstream_metrics(ckpt, records)

    metrics = {
        "generation": {
            "ssim_whole": list(gen_report.ssim_whole),
            "rmse_whole": list(gen_report.rmse_whole),
            "ssim_cropped": list(gen_report.ssim_cropped),
            "rmse_cropped": list(gen_report.rmse_cropped),
            "dice_tp_only": list(gen_report.dice_tp_only),
            "pass_pct": gen_report.pass_pct,
        },
        "downstream": downstream,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)


def _mean(values):
    return float(np.mean(values))


def _run_report(config: ExperimentConfig) -> None:
    with open(os.path.join(_stage_dir(config, "eval"), "metrics.json")) as fh:
        metrics = json.load(fh)
    out_dir = _stage_dir(config, "report")
    os.makedirs(out_dir, exist_ok=True)
    g = metrics["generation"]
    ds = metrics["downstream"]
    lines = []

    lines.append("Generation quality and conditioning alignment")
    header = ["SSIM(w)", "RMSE(w)", "SSIM(c)", "RMSE(c)", "Dice-TP", "Pass%"]
    lines.append(f"{'Experiment':<16}" + "".join(f"{h:>16}" for h in header))
    report = evalqc.MetricsReport(
        ssim_whole=tuple(g["ssim_whole"]), rmse_whole=tuple(g["rmse_whole"]),
        ssim_cropped=tuple(g["ssim_cropped"]), rmse_cropped=tuple(g["rmse_cropped"]),
        dice_tp_only=tuple(g["dice_tp_only"]), pass_pct=g["pass_pct"])
    lines.append(evalqc.render_generation_row("LGESynthLab", report))
    lines.append("")

    lines.append("Downstream scar segmentation (test split, mean over seeds "
                 f"{list(config.seeds)}; confusion [TN, FP, FN, TP] from first seed)")
    cols = ["Dice", "Dice-TP", "Accuracy", "Bal.Acc", "Confusion"]
    lines.append(f"{'Experiment':<24}" + "".join(f"{c:>14}" for c in cols))
    table_rows = []

    def arm_row(label, kind, n):
        per_seed = [ds[_arm_name(kind, s, n)] for s in config.seeds]
        conf = per_seed[0]["confusion"]
        row = [label,
               f"{_mean([m['dice'] for m in per_seed]):.3f}",
               f"{_mean([m['dice_tp_only'] for m in per_seed]):.3f}",
               f"{_mean([m['accuracy'] for m in per_seed]):.3f}",
               f"{_mean([m['balanced_accuracy'] for m in per_seed]):.3f}",
               str(conf)]
        table_rows.append(row)
        return f"{label:<24}" + "".join(f"{c:>14}" for c in row[1:])

    lines.append(arm_row("Real images only", "real", 0))
    for n in config.synthesis.n_targets:
        lines.append(arm_row(f"Real + {n} synthetic", "hybrid", n))
    lines.append("")
    lines.append("Effect of increasing synthetic samples")
    lines.append(f"{'N samples':<24}" + "".join(f"{c:>14}" for c in cols))
    for n in config.synthesis.n_targets:
        per_seed = [ds[_arm_name("hybrid", s, n)] for s in config.seeds]
        row = [f"{_mean([m['dice'] for m in per_seed]):.3f}",
               f"{_mean([m['dice_tp_only'] for m in per_seed]):.3f}",
               f"{_mean([m['accuracy'] for m in per_seed]):.3f}",
               f"{_mean([m['balanced_accuracy'] for m in per_seed]):.3f}",
               str(per_seed[0]["confusion"])]
        lines.append(f"{str(n):<24}" + "".join(f"{c:>14}" for c in row))

    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write("experiment,dice,dice_tp_only,accuracy,balanced_accuracy,confusion\n")
        for row in table_rows:
            fh.write(",".join([row[0]] + row[1:5] + ['"' + row[5] + '"']) + "\n")


_STAGE_FN = {
    "cohort": _run_cohort,
    "train-ae": _run_train_ae,
    "train-base": _run_train_base,
    "train-control": _run_train_control,
    "synth": _run_synth,
    "qc": _run_qc,
    "train-seg": _run_train_seg,
    "eval": _run_eval,
    "report": _run_report,
}

_STAGE_CONFIG_KEYS = {
    "cohort": ("phantom_spec", "cohort", "seed"),
    "train-ae": ("gen", "seed"),
    "train-base": ("gen", "seed"),
    "train-control": ("gen", "reward", "reward_seg", "seed"),
    "synth": ("synthesis", "seed"),
    "qc": (),
    "train-seg": ("downstream_seg", "seeds", "synthesis"),
    "eval": ("seeds", "synthesis"),
    "report": ("seeds", "synthesis"),
}


def _stage_inputs_hash(config: ExperimentConfig, stage: str, ledger: RunLedger) -> str:
    cfg = {k: asdict(getattr(config, k)) if dataclasses.is_dataclass(getattr(config, k))
           else getattr(config, k) for k in _STAGE_CONFIG_KEYS[stage]}
    idx = STAGES.index(stage)
    upstream = {}
    for dep in STAGES[:idx]:
        entry = ledger.latest(dep)
        if entry is None:
            raise ValueError(f"missing upstream stage: {dep}")
        upstream[dep] = entry.outputs_hash
    return config_hash({"stage": stage, "config": cfg, "upstream": upstream})


def run_stage(stage: str, config: ExperimentConfig) -> LedgerEntry:
    """Execute one stage (or replay it as a no-op when its inputs are
    unchanged and its artifacts verify); returns the ledger entry."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage: {stage}")
    ledger = RunLedger(config.out_root)
    idx = STAGES.index(stage)
    # verify upstream artifacts have not gone stale
    for dep in STAGES[:idx]:
        entry = ledger.latest(dep)
        if entry is None:
            raise ValueError(f"missing upstream stage: {dep}")
        if _hash_tree(_stage_dir(config, dep)) != entry.outputs_hash:
            raise ValueError(f"stale artifact for stage {dep}")
    inputs_hash = _stage_inputs_hash(config, stage, ledger)
    prev = ledger.latest(stage)
    if prev is not None and prev.inputs_hash == inputs_hash:
        if _hash_tree(_stage_dir(config, stage)) == prev.outputs_hash:
            return prev  # replay is a no-op
    t0 = time.monotonic()
    # start from a clean slate so files from a previous configuration cannot
    # leak into the outputs hash; train-seg keeps its per-arm cache
    stage_dir = _stage_dir(config, stage)
    if stage != "train-seg" and os.path.isdir(stage_dir):
        shutil.rmtree(stage_dir)
    _STAGE_FN[stage](config)
    entry = LedgerEntry(stage=stage, inputs_hash=inputs_hash,
                        outputs_hash=_hash_tree(_stage_dir(config, stage)),
                        wall_time=time.monotonic() - t0, seed=config.seed)
    ledger.append(entry)
    return entry


def run_all(config: ExperimentConfig) -> list[LedgerEntry]:
    return [run_stage(stage, config) for stage in STAGES]
