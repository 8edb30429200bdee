"""Scar/myocardium segmenter used as frozen reward model, QC oracle and
downstream task model.

Losses accept torch tensors (for gradients) or numpy arrays (returning
floats). Class ids: 0 background, 1 myocardium, 2 scar.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from scipy import ndimage

from . import evalqc
from .ckptio import config_hash, load_checkpoint, save_checkpoint
from .manifest import ManifestRecord, load_image16, load_mask
from .networks import DenseSegNet

JACCARD_SMOOTH = 1e-6
PROB_CLAMP = 1e-7
DEFAULT_ELASTIC_STRENGTH = 2.0  # peak displacement, pixels


@dataclass
class SegTrainConfig:
    epochs: int = 200
    initial_lr: float = 0.001
    batch_size: int = 16
    growth: int = 8
    block_layers: int = 2
    stem: int = 16
    augment: bool = True
    elastic_strength: float = DEFAULT_ELASTIC_STRENGTH

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.initial_lr < 0:
            raise ValueError("learning rate must be >= 0")


@dataclass
class SegmenterCheckpoint:
    model: DenseSegNet
    config: SegTrainConfig
    config_hash: str
    seed: int
    selected_epoch: int
    val_history: list = field(default_factory=list)  # (epoch, dice, sens, spec)


def _to_tensor(x):
    if isinstance(x, torch.Tensor):
        return x, True
    return torch.as_tensor(np.asarray(x)), False


def jaccard_loss(pred_probs, target):
    """1 - mean soft Jaccard over foreground classes, smoothing 1e-6.

    pred_probs: [C,H,W] or [B,C,H,W] probabilities; target: integer label map
    of matching spatial shape.
    """
    p, was_tensor = _to_tensor(pred_probs)
    t, _ = _to_tensor(target)
    if p.dim() == 3:
        p = p[None]
        t = t[None]
    if p.shape[0] != t.shape[0] or p.shape[-2:] != t.shape[-2:]:
        raise ValueError("prediction/target shapes differ")
    n_classes = p.shape[1]
    losses = []
    for c in range(1, n_classes):
        pc = p[:, c]
        tc = (t == c).to(pc.dtype)
        inter = (pc * tc).sum()
        union = pc.sum() + tc.sum() - inter
        losses.append((inter + JACCARD_SMOOTH) / (union + JACCARD_SMOOTH))
    loss = 1.0 - torch.stack(losses).mean()
    return loss if was_tensor else float(loss)


def cross_entropy_reward(pred_scar_prob, target):
    """Mean binary cross-entropy of the scar probability against a binary
    mask, probabilities clamped at 1e-7."""
    p, was_tensor = _to_tensor(pred_scar_prob)
    t, _ = _to_tensor(target)
    if p.shape != t.shape:
        raise ValueError("prediction/target shapes differ")
    p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = t.to(p.dtype)
    loss = -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()
    return loss if was_tensor else float(loss)


def elastic_augment(image, masks, strength: float, seed: int):
    """Apply one shared smooth displacement field: bilinear on the image,
    nearest on every mask. strength is the peak displacement in pixels."""
    if strength < 0:
        raise ValueError("strength must be >= 0")
    image = np.asarray(image)
    masks = [np.asarray(m) for m in masks]
    if strength == 0:
        return image.copy(), [m.copy() for m in masks]
    rng = np.random.default_rng(seed)
    h, w = image.shape
    field_ = ndimage.gaussian_filter(rng.standard_normal((2, h, w)), sigma=(0, 8, 8),
                                     mode="reflect")
    peak = np.abs(field_).max()
    if peak > 0:
        field_ = field_ / peak * strength
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + field_[0], xx + field_[1]]
    out_img = ndimage.map_coordinates(image.astype(np.float64), coords, order=1,
                                      mode="reflect").astype(image.dtype)
    out_masks = [ndimage.map_coordinates(m, coords, order=0, mode="reflect") for m in masks]
    return out_img, out_masks


def _geometric_augment(image, labels, rng):
    """Flips, 90-degree rotations and a +/-10% isotropic scale."""
    if rng.uniform() < 0.5:
        image, labels = image[:, ::-1], labels[:, ::-1]
    if rng.uniform() < 0.5:
        image, labels = image[::-1, :], labels[::-1, :]
    k = int(rng.integers(4))
    image, labels = np.rot90(image, k), np.rot90(labels, k)
    scale = rng.uniform(0.9, 1.1)
    if abs(scale - 1.0) > 1e-3:
        h, w = image.shape
        zi = ndimage.zoom(image.astype(np.float64), scale, order=1)
        zl = ndimage.zoom(labels, scale, order=0)
        out_i = np.zeros_like(image, dtype=np.float64)
        out_l = np.zeros_like(labels)
        if scale > 1.0:
            sy = (zi.shape[0] - h) // 2
            sx = (zi.shape[1] - w) // 2
            out_i = zi[sy : sy + h, sx : sx + w]
            out_l = zl[sy : sy + h, sx : sx + w]
        else:
            ty = (h - zi.shape[0]) // 2
            tx = (w - zi.shape[1]) // 2
            out_i[ty : ty + zi.shape[0], tx : tx + zi.shape[1]] = zi
            out_l[ty : ty + zl.shape[0], tx : tx + zl.shape[1]] = zl
        image, labels = out_i.astype(np.float32), out_l
    return np.ascontiguousarray(image), np.ascontiguousarray(labels)


def label_map_from_masks(myo_mask, scar_mask) -> np.ndarray:
    labels = np.zeros(np.asarray(myo_mask).shape, dtype=np.uint8)
    labels[np.asarray(myo_mask, dtype=bool)] = 1
    labels[np.asarray(scar_mask, dtype=bool)] = 2
    return labels


def examples_from_manifest(records: list[ManifestRecord], split: str) -> list[tuple]:
    """(image, label_map) pairs for one split of a real-image manifest."""
    out = []
    for rec in records:
        if rec.split != split:
            continue
        image = load_image16(rec.image_path)
        myo = load_mask(rec.myo_mask_path)
        scar = load_mask(rec.scar_mask_path)
        out.append((image, label_map_from_masks(myo, scar)))
    return out


def _val_metrics(model, val_examples, device="cpu"):
    """Scar Dice (mean per image), pixel sensitivity and specificity over
    the validation split."""
    dices = []
    tp = fn = tn = fp = 0
    model.eval()
    with torch.no_grad():
        for image, labels in val_examples:
            probs = model(torch.as_tensor(image, dtype=torch.float32)[None, None])[0]
            pred = probs.argmax(dim=0).numpy()
            pred_scar = pred == 2
            true_scar = labels == 2
            dices.append(evalqc.dice(pred_scar, true_scar))
            tp += int((pred_scar & true_scar).sum())
            fn += int((~pred_scar & true_scar).sum())
            fp += int((pred_scar & ~true_scar).sum())
            tn += int((~pred_scar & ~true_scar).sum())
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return float(np.mean(dices)), sens, spec


def train_segmenter(records: list[ManifestRecord], config: SegTrainConfig, seed: int,
                    extra_train: list[tuple] | None = None) -> SegmenterCheckpoint:
    """Train on the manifest's train split (plus optional extra synthetic
    (image, label_map) examples) with Jaccard loss, geometric and elastic
    augmentation and cosine-annealed Adam; select the epoch maximizing the
    unweighted mean of validation scar Dice, sensitivity and specificity."""
    train_ex = examples_from_manifest(records, "train") + list(extra_train or [])
    val_ex = examples_from_manifest(records, "val")
    if not train_ex or not val_ex:
        raise ValueError("manifest must provide non-empty train and val splits")
    for name, exs in (("train", train_ex), ("val", val_ex)):
        pos = sum((lab == 2).any() for _, lab in exs)
        if pos == 0 or pos == len(exs):
            raise ValueError(f"{name} split needs at least one positive and one negative image")

    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0x5E6])
    model = DenseSegNet(growth=config.growth, block_layers=config.block_layers,
                        stem=config.stem)
    opt = torch.optim.Adam(model.parameters(), lr=config.initial_lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs)

    best_score = -1.0
    best_state = None
    best_epoch = -1
    history = []
    n = len(train_ex)
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            imgs, labs = [], []
            for i in idx:
                image, labels = train_ex[i]
                if config.augment:
                    image, labels = _geometric_augment(image, labels, rng)
                    if rng.uniform() < 0.5:
                        image, (labels,) = elastic_augment(
                            image, [labels], config.elastic_strength,
                            int(rng.integers(2**31)))
                imgs.append(image)
                labs.append(labels.astype(np.int64))
            x = torch.as_tensor(np.stack(imgs), dtype=torch.float32)[:, None]
            t = torch.as_tensor(np.stack(labs))
            probs = model(x)
            loss = jaccard_loss(probs, t)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        d, se, sp = _val_metrics(model, val_ex)
        history.append((epoch, d, se, sp))
        score = (d + se + sp) / 3.0
        if score > best_score:
            best_score = score
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch
    model.load_state_dict(best_state)
    model.eval()
    cfg_hash = config_hash(asdict(config))
    return SegmenterCheckpoint(model=model, config=config, config_hash=cfg_hash,
                               seed=seed, selected_epoch=best_epoch, val_history=history)


def segment(ckpt: SegmenterCheckpoint, image) -> tuple[np.ndarray, np.ndarray]:
    """Pure inference: (scar probability map, argmax label map)."""
    image = np.asarray(image, dtype=np.float32)
    if image.shape[0] % 32 or image.shape[1] % 32:
        raise ValueError("pad to multiple of 32 first")
    ckpt.model.eval()
    with torch.no_grad():
        probs = ckpt.model(torch.as_tensor(image)[None, None])[0]
    return probs[2].numpy(), probs.argmax(dim=0).numpy().astype(np.uint8)


def save_segmenter(ckpt: SegmenterCheckpoint, path: str) -> None:
    save_checkpoint(path, {
        "state_dict": ckpt.model.state_dict(),
        "config": asdict(ckpt.config),
        "val_history": ckpt.val_history,
    }, sidecar={
        "config_hash": ckpt.config_hash, "seed": ckpt.seed,
        "selected_epoch": ckpt.selected_epoch,
        "frozen_components": [], "schedule_params": None,
    })


def load_segmenter(path: str) -> SegmenterCheckpoint:
    payload, sidecar = load_checkpoint(path)
    config = SegTrainConfig(**payload["config"])
    model = DenseSegNet(growth=config.growth, block_layers=config.block_layers,
                        stem=config.stem)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return SegmenterCheckpoint(model=model, config=config,
                               config_hash=sidecar["config_hash"], seed=sidecar["seed"],
                               selected_epoch=sidecar["selected_epoch"],
                               val_history=[tuple(v) for v in payload["val_history"]])
