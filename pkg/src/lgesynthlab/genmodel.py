"""Latent diffusion generator: noise schedule, forward/one-step-inverse
diffusion math, closed-vocabulary caption embedding, two-phase training
(autoencoder + base denoiser, then reward-guided control branch) and the
deterministic classifier-free-guided sampler.

Phase 2 trains only the control branch; the autoencoder, the base denoiser
and the caption token table stay frozen (the token table plays the role of a
frozen pretrained text encoder: fixed, distinct random vectors per token).
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import rewardseg
from .ckptio import config_hash, load_checkpoint, save_checkpoint
from .condition import ConditioningBundle
from .networks import (CAPTION_DIM, LATENT_CHANNELS, LATENT_DOWNSAMPLE,
                       ControlBranch, ConvAutoencoder, DenoiserUNet)
from .scarscript import CONSTANT_CAPTION, WALL_VOCABULARY, Caption, parse_caption

BETA_START = 1e-4
BETA_END = 2e-2
DEFAULT_T = 1000

CAPTION_TOKENS = (
    "subendocardial", "midwall", "subepicardial", "transmural",
    *WALL_VOCABULARY,
    "<constant>",
)


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray


@dataclass
class RewardConfig:
    t_thresh: int = 200
    lambda_reward: float = 1.0

    def __post_init__(self):
        if self.t_thresh < 0:
            raise ValueError("t_thresh must be >= 0")
        if self.lambda_reward < 0:
            raise ValueError("lambda_reward must be >= 0")


@dataclass
class LossBreakdown:
    step: int
    t: int
    diffusion_loss: float
    reward_loss: float
    total: float


@dataclass
class GenConfig:
    ae_width: int = 48
    ae_lr: float = 2e-3
    ae_max_epochs: int = 400
    ae_error_ceiling: float = 0.02  # held-out mean per-pixel abs error
    denoiser_base: int = 48
    T: int = DEFAULT_T
    base_epochs: int = 60
    control_epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16
    caption_dropout: float = 0.5


@dataclass
class GeneratorCheckpoint:
    autoencoder: ConvAutoencoder
    denoiser: DenoiserUNet | None
    control: ControlBranch | None
    embedder: torch.Tensor  # [n_tokens, CAPTION_DIM] token table
    schedule: NoiseSchedule
    latent_scale: float
    config: GenConfig
    config_hash: str
    seed: int
    epoch: int
    loss_log: list = field(default_factory=list)


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    if kind != "linear":
        raise ValueError(f"unknown schedule kind: {kind}")
    beta = np.linspace(BETA_START, BETA_END, T)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def q_sample(x0, t: int, eps, sched: NoiseSchedule):
    """Forward corruption x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps."""
    if not 1 <= t <= sched.T:
        raise ValueError("t out of range")
    ab = float(sched.alpha_bar[t - 1])
    return x0 * ab**0.5 + eps * (1.0 - ab) ** 0.5


def predict_x0(x_t, eps_hat, t: int, sched: NoiseSchedule):
    """One-step clean estimate x0 = (x_t - sqrt(1-abar_t) eps_hat)/sqrt(abar_t)."""
    if not 1 <= t <= sched.T:
        raise ValueError("t out of range")
    ab = float(sched.alpha_bar[t - 1])
    return (x_t - eps_hat * (1.0 - ab) ** 0.5) / ab**0.5


def make_embedder(seed: int) -> torch.Tensor:
    """Fixed random token table; distinct unit-scale vectors per token."""
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(len(CAPTION_TOKENS), CAPTION_DIM, generator=gen)


def _caption_tokens(caption: Caption) -> list[str]:
    if caption.mode == "constant" or caption.text == CONSTANT_CAPTION:
        return ["<constant>"]
    parsed = parse_caption(caption.text)
    return [parsed.descriptors.layer_descriptor] + list(parsed.descriptors.walls)


def embed_caption(embedder: torch.Tensor, caption: Caption, drop: bool) -> torch.Tensor:
    """Sum of token vectors for the caption's layer and wall words; the null
    embedding (all zeros) when dropped."""
    if drop:
        return torch.zeros(CAPTION_DIM)
    vecs = []
    for tok in _caption_tokens(caption):
        if tok not in CAPTION_TOKENS:
            raise ValueError(f"unknown descriptor token: {tok!r}")
        vecs.append(embedder[CAPTION_TOKENS.index(tok)])
    return torch.stack(vecs).sum(dim=0)


def _image_batches(images: list, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(images))
    for start in range(0, len(images), batch_size):
        idx = order[start : start + batch_size]
        yield torch.as_tensor(
            np.stack([images[i] for i in idx]), dtype=torch.float32)[:, None]


def train_autoencoder(train_images: list, val_images: list, config: GenConfig,
                      seed: int) -> GeneratorCheckpoint:
    """Phase-1a: fit the latent autoencoder until the held-out mean per-pixel
    error drops below the configured ceiling."""
    if not train_images:
        raise ValueError("empty training set")
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xAE])
    ae = ConvAutoencoder(width=config.ae_width)
    opt = torch.optim.Adam(ae.parameters(), lr=config.ae_lr)
    val = torch.as_tensor(np.stack(val_images), dtype=torch.float32)[:, None]

    err = float("inf")
    epoch = -1
    for epoch in range(config.ae_max_epochs):
        ae.train()
        for batch in _image_batches(train_images, config.batch_size, rng):
            loss = F.mse_loss(ae(batch), batch)
            opt.zero_grad()
            loss.backward()
            opt.step()
        ae.eval()
        with torch.no_grad():
            err = float((ae(val) - val).abs().mean())
        if err <= config.ae_error_ceiling:
            break
    else:
        raise RuntimeError(
            f"autoencoder failed to reach error ceiling {config.ae_error_ceiling}: "
            f"final held-out error {err:.4f}")

    ae.eval()
    with torch.no_grad():
        lat = ae.encode(torch.as_tensor(np.stack(train_images), dtype=torch.float32)[:, None])
        latent_scale = float(lat.std())
    sched = make_schedule(config.T)
    return GeneratorCheckpoint(
        autoencoder=ae, denoiser=None, control=None, embedder=make_embedder(seed),
        schedule=sched, latent_scale=latent_scale, config=config,
        config_hash=config_hash(asdict(config)), seed=seed, epoch=epoch)


def encode_latent(ckpt: GeneratorCheckpoint, images: torch.Tensor) -> torch.Tensor:
    return ckpt.autoencoder.encode(images) / ckpt.latent_scale


def decode_latent(ckpt: GeneratorCheckpoint, latents: torch.Tensor) -> torch.Tensor:
    return ckpt.autoencoder.decode(latents * ckpt.latent_scale)


def train_base(ckpt: GeneratorCheckpoint, train_images: list, config: GenConfig,
               seed: int) -> GeneratorCheckpoint:
    """Phase-1b: unconditional eps-prediction training of the base denoiser
    on frozen-autoencoder latents (null caption embedding, no control)."""
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xBA5E])
    for p in ckpt.autoencoder.parameters():
        p.requires_grad_(False)
    with torch.no_grad():
        latents = encode_latent(
            ckpt, torch.as_tensor(np.stack(train_images), dtype=torch.float32)[:, None])
    denoiser = DenoiserUNet(base=config.denoiser_base)
    opt = torch.optim.Adam(denoiser.parameters(), lr=config.lr)
    sched = ckpt.schedule
    ab = torch.as_tensor(sched.alpha_bar, dtype=torch.float32)
    n = latents.shape[0]
    null_emb = torch.zeros(CAPTION_DIM)
    gen = torch.Generator().manual_seed(seed + 1)

    epoch = -1
    for epoch in range(config.base_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size].copy())
            x0 = latents[idx]
            b = x0.shape[0]
            t = torch.randint(1, sched.T + 1, (b,), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            abt = ab[t - 1][:, None, None, None]
            x_t = x0 * abt.sqrt() + eps * (1.0 - abt).sqrt()
            eps_hat = denoiser(x_t, t.float(), null_emb.expand(b, -1))
            loss = F.mse_loss(eps_hat, eps)
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite base diffusion loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
    denoiser.eval()
    ckpt.denoiser = denoiser
    ckpt.epoch = epoch
    return ckpt


def bundle_hint(ckpt: GeneratorCheckpoint, bundle: ConditioningBundle) -> torch.Tensor:
    """Spatial conditioning: masked-image latent stacked with the edge map
    average-pooled to latent resolution. Shape [5, H/f, W/f]."""
    with torch.no_grad():
        masked = torch.as_tensor(bundle.masked_image, dtype=torch.float32)[None, None]
        lat = encode_latent(ckpt, masked)[0]
    edge = torch.as_tensor(bundle.edge_map.astype(np.float32))[None, None]
    pooled = F.avg_pool2d(edge, LATENT_DOWNSAMPLE)[0]
    return torch.cat([lat, pooled], dim=0)


def train_controlled(ckpt: GeneratorCheckpoint, bundles: list, images: dict,
                     reward_model: rewardseg.SegmenterCheckpoint,
                     reward_cfg: RewardConfig, config: GenConfig, seed: int,
                     log_path: str | None = None) -> GeneratorCheckpoint:
    """Phase-2: reward-guided training of the control branch only.

    bundles: ConditioningBundles built from positive training images;
    images: source_id -> full positive image (the generation target).
    One timestep t is drawn per optimizer step; for t <= t_thresh the
    one-step clean estimate is decoded and scored by the frozen reward
    segmenter with per-pixel cross-entropy against the bundle's target mask.
    """
    if ckpt.denoiser is None:
        raise ValueError("base denoiser must be trained first")
    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xC751])
    gen = torch.Generator().manual_seed(seed + 2)
    for module in (ckpt.autoencoder, ckpt.denoiser, reward_model.model):
        for p in module.parameters():
            p.requires_grad_(False)
    control = ControlBranch.from_denoiser(ckpt.denoiser)
    opt = torch.optim.Adam(control.parameters(), lr=config.lr)
    sched = ckpt.schedule

    x0s, hints, embs = [], [], []
    with torch.no_grad():
        for b in bundles:
            img = torch.as_tensor(images[b.source_id], dtype=torch.float32)[None, None]
            x0s.append(encode_latent(ckpt, img)[0])
            hints.append(bundle_hint(ckpt, b))
            embs.append(embed_caption(ckpt.embedder, b.caption, drop=False))
    x0s = torch.stack(x0s)
    hints = torch.stack(hints)
    embs = torch.stack(embs)
    targets = torch.as_tensor(
        np.stack([b.target_scar_mask for b in bundles]).astype(np.float32))

    log: list[LossBreakdown] = []
    n = len(bundles)
    step = 0
    for _ in range(config.control_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size].copy())
            x0 = x0s[idx]
            bsz = x0.shape[0]
            t = int(rng.integers(1, sched.T + 1))  # shared t per step
            eps = torch.randn(x0.shape, generator=gen)
            x_t = q_sample(x0, t, eps, sched)
            drop = torch.rand(bsz, generator=gen) < config.caption_dropout
            emb = torch.where(drop[:, None], torch.zeros_like(embs[idx]), embs[idx])
            tt = torch.full((bsz,), float(t))
            cond = ckpt.denoiser.conditioning(tt, emb)
            ctrl = control(x_t, hints[idx], cond)
            eps_hat = ckpt.denoiser(x_t, tt, emb, control=ctrl)
            diffusion_loss = F.mse_loss(eps_hat, eps)
            if t <= reward_cfg.t_thresh:
                x0_hat = predict_x0(x_t, eps_hat, t, sched)
                decoded = decode_latent(ckpt, x0_hat)
                probs = reward_model.model(decoded)
                reward_loss = rewardseg.cross_entropy_reward(probs[:, 2], targets[idx])
                total = diffusion_loss + reward_cfg.lambda_reward * reward_loss
            else:
                reward_loss = torch.zeros(())
                total = diffusion_loss
            if not torch.isfinite(total):
                raise RuntimeError(f"non-finite loss at step {step}, t={t}")
            opt.zero_grad()
            total.backward()
            opt.step()
            log.append(LossBreakdown(step=step, t=t,
                                     diffusion_loss=float(diffusion_loss.detach()),
                                     reward_loss=float(reward_loss.detach()),
                                     total=float(total.detach())))
            step += 1
    control.eval()
    ckpt.control = control
    if log_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "t", "diffusion_loss", "reward_loss", "total"])
            for row in log:
                writer.writerow([row.step, row.t, row.diffusion_loss,
                                 row.reward_loss, row.total])
    ckpt.loss_log = log
    return ckpt


def sample(ckpt: GeneratorCheckpoint, bundle: ConditioningBundle, n_steps: int = 10,
           guidance_scale: float = 9.0, seed: int = 0) -> np.ndarray:
    """Deterministic sampler over a uniform stride of timesteps with
    classifier-free guidance on the caption (spatial conditioning active in
    both branches). Pure function of (ckpt, bundle, n_steps, scale, seed)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if ckpt.denoiser is None:
        raise ValueError("incomplete checkpoint")
    sched = ckpt.schedule
    ts = np.unique(np.round(np.linspace(sched.T, 1, n_steps)).astype(int))[::-1]
    gen = torch.Generator().manual_seed(seed)
    lat_h = bundle.masked_image.shape[0] // LATENT_DOWNSAMPLE
    lat_w = bundle.masked_image.shape[1] // LATENT_DOWNSAMPLE
    x = torch.randn(1, LATENT_CHANNELS, lat_h, lat_w, generator=gen)
    hint = bundle_hint(ckpt, bundle)[None]
    emb_c = embed_caption(ckpt.embedder, bundle.caption, drop=False)[None]
    emb_u = torch.zeros_like(emb_c)

    def eps_pred(x_t, t, emb):
        tt = torch.full((1,), float(t))
        ctrl = None
        if ckpt.control is not None:
            cond = ckpt.denoiser.conditioning(tt, emb)
            ctrl = ckpt.control(x_t, hint, cond)
        return ckpt.denoiser(x_t, tt, emb, control=ctrl)

    with torch.no_grad():
        for i, t in enumerate(ts):
            if guidance_scale == 1.0:
                eps = eps_pred(x, t, emb_c)
            elif guidance_scale == 0.0:
                eps = eps_pred(x, t, emb_u)
            else:
                eps_u = eps_pred(x, t, emb_u)
                eps_c = eps_pred(x, t, emb_c)
                eps = eps_u + guidance_scale * (eps_c - eps_u)
            x0_hat = predict_x0(x, eps, int(t), sched)
            if i + 1 < len(ts):
                ab_next = float(sched.alpha_bar[ts[i + 1] - 1])
                x = x0_hat * ab_next**0.5 + eps * (1.0 - ab_next) ** 0.5
            else:
                x = x0_hat
        image = decode_latent(ckpt, x).clamp(0.0, 1.0)
    return image[0, 0].numpy()


def save_generator(ckpt: GeneratorCheckpoint, path: str) -> None:
    save_checkpoint(path, {
        "autoencoder": ckpt.autoencoder.state_dict(),
        "denoiser": None if ckpt.denoiser is None else ckpt.denoiser.state_dict(),
        "control": None if ckpt.control is None else ckpt.control.state_dict(),
        "embedder": ckpt.embedder,
        "latent_scale": ckpt.latent_scale,
        "config": asdict(ckpt.config),
    }, sidecar={
        "config_hash": ckpt.config_hash, "epoch": ckpt.epoch, "seed": ckpt.seed,
        "frozen_components": ["autoencoder", "denoiser", "embedder"],
        "schedule_params": {"T": ckpt.schedule.T, "kind": "linear",
                            "beta_start": BETA_START, "beta_end": BETA_END},
    })


def load_generator(path: str) -> GeneratorCheckpoint:
    payload, sidecar = load_checkpoint(path)
    config = GenConfig(**payload["config"])
    ae = ConvAutoencoder(width=config.ae_width)
    ae.load_state_dict(payload["autoencoder"])
    ae.eval()
    denoiser = None
    if payload["denoiser"] is not None:
        denoiser = DenoiserUNet(base=config.denoiser_base)
        denoiser.load_state_dict(payload["denoiser"])
        denoiser.eval()
    control = None
    if payload["control"] is not None:
        control = ControlBranch(base=config.denoiser_base)
        control.load_state_dict(payload["control"])
        control.eval()
    return GeneratorCheckpoint(
        autoencoder=ae, denoiser=denoiser, control=control,
        embedder=payload["embedder"], schedule=make_schedule(config.T),
        latent_scale=payload["latent_scale"], config=config,
        config_hash=sidecar["config_hash"], seed=sidecar["seed"],
        epoch=sidecar["epoch"])
