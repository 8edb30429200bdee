"""Torch network definitions: latent autoencoder, latent denoising U-Net,
the zero-initialized control branch and the dense-block segmenter.

Everything is sized for 64x64 single-channel images and 4x16x16 latents.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

LATENT_CHANNELS = 4
LATENT_DOWNSAMPLE = 4
COND_DIM = 64
CAPTION_DIM = 32


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal timestep embedding (t is a float tensor of shape [B])."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ConvAutoencoder(nn.Module):
    """1x64x64 image <-> 4x16x16 latent."""

    def __init__(self, width: int = 48):
        super().__init__()
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(1, w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(2 * w, LATENT_CHANNELS, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(LATENT_CHANNELS, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, w, 3, padding=1), nn.SiLU(),
            nn.Conv2d(w, 1, 3, padding=1),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(z))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, cond_dim: int = COND_DIM):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, c_in) if c_in % 8 == 0 else nn.GroupNorm(1, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.cond = nn.Linear(cond_dim, c_out)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond(cond)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class DenoiserUNet(nn.Module):
    """Small eps-prediction U-Net over 4x16x16 latents with two resolutions.

    Control features, when given, are added after each encoder stage and at
    the bottleneck (the fusion layers on the control side are zero-initialized,
    so an untrained control branch leaves the output unchanged).
    """

    def __init__(self, base: int = 48, in_channels: int = LATENT_CHANNELS):
        super().__init__()
        self.base = base
        self.time_mlp = nn.Sequential(
            nn.Linear(COND_DIM, COND_DIM), nn.SiLU(), nn.Linear(COND_DIM, COND_DIM))
        self.caption_proj = nn.Linear(CAPTION_DIM, COND_DIM)
        self.enc1 = ResBlock(in_channels, base)
        self.down = nn.Conv2d(base, base, 3, stride=2, padding=1)
        self.enc2 = ResBlock(base, 2 * base)
        self.mid = ResBlock(2 * base, 2 * base)
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.dec1 = ResBlock(3 * base, base)
        self.out_norm = nn.GroupNorm(8, base)
        self.out_conv = nn.Conv2d(base, LATENT_CHANNELS, 3, padding=1)

    def conditioning(self, t: torch.Tensor, caption_emb: torch.Tensor) -> torch.Tensor:
        return self.time_mlp(timestep_embedding(t, COND_DIM)) + self.caption_proj(caption_emb)

    def forward(self, x: torch.Tensor, t: torch.Tensor, caption_emb: torch.Tensor,
                control: tuple | None = None) -> torch.Tensor:
        cond = self.conditioning(t, caption_emb)
        h1 = self.enc1(x, cond)
        if control is not None:
            h1 = h1 + control[0]
        h2 = self.enc2(self.down(h1), cond)
        if control is not None:
            h2 = h2 + control[1]
        m = self.mid(h2, cond)
        if control is not None:
            m = m + control[2]
        d = self.dec1(torch.cat([self.up(m), h1], dim=1), cond)
        return self.out_conv(F.silu(self.out_norm(d)))


class ControlBranch(nn.Module):
    """Trainable copy of the denoiser encoder path consuming the spatial
    conditioning (masked-image latent + pooled edge map) stacked with x_t;
    emits per-resolution features through zero-initialized 1x1 convolutions."""

    def __init__(self, base: int = 48):
        super().__init__()
        in_ch = LATENT_CHANNELS + LATENT_CHANNELS + 1  # x_t + masked latent + edge
        self.enc1 = ResBlock(in_ch, base)
        self.down = nn.Conv2d(base, base, 3, stride=2, padding=1)
        self.enc2 = ResBlock(base, 2 * base)
        self.mid = ResBlock(2 * base, 2 * base)
        self.zero1 = nn.Conv2d(base, base, 1)
        self.zero2 = nn.Conv2d(2 * base, 2 * base, 1)
        self.zero3 = nn.Conv2d(2 * base, 2 * base, 1)
        for z in (self.zero1, self.zero2, self.zero3):
            nn.init.zeros_(z.weight)
            nn.init.zeros_(z.bias)

    @classmethod
    def from_denoiser(cls, denoiser: DenoiserUNet) -> "ControlBranch":
        branch = cls(base=denoiser.base)
        # copy weights where shapes match (the first conv differs in input channels)
        src = denoiser.state_dict()
        dst = branch.state_dict()
        for k in dst:
            if k in src and src[k].shape == dst[k].shape:
                dst[k] = src[k].clone()
        branch.load_state_dict(dst)
        return branch

    def forward(self, x: torch.Tensor, hint: torch.Tensor, cond: torch.Tensor) -> tuple:
        h1 = self.enc1(torch.cat([x, hint], dim=1), cond)
        h2 = self.enc2(self.down(h1), cond)
        m = self.mid(h2, cond)
        return (self.zero1(h1), self.zero2(h2), self.zero3(m))


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(8 if channels % 8 == 0 else 1, channels)


class DenseBlock(nn.Module):
    """Pre-activation dense layers: each conv sees all previous features."""

    def __init__(self, c_in: int, growth: int, layers: int):
        super().__init__()
        self.norms = nn.ModuleList(
            [_group_norm(c_in + i * growth) for i in range(layers)])
        self.convs = nn.ModuleList(
            [nn.Conv2d(c_in + i * growth, growth, 3, padding=1) for i in range(layers)])
        self.out_channels = c_in + layers * growth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for norm, conv in zip(self.norms, self.convs):
            feats.append(conv(F.silu(norm(torch.cat(feats, dim=1)))))
        return torch.cat(feats, dim=1)


class DenseSegNet(nn.Module):
    """Dense-block encoder-decoder with 5 down-sampling levels and a 3-class
    softmax head (background / myocardium / scar)."""

    N_LEVELS = 5

    def __init__(self, growth: int = 8, block_layers: int = 2, stem: int = 16):
        super().__init__()
        self.stem = nn.Conv2d(1, stem, 3, padding=1)
        ch = stem
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        skips = []
        for _ in range(self.N_LEVELS):
            block = DenseBlock(ch, growth, block_layers)
            self.enc_blocks.append(block)
            skips.append(block.out_channels)
            self.downs.append(nn.Conv2d(block.out_channels, block.out_channels, 3,
                                        stride=2, padding=1))
            ch = block.out_channels
        self.mid = DenseBlock(ch, growth, block_layers)
        ch = self.mid.out_channels
        self.up_convs = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for skip_ch in reversed(skips):
            self.up_convs.append(nn.Conv2d(ch, skip_ch, 3, padding=1))
            block = DenseBlock(2 * skip_ch, growth, 1)
            self.dec_blocks.append(block)
            ch = block.out_channels
        self.head_norm = _group_norm(ch)
        self.head = nn.Conv2d(ch, 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Returns per-pixel class probabilities, shape [B, 3, H, W]."""
        if x.shape[-1] % 2**self.N_LEVELS or x.shape[-2] % 2**self.N_LEVELS:
            raise ValueError("pad to multiple of 32 first")
        h = F.silu(self.stem(x))
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            h = block(h)
            skips.append(h)
            h = F.silu(down(h))
        h = self.mid(h)
        for up, block, skip in zip(self.up_convs, self.dec_blocks, reversed(skips)):
            h = F.silu(up(F.interpolate(h, scale_factor=2, mode="nearest")))
            h = block(torch.cat([h, skip], dim=1))
        return torch.softmax(self.head(F.silu(self.head_norm(h))), dim=1)
