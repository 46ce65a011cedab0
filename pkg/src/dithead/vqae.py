"""Vector-quantised autoencoders mapping (H, W, 3) images to an (H/f, W/f, 3) code grid.

Two instances are trained in stage 1: one on clean frames (encoder + the decoder
used for final output) and one on masked frames (its decoder only serves its own
reconstruction objective and is discarded afterwards).

Public functions take channels-last images, batched ``(B, H, W, 3)`` or single
``(H, W, 3)``; the convolution stack runs channel-first internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import numerics
from .errors import DimensionError, ParameterError, StateError

Tensor = torch.Tensor
LATENT_CHANNELS = 3


@dataclass(frozen=True)
class VqaeConfig:
    downsample: int = 4
    codebook_size: int = 512
    channels: int = 64
    base_channels: int = 32
    commitment: float = 0.25

    def __post_init__(self):
        f = self.downsample
        if f < 1 or (f & (f - 1)):
            raise ParameterError(f"downsample factor must be a power of two, got {f}")
        if self.codebook_size < 1:
            raise ParameterError("codebook_size must be positive")


@dataclass
class QuantizedLatent:
    indices: Tensor  # (..., h, w) int64
    latent: Tensor  # (..., h, w, 3), straight-through
    pre_quant: Tensor  # (..., h, w, 3)


class Conv(nn.Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1):
        super().__init__()
        self.stride = stride
        self.padding = (k - 1) // 2 if stride == 1 else (k - stride) // 2
        self.weight = nn.Parameter(torch.empty(cout, cin, k, k))
        self.bias = nn.Parameter(torch.zeros(cout))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    def forward(self, x: Tensor) -> Tensor:
        return numerics.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ResBlock(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.c1 = Conv(c, c, 3)
        self.c2 = Conv(c, c, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.c2(numerics.gelu(self.c1(numerics.gelu(x))))


def _widths(cfg: VqaeConfig) -> list[int]:
    """Channel width at each resolution level, full resolution first."""
    n = int(math.log2(cfg.downsample))
    return [cfg.base_channels if i < n else cfg.channels for i in range(n + 1)]


class Encoder(nn.Module):
    def __init__(self, cfg: VqaeConfig):
        super().__init__()
        w = _widths(cfg)
        self.stem = Conv(3, w[0], 3)
        self.down = nn.ModuleList(Conv(w[i], w[i + 1], 4, stride=2) for i in range(len(w) - 1))
        self.res = nn.ModuleList([ResBlock(w[-1]), ResBlock(w[-1])])
        self.out = Conv(w[-1], LATENT_CHANNELS, 1)

    def forward(self, x: Tensor) -> Tensor:
        h = numerics.gelu(self.stem(x))
        for d in self.down:
            h = numerics.gelu(d(h))
        for r in self.res:
            h = r(h)
        return self.out(numerics.gelu(h))


class Decoder(nn.Module):
    def __init__(self, cfg: VqaeConfig):
        super().__init__()
        w = _widths(cfg)[::-1]
        self.stem = Conv(LATENT_CHANNELS, w[0], 3)
        self.res = nn.ModuleList([ResBlock(w[0]), ResBlock(w[0])])
        self.up = nn.ModuleList(Conv(w[i], w[i + 1], 3) for i in range(len(w) - 1))
        self.refine = ResBlock(w[-1])
        self.out = Conv(w[-1], 3, 3)

    def forward(self, z: Tensor) -> Tensor:
        h = self.stem(z)
        for r in self.res:
            h = r(h)
        for u in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = numerics.gelu(u(h))
        h = self.refine(h)
        return self.out(numerics.gelu(h))


def _to_nchw(x: Tensor) -> Tensor:
    return x.permute(0, 3, 1, 2)


def _to_nhwc(x: Tensor) -> Tensor:
    return x.permute(0, 2, 3, 1)


def _batched(x: Tensor, ndim: int) -> tuple[Tensor, bool]:
    if x.dim() == ndim - 1:
        return x.unsqueeze(0), True
    if x.dim() != ndim:
        raise DimensionError(f"expected {ndim - 1}-d or {ndim}-d input, got shape {tuple(x.shape)}")
    return x, False


def quantize(pre_quant: Tensor, codebook: Tensor) -> tuple[Tensor, Tensor]:
    """Nearest codebook entry per cell (ties -> lowest index), straight-through gradient."""
    if codebook.shape[0] == 0:
        raise StateError("codebook is empty")
    if pre_quant.shape[-1] != codebook.shape[1]:
        raise DimensionError(f"cell width {pre_quant.shape[-1]} != codebook width {codebook.shape[1]}")
    flat = pre_quant.detach().reshape(-1, codebook.shape[1])
    cb = codebook.detach()
    # exact squared distances; torch.argmin returns the first minimum
    d = ((flat[:, None, :] - cb[None, :, :]) ** 2).sum(-1) if flat.shape[0] * cb.shape[0] <= 4_000_000 else None
    if d is None:
        idx = torch.cat([((chunk[:, None, :] - cb[None]) ** 2).sum(-1).argmin(1) for chunk in flat.split(4096)])
    else:
        idx = d.argmin(dim=1)
    indices = idx.reshape(pre_quant.shape[:-1])
    selected = codebook[indices]
    # forward value is exactly the codebook entry; gradient passes to pre_quant
    latent = selected.detach() + (pre_quant - pre_quant.detach())
    return indices, latent


class VQAutoencoder(nn.Module):
    def __init__(self, cfg: VqaeConfig = VqaeConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.codebook = nn.Parameter(torch.empty(cfg.codebook_size, LATENT_CHANNELS).uniform_(-1.0, 1.0))
        self.register_buffer("usage_counts", torch.zeros(cfg.codebook_size, dtype=torch.int64))

    @property
    def f(self) -> int:
        return self.cfg.downsample

    def encode_continuous(self, images: Tensor) -> Tensor:
        """(B, H, W, 3) -> pre-quantisation latents (B, h, w, 3)."""
        B, H, W, C = images.shape
        if C != 3:
            raise DimensionError(f"images need 3 channels, got {C}")
        if H % self.f or W % self.f:
            raise ParameterError(f"image size {H}x{W} not divisible by f={self.f}")
        return _to_nhwc(self.encoder(_to_nchw(images)))

    def decode_raw(self, latent: Tensor) -> Tensor:
        if latent.dim() != 4 or latent.shape[-1] != LATENT_CHANNELS:
            raise DimensionError(f"latent must be (B, h, w, 3), got {tuple(latent.shape)}")
        return _to_nhwc(self.decoder(_to_nchw(latent)))

    def forward(self, images: Tensor) -> tuple[Tensor, QuantizedLatent]:
        pre = self.encode_continuous(images)
        indices, latent = quantize(pre, self.codebook)
        return self.decode_raw(latent), QuantizedLatent(indices, latent, pre)

    def record_usage(self, indices: Tensor) -> None:
        self.usage_counts += torch.bincount(indices.reshape(-1), minlength=self.cfg.codebook_size)

    @torch.no_grad()
    def reseed_dead_codes(self, pre_quant: Tensor, generator: torch.Generator | None = None) -> int:
        """Move never-used entries onto random encoder outputs; resets usage counts."""
        dead = (self.usage_counts == 0).nonzero().reshape(-1)
        if len(dead):
            pool = pre_quant.detach().reshape(-1, LATENT_CHANNELS)
            pick = torch.randint(pool.shape[0], (len(dead),), generator=generator)
            self.codebook[dead] = pool[pick].to(self.codebook.dtype)
        self.usage_counts.zero_()
        return int(len(dead))


def encode(image: Tensor, model: VQAutoencoder) -> QuantizedLatent:
    """Encode and quantise a (H, W, 3) or (B, H, W, 3) image in [-1, 1]."""
    x, single = _batched(torch.as_tensor(image, dtype=model.codebook.dtype), 4)
    pre = model.encode_continuous(x)
    indices, latent = quantize(pre, model.codebook)
    if single:
        return QuantizedLatent(indices[0], latent[0], pre[0])
    return QuantizedLatent(indices, latent, pre)


def decode(latent: Tensor, model: VQAutoencoder) -> Tensor:
    """Decode (h, w, 3) or (B, h, w, 3) latents; output clamped to [-1, 1]."""
    z, single = _batched(latent, 4)
    if z.shape[-1] != LATENT_CHANNELS:
        raise DimensionError(f"latent must have 3 channels, got {tuple(latent.shape)}")
    out = model.decode_raw(z).clamp(-1.0, 1.0)
    return out[0] if single else out


@dataclass
class VqaeLoss:
    reconstruction: Tensor
    codebook: Tensor
    commitment: Tensor
    total: Tensor


def vqae_loss(image: Tensor, reconstruction: Tensor, pre_quant: Tensor, latent: Tensor, commitment: float = 0.25) -> VqaeLoss:
    """L1 reconstruction + codebook + commitment terms (means over elements).

    ``latent`` holds the selected codebook entries (with gradient to the codebook);
    pass ``codebook[indices]`` rather than the straight-through output.
    """
    if image.shape != reconstruction.shape or pre_quant.shape != latent.shape:
        raise DimensionError("vqae_loss operand shapes disagree")
    rec = (image - reconstruction).abs().mean()
    cb = ((pre_quant.detach() - latent) ** 2).sum(-1).mean()
    com = commitment * ((pre_quant - latent.detach()) ** 2).sum(-1).mean()
    return VqaeLoss(rec, cb, com, rec + cb + com)


def codebook_usage_fraction(model: VQAutoencoder, images: Tensor, batch: int = 64) -> float:
    """Fraction of codebook entries selected at least once over ``images``."""
    used = torch.zeros(model.cfg.codebook_size, dtype=torch.bool)
    with torch.no_grad():
        for chunk in images.split(batch):
            q = encode(chunk, model)
            used[q.indices.reshape(-1)] = True
    return float(used.float().mean())


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    return model


def latent_grid_shape(H: int, W: int, f: int) -> tuple[int, int, int]:
    if H % f or W % f:
        raise ParameterError(f"image size {H}x{W} not divisible by f={f}")
    return H // f, W // f, LATENT_CHANNELS


def as_tensor_images(images: np.ndarray | Tensor) -> Tensor:
    return torch.as_tensor(np.asarray(images), dtype=numerics.get_dtype())
