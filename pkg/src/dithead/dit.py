"""Diffusion transformer noise predictor eps(z_t, z_r, z_m, audio, t).

The noisy latent, reference latent and masked-frame latent are stacked
channel-wise (9 channels), cut into non-overlapping patches and embedded as
tokens with fixed 2-d sinusoidal positions.  Each block applies, with
pre-layernorm and a residual connection around each:

    self-attention over spatial tokens
    cross-attention: spatial tokens query a 2-token key/value sequence
                     [projected audio window, timestep embedding]
    feed-forward (GELU, ratio 4)

A final layernorm and zero-initialised linear map tokens back to 3-channel
patches.  Tensors are channels-last: latents are (B, h, w, 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import numerics
from .conditioning import FEATURE_DIM, WINDOW_FRAMES, AudioProjection, ConditionBundle, timestep_embedding
from .errors import DimensionError, ParameterError

Tensor = torch.Tensor


@dataclass(frozen=True)
class DiTConfig:
    patch_size: int = 2
    depth: int = 6
    heads: int = 8
    hidden: int = 256
    in_channels: int = 9
    out_channels: int = 3
    mlp_ratio: int = 4
    audio_dim: int = WINDOW_FRAMES * FEATURE_DIM

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ParameterError(f"hidden ({self.hidden}) must be divisible by heads ({self.heads})")
        if self.in_channels != 9:
            raise ParameterError("the denoiser input stacks three 3-channel latents (9 channels)")
        if self.hidden % 4:
            raise ParameterError("hidden must be divisible by 4 for 2-d positional embeddings")
        if min(self.patch_size, self.depth, self.heads) < 1:
            raise ParameterError("patch_size, depth and heads must be positive")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels


def concat_latents(z_t: Tensor, z_r: Tensor, z_m: Tensor) -> Tensor:
    """Stack (..., h, w, 3) latents into (..., h, w, 9) in the order (z_t, z_r, z_m)."""
    if not (z_t.shape == z_r.shape == z_m.shape) or z_t.shape[-1] != 3:
        raise DimensionError(f"latents must share an (h, w, 3) shape: {tuple(z_t.shape)}, {tuple(z_r.shape)}, {tuple(z_m.shape)}")
    return torch.cat([z_t, z_r, z_m], dim=-1)


def patchify_raw(x: Tensor, p: int) -> Tensor:
    """(B, h, w, C) -> (B, (h/p)(w/p), p*p*C), patches in row-major grid order."""
    B, h, w, C = x.shape
    if h % p or w % p:
        raise ParameterError(f"latent {h}x{w} not divisible by patch size {p}")
    x = x.reshape(B, h // p, p, w // p, p, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (h // p) * (w // p), p * p * C)


def unpatchify_raw(tokens: Tensor, h: int, w: int, p: int, C: int) -> Tensor:
    B, N, D = tokens.shape
    if N != (h // p) * (w // p) or D != p * p * C:
        raise DimensionError(f"tokens {tuple(tokens.shape)} do not tile a {h}x{w}x{C} grid with patch {p}")
    x = tokens.reshape(B, h // p, w // p, p, p, C).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, h, w, C)


def sincos_pos_embed_2d(hidden: int, gh: int, gw: int) -> Tensor:
    """Fixed positional table (gh*gw, hidden): half the channels encode rows, half columns."""
    quarter = hidden // 4
    omega = 1.0 / 10_000 ** (np.arange(quarter, dtype=np.float64) / quarter)

    def enc(pos):
        out = np.outer(pos, omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    table = np.concatenate([enc(rows.reshape(-1)), enc(cols.reshape(-1))], axis=1)
    return torch.as_tensor(table, dtype=numerics.get_dtype())


class Linear(nn.Module):
    def __init__(self, din: int, dout: int, zero: bool = False):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(dout, din))
        self.bias = nn.Parameter(torch.zeros(dout))
        if zero:
            nn.init.zeros_(self.weight)
        else:
            nn.init.xavier_uniform_(self.weight)

    def forward(self, x: Tensor) -> Tensor:
        return numerics.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return numerics.layernorm(x, self.gain, self.bias)


class Attention(nn.Module):
    """Multi-head scaled dot-product attention; queries and keys/values may come from different sequences."""

    def __init__(self, hidden: int, heads: int):
        super().__init__()
        if hidden % heads:
            raise ParameterError(f"hidden ({hidden}) must be divisible by heads ({heads})")
        self.heads = heads
        self.q = Linear(hidden, hidden)
        self.k = Linear(hidden, hidden)
        self.v = Linear(hidden, hidden)
        self.o = Linear(hidden, hidden)

    def forward(self, x: Tensor, kv: Tensor) -> Tensor:
        B, N, D = x.shape
        if kv.dim() != 3 or kv.shape[0] != B or kv.shape[2] != D:
            raise DimensionError(f"key/value sequence {tuple(kv.shape)} incompatible with queries {tuple(x.shape)}")
        if kv.shape[1] == 0:
            raise ParameterError("key/value sequence is empty")
        hd = D // self.heads

        def split(t: Tensor) -> Tensor:
            return t.reshape(B, t.shape[1], self.heads, hd).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(kv)), split(self.v(kv))
        weights = numerics.softmax(numerics.matmul(q, k.transpose(-1, -2)) / math.sqrt(hd), axis=-1)
        out = numerics.matmul(weights, v).transpose(1, 2).reshape(B, N, D)
        return self.o(out)


def self_attention(tokens: Tensor, params: Attention) -> Tensor:
    return params(tokens, tokens)


def cross_attention(spatial_tokens: Tensor, kv_sequence: Tensor, params: Attention) -> Tensor:
    if kv_sequence.shape[1] == 0:
        raise ParameterError("key/value sequence is empty")
    return params(spatial_tokens, kv_sequence)


class DiTBlock(nn.Module):
    def __init__(self, cfg: DiTConfig):
        super().__init__()
        d = cfg.hidden
        self.norm1 = LayerNorm(d)
        self.attn = Attention(d, cfg.heads)
        self.norm2 = LayerNorm(d)
        self.cross = Attention(d, cfg.heads)
        self.norm3 = LayerNorm(d)
        self.fc1 = Linear(d, d * cfg.mlp_ratio)
        self.fc2 = Linear(d * cfg.mlp_ratio, d)

    def forward(self, x: Tensor, kv: Tensor) -> Tensor:
        x = x + self_attention(self.norm1(x), self.attn)
        x = x + cross_attention(self.norm2(x), kv, self.cross)
        return x + self.fc2(numerics.gelu(self.fc1(self.norm3(x))))


class DiT(nn.Module):
    def __init__(self, cfg: DiTConfig = DiTConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden
        self.patch_embed = Linear(cfg.patch_dim, d)
        self.audio_proj = AudioProjection(d, cfg.audio_dim)
        self.t_fc1 = Linear(d, d)
        self.t_fc2 = Linear(d, d)
        self.blocks = nn.ModuleList(DiTBlock(cfg) for _ in range(cfg.depth))
        self.final_norm = LayerNorm(d)
        self.final = Linear(d, cfg.patch_size * cfg.patch_size * cfg.out_channels, zero=True)

    def condition(self, audio_window: Tensor, t) -> ConditionBundle:
        """Project the audio window and embed the timestep; both become key/value tokens."""
        if audio_window.dim() == 1:
            audio_window = audio_window.unsqueeze(0)
        B = audio_window.shape[0]
        tt = torch.as_tensor(t).reshape(-1)
        if tt.numel() == 1 and B > 1:
            tt = tt.expand(B)
        t_emb = timestep_embedding(tt, self.cfg.hidden).to(audio_window.dtype)
        t_emb = self.t_fc2(numerics.gelu(self.t_fc1(t_emb)))
        return ConditionBundle(audio_window, self.audio_proj(audio_window), t_emb)

    def patchify(self, x: Tensor) -> Tensor:
        """Embedded patch tokens with positions added: (B, N, hidden)."""
        p = self.cfg.patch_size
        B, h, w, C = x.shape
        if C != self.cfg.in_channels:
            raise DimensionError(f"expected {self.cfg.in_channels} input channels, got {C}")
        tokens = self.patch_embed(patchify_raw(x, p))
        return tokens + sincos_pos_embed_2d(self.cfg.hidden, h // p, w // p).to(tokens.dtype)

    def forward(
        self,
        z_t: Tensor,
        z_r: Tensor,
        z_m: Tensor,
        audio_window: Tensor,
        t,
        trace: list | None = None,
    ) -> Tensor:
        """Predict the noise in ``z_t``; inputs are (B, h, w, 3) latents, (B, 363) audio, step(s) ``t``."""
        x = concat_latents(z_t, z_r, z_m)
        cond = self.condition(audio_window, t)
        return self.predict_from_condition(x, cond, trace)

    def predict_from_condition(self, x: Tensor, cond: ConditionBundle, trace: list | None = None) -> Tensor:
        B, h, w, _ = x.shape
        tokens = self.patchify(x)
        kv = cond.kv_sequence
        if trace is not None:
            trace.append(("input", tuple(x.shape)))
            trace.append(("tokens", tuple(tokens.shape)))
            trace.append(("kv", tuple(kv.shape)))
        for i, block in enumerate(self.blocks):
            tokens = block(tokens, kv)
            if trace is not None:
                trace.append((f"block{i}", tuple(tokens.shape)))
        out = self.final(self.final_norm(tokens))
        if trace is not None:
            trace.append(("head", tuple(out.shape)))
        eps = unpatchify_raw(out, h, w, self.cfg.patch_size, self.cfg.out_channels)
        if trace is not None:
            trace.append(("output", tuple(eps.shape)))
        return eps


def predict_noise(z_t: Tensor, z_r: Tensor, z_m: Tensor, condition: ConditionBundle, model: DiT) -> Tensor:
    """Full forward pass given a prepared condition bundle; accepts single (h, w, 3) latents too."""
    single = z_t.dim() == 3
    if single:
        z_t, z_r, z_m = z_t[None], z_r[None], z_m[None]
    eps = model.predict_from_condition(concat_latents(z_t, z_r, z_m), condition)
    return eps[0] if single else eps
