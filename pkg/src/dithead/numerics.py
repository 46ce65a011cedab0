"""Tensor primitives with reverse-mode differentiation.

All arrays are ``torch.Tensor``; torch's autograd tape records each forward pass
and is released after ``backward``.  The functions here are the differentiable
building blocks used by the autoencoders and the transformer, with explicit
shape validation and the numerical guards the models rely on (max-subtracted
softmax, epsilon inside layer normalisation).

Precision is global: 32-bit for training, 64-bit for gradient checks.  The
initial mode is read from ``DITHEAD_PRECISION`` (``f32`` or ``f64``).
"""

from __future__ import annotations

import contextlib
import hashlib
import math
import os
from typing import Callable, Iterable, Iterator, Sequence

import torch
import torch.nn.functional as F

from .errors import DimensionError, NumericError, ParameterError

Tensor = torch.Tensor

LAYERNORM_EPS = 1e-5

_PRECISIONS = {"f32": torch.float32, "f64": torch.float64}


def set_precision(mode: str) -> None:
    """Switch the global floating point mode (``"f32"`` or ``"f64"``)."""
    if mode not in _PRECISIONS:
        raise ParameterError(f"precision must be one of {sorted(_PRECISIONS)}, got {mode!r}")
    torch.set_default_dtype(_PRECISIONS[mode])


def get_dtype() -> torch.dtype:
    return torch.get_default_dtype()


@contextlib.contextmanager
def precision(mode: str) -> Iterator[None]:
    previous = torch.get_default_dtype()
    set_precision(mode)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


set_precision(os.environ.get("DITHEAD_PRECISION", "f32"))


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a tensor in the current precision mode."""
    return torch.as_tensor(data, dtype=get_dtype()).clone().requires_grad_(requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    if a.dim() < 2 or b.dim() < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # shift by the (detached) max; the gradient is shift-invariant
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def layernorm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    d = x.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and tuple(p.shape) != (d,):
            raise DimensionError(f"layernorm {name} has shape {tuple(p.shape)}, expected ({d},)")
    mean = x.mean(dim=-1, keepdim=True)
    centred = x - mean
    var = (centred * centred).mean(dim=-1, keepdim=True)
    out = centred / torch.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if weight.dim() != 2 or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input {tuple(x.shape)} incompatible with weight {tuple(weight.shape)}")
    out = x @ weight.transpose(0, 1)
    if bias is not None:
        if tuple(bias.shape) != (weight.shape[0],):
            raise DimensionError(f"linear: bias {tuple(bias.shape)} does not match weight {tuple(weight.shape)}")
        out = out + bias
    return out


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation on channel-first input (N, C, H, W) with kernels (O, C, kh, kw)."""
    if x.dim() != 4 or kernels.dim() != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernels, got {tuple(x.shape)}, {tuple(kernels.shape)}")
    if x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, kernels expect {kernels.shape[1]}")
    if stride < 1:
        raise ParameterError("conv2d stride must be >= 1")
    if x.shape[2] + 2 * padding < kernels.shape[2] or x.shape[3] + 2 * padding < kernels.shape[3]:
        raise DimensionError("conv2d kernel larger than padded input")
    return F.conv2d(x, kernels, bias, stride=stride, padding=padding)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 2.0**-17,
    eps: float = 1e-6,
    coords: Sequence[int] | None = None,
) -> float:
    """Compare autograd against central differences.

    Returns ``max_i |g_i - n_i| / (|g_i| + |n_i| + eps)`` over the checked flat
    coordinates ``coords`` (all coordinates by default), where ``g`` is the
    analytic gradient of the scalar ``f(x)`` and ``n`` the central difference
    with half-width ``step``.
    """
    x0 = x.detach().clone()
    xg = x0.clone().requires_grad_(True)
    out = f(xg)
    if out.numel() != 1:
        raise DimensionError("grad_check needs a scalar-valued function")
    (analytic,) = torch.autograd.grad(out.reshape(()), xg, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(x0)
    analytic = analytic.reshape(-1)
    if not torch.isfinite(out).all() or not torch.isfinite(analytic).all():
        raise NumericError("non-finite value in analytic pass")

    flat = x0.reshape(-1)
    idx = range(flat.numel()) if coords is None else coords
    worst = 0.0
    with torch.no_grad():
        for i in idx:
            saved = flat[i].item()
            flat[i] = saved + step
            up = f(x0).item()
            flat[i] = saved - step
            down = f(x0).item()
            flat[i] = saved
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"non-finite value at coordinate {i}")
            numeric = (up - down) / (2.0 * step)
            a = analytic[i].item()
            err = abs(a - numeric) / (abs(a) + abs(numeric) + eps)
            worst = max(worst, err)
    return worst


def parameter_checksum(named: Iterable[tuple[str, Tensor]]) -> str:
    """SHA-256 over parameter names and raw bytes; order-sensitive."""
    h = hashlib.sha256()
    for name, p in named:
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
