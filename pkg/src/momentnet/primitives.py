"""Differentiable building blocks shared by every model stage.

All sequence ops accept tensors shaped (..., T, dim): the trailing two axes
are time and features, any leading axes are broadcast batch dims. Analytic
gradients come from autograd; ``grad_check`` verifies them against central
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with per-head projections.

    query: (..., Tq, dim), key/value: (..., Tk, dim) -> (..., Tq, dim).
    Softmax runs over key positions, heads are concatenated and output-projected.
    """

    def __init__(self, dim: int, heads: int, bias: bool = True):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_query = nn.Linear(dim, dim, bias=bias)
        self.to_key = nn.Linear(dim, dim, bias=bias)
        self.to_value = nn.Linear(dim, dim, bias=bias)
        self.to_out = nn.Linear(dim, dim, bias=bias)

    def _split_heads(self, x):
        # (..., T, dim) -> (..., heads, T, head_dim)
        return x.unflatten(-1, (self.heads, self.head_dim)).transpose(-3, -2)

    def forward(self, query, key, value, need_weights: bool = False):
        if query.shape[-1] != self.dim or key.shape[-1] != self.dim or value.shape[-1] != self.dim:
            raise ValueError("feature dim mismatch with attention module")
        if key.shape[-2] != value.shape[-2]:
            raise ValueError("key and value must have the same number of rows")
        q = self._split_heads(self.to_query(query))
        k = self._split_heads(self.to_key(key))
        v = self._split_heads(self.to_value(value))
        logits = q @ k.transpose(-1, -2) * self.scale
        weights = torch.softmax(logits, dim=-1)      # (..., heads, Tq, Tk)
        out = weights @ v
        out = out.transpose(-3, -2).flatten(-2)
        out = self.to_out(out)
        if need_weights:
            return out, weights
        return out


class WeightedPool(nn.Module):
    """Learned softmax pooling of (..., L, dim) token rows into (..., 1, dim)."""

    def __init__(self, dim: int):
        super().__init__()
        self.scorer = nn.Linear(dim, 1)

    def forward(self, tokens):
        if tokens.shape[-2] == 0:
            raise ValueError("cannot pool an empty token sequence")
        weights = torch.softmax(self.scorer(tokens).squeeze(-1), dim=-1)
        return weights.unsqueeze(-2) @ tokens


class TimeConv1d(nn.Module):
    """1-D convolution along the time axis of (..., T, channels) tensors.

    Odd kernels only; same padding, so the output has ceil(T / stride) steps.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, bias: bool = True, depthwise: bool = False):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        if depthwise and in_channels != out_channels:
            raise ValueError("depthwise conv requires in_channels == out_channels")
        self.conv = nn.Conv1d(
            in_channels, out_channels, kernel_size,
            stride=stride, padding=kernel_size // 2,
            groups=in_channels if depthwise else 1, bias=bias,
        )

    def forward(self, x):
        lead = x.shape[:-2]
        steps, channels = x.shape[-2:]
        out = self.conv(x.reshape(-1, steps, channels).transpose(-1, -2)).transpose(-1, -2)
        return out.reshape(*lead, *out.shape[-2:])


def cosine_sim(a, b, dim: int = -1):
    """Cosine similarity along ``dim``, clamped to [-1, 1]. Zero vectors raise."""
    norm_a = torch.linalg.vector_norm(a, dim=dim)
    norm_b = torch.linalg.vector_norm(b, dim=dim)
    if (norm_a == 0).any() or (norm_b == 0).any():
        raise ValueError("cosine similarity undefined for zero vectors")
    return torch.clamp((a * b).sum(dim=dim) / (norm_a * norm_b), -1.0, 1.0)


def drop_path(x, rate: float, training: bool, generator=None):
    """Stochastic depth: zero the whole (..., T, dim) slab per batch element.

    Identity when not training or rate == 0; surviving slabs are rescaled by
    1 / (1 - rate).
    """
    if rate < 0 or rate >= 1:
        raise ValueError(f"drop rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = 1.0 - rate
    shape = x.shape[:-2] + (1, 1)
    mask = (torch.rand(shape, generator=generator, device=x.device) < keep).to(x.dtype)
    return x * mask / keep


class DropPath(nn.Module):
    def __init__(self, rate: float, generator=None):
        super().__init__()
        if rate < 0 or rate >= 1:
            raise ValueError(f"drop rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.generator = generator

    def forward(self, x):
        return drop_path(x, self.rate, self.training, self.generator)


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sin/cos position table of shape (length, dim)."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype)
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(length, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq[: dim // 2])
    return table


@dataclass
class GradCheckResult:
    per_tensor: dict[str, float]

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0


def grad_check(fn, wrt, eps: float = 1e-5) -> GradCheckResult:
    """Compare autograd gradients of a scalar against central finite differences.

    Args:
        fn: nullary callable recomputing the scalar loss from current values.
        wrt: dict name -> leaf tensor (requires_grad, float64 recommended).
        eps: finite-difference step.

    Returns per-tensor max relative error, with the denominator floored at 1
    so near-zero gradients are compared absolutely.
    """
    tensors = dict(wrt)
    loss = fn()
    if loss.dim() != 0:
        raise ValueError("grad_check needs a scalar-valued fn")
    if not torch.isfinite(loss):
        raise ValueError("non-finite loss at the evaluation point")
    grads = torch.autograd.grad(loss, list(tensors.values()), allow_unused=True)

    errors = {}
    for (name, tensor), grad in zip(tensors.items(), grads):
        analytic = torch.zeros_like(tensor) if grad is None else grad
        worst = 0.0
        with torch.no_grad():
            flat = tensor.view(-1)
            flat_grad = analytic.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                a = flat_grad[i].item()
                if not (math.isfinite(fd) and math.isfinite(a)):
                    raise ValueError(f"non-finite gradient for {name}[{i}]")
                worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
        errors[name] = worst
    return GradCheckResult(errors)


def module_grad_check(fn, module: nn.Module, inputs=(), eps: float = 1e-5) -> GradCheckResult:
    """grad_check over a module's named parameters plus optional named inputs."""
    wrt = {name: p for name, p in module.named_parameters()}
    wrt.update(inputs)
    return grad_check(fn, wrt, eps=eps)
