"""Context-aware dynamic denoising.

A strided reference grid over the clip timeline is displaced by learned,
query-conditioned offsets; clip features are re-sampled at the displaced
positions with a tent (linear-interpolation) kernel, and the original clips
attend into the sampled keys/values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .primitives import MultiHeadAttention, TimeConv1d


@dataclass(frozen=True)
class ReferenceGrid:
    """Strided window centers in clip-index coordinates plus a [-1, 1] view."""

    points: torch.Tensor        # (T_r,) centers of r-wide windows
    normalized: torch.Tensor    # (T_r,) affine image of points in [-1, 1]
    factor: int
    num_clips: int

    @property
    def size(self) -> int:
        return self.points.shape[0]


def make_reference_grid(num_clips: int, factor: int,
                        dtype=torch.float32, device=None) -> ReferenceGrid:
    """Grid of ceil(T / r) window centers; T is padded up to a multiple of r,
    so the last center can sit past T - 1 (sampling clamps it later)."""
    if factor < 1:
        raise ValueError(f"down-sample factor must be >= 1, got {factor}")
    if factor > num_clips:
        raise ValueError(f"down-sample factor {factor} exceeds clip count {num_clips}")
    steps = math.ceil(num_clips / factor)
    index = torch.arange(steps, dtype=dtype, device=device)
    points = index * factor + (factor - 1) / 2.0
    span = max(num_clips - 1, 1)
    normalized = 2.0 * points / span - 1.0
    return ReferenceGrid(points=points, normalized=normalized,
                         factor=factor, num_clips=num_clips)


class OffsetNetwork(nn.Module):
    """Lightweight conv stack mapping gated clip features to one offset per
    reference point, in clip-index units.

    Strided local conv -> GELU -> 1x1 conv. Both convs carry no bias, so an
    all-zero input can never leak a nonzero offset.
    """

    def __init__(self, dim: int, kernel_size: int, factor: int, depthwise: bool = True):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError(f"offset kernel size must be odd, got {kernel_size}")
        self.local = TimeConv1d(dim, dim, kernel_size, stride=factor,
                                bias=False, depthwise=depthwise)
        self.project = TimeConv1d(dim, 1, 1, bias=False)

    def forward(self, x):
        # (..., T, dim) -> (..., T_r)
        return self.project(F.gelu(self.local(x))).squeeze(-1)


def compute_offsets(projected_clips, query_global, grid: ReferenceGrid,
                    net: OffsetNetwork) -> torch.Tensor:
    """Offsets from the Hadamard product of projected clips with the broadcast
    pooled query. Output aligns one-to-one with the reference points."""
    gated = projected_clips * query_global
    offsets = net(gated)
    if offsets.shape[-1] != grid.size:
        raise ValueError(
            f"offset network produced {offsets.shape[-1]} offsets "
            f"for a grid of {grid.size} points"
        )
    return offsets


def interpolate_sample(features, positions) -> torch.Tensor:
    """Sample feature rows at fractional clip positions with a tent kernel.

    features: (..., T, dim); positions: (..., P) in clip-index coordinates,
    clamped to [0, T-1]. Each output row mixes at most the two adjacent clip
    rows with weights that sum to 1; integer positions return exact rows.
    """
    num_clips = features.shape[-2]
    pos = positions.clamp(0.0, float(num_clips - 1))
    low = pos.floor()
    frac = pos - low
    low_idx = low.long()
    high_idx = (low_idx + 1).clamp(max=num_clips - 1)

    def rows_at(idx):
        gather_idx = idx.unsqueeze(-1).expand(*idx.shape, features.shape[-1])
        return torch.gather(features, -2, gather_idx)

    low_rows = rows_at(low_idx)
    return low_rows + frac.unsqueeze(-1) * (rows_at(high_idx) - low_rows)


@dataclass
class DenoiserOutput:
    denoised: torch.Tensor      # (..., T, dim)
    offsets: torch.Tensor       # (..., T_r) learned displacements
    positions: torch.Tensor     # (..., T_r) final clamped sampling positions


class ContextDenoiser(nn.Module):
    """Query-conditioned re-sampling of clip features plus attention over the
    sampled keys/values.

    The clip features are linearly projected; offsets computed from the
    projected features gated by the pooled query displace the reference grid;
    tent-kernel sampling at the displaced positions yields the key/value rows.
    """

    def __init__(self, dim: int, heads: int, factor: int,
                 kernel_size: int = 3, depthwise_offsets: bool = True):
        super().__init__()
        self.factor = factor
        self.project_query = nn.Linear(dim, dim)
        self.offset_net = OffsetNetwork(dim, kernel_size, factor, depthwise_offsets)
        self.project_key = nn.Linear(dim, dim)
        self.project_value = nn.Linear(dim, dim)
        self.attention = MultiHeadAttention(dim, heads)

    def zero_init_offsets(self) -> None:
        """Zero the final offset projection so training starts on the plain grid."""
        with torch.no_grad():
            self.offset_net.project.conv.weight.zero_()

    def forward(self, clip_tokens, query_global, with_offsets: bool = True) -> DenoiserOutput:
        num_clips = clip_tokens.shape[-2]
        grid = make_reference_grid(num_clips, self.factor,
                                   dtype=clip_tokens.dtype, device=clip_tokens.device)
        projected = self.project_query(clip_tokens)
        if with_offsets:
            offsets = compute_offsets(projected, query_global, grid, self.offset_net)
        else:
            lead = clip_tokens.shape[:-2]
            offsets = torch.zeros(*lead, grid.size,
                                  dtype=clip_tokens.dtype, device=clip_tokens.device)
        positions = (grid.points + offsets).clamp(0.0, float(num_clips - 1))
        sampled = interpolate_sample(projected, positions)
        keys = self.project_key(sampled)
        values = self.project_value(sampled)
        denoised = self.attention(clip_tokens, keys, values)
        return DenoiserOutput(denoised=denoised, offsets=offsets, positions=positions)


def hit_fraction(positions, moment_start: float, moment_end: float) -> float:
    """Fraction of sampling positions lying within the moment's clip range.

    A position counts as inside when moment_start <= p <= moment_end - 1,
    i.e. it falls on the closed range of in-moment clip indices.
    """
    if positions.numel() == 0:
        raise ValueError("no sampling positions given")
    inside = (positions >= moment_start) & (positions <= moment_end - 1)
    return inside.double().mean().item()
