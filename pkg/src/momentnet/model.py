"""End-to-end moment retrieval network.

Pipeline per sample: project clip/query features to a shared width, pool the
query, reform text tokens onto the clip timeline, context-encode the clips,
rescale them by per-clip relevance, denoise through offset re-sampling, then
jointly encode both modalities and read out confidence and boundary offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import AblationFlags, RunConfig
from .denoise import ContextDenoiser
from .disentangle import (ContextEncoder, disentangle, relevance_scores,
                          video_guided_text)
from .grounding import Localizer, PredictionHeads
from .primitives import MultiHeadAttention, WeightedPool


@dataclass
class ModelOutput:
    video_tokens: torch.Tensor        # (..., T, dim) projected clips
    text_tokens: torch.Tensor         # (..., L, dim) projected query tokens
    query_global: torch.Tensor        # (..., 1, dim) pooled query
    guided_text: torch.Tensor         # (..., T, dim) text reformed per clip
    context_tokens: torch.Tensor      # (..., T, dim) context-encoded clips
    relevance: torch.Tensor           # (..., T) per-clip alignment scores
    disentangled: torch.Tensor        # (..., T, dim) relevance-scaled clips
    denoised: torch.Tensor            # (..., T, dim) input to the localizer
    offsets: torch.Tensor | None      # (..., T_r) learned grid displacements
    positions: torch.Tensor | None    # (..., T_r) final sampling positions
    clip_tokens: torch.Tensor         # (..., T, dim) localizer clip output
    confidence: torch.Tensor          # (..., T) in (0, 1)
    boundary: torch.Tensor            # (..., T, 2) non-negative offsets


class MomentNet(nn.Module):
    def __init__(self, video_dim: int, query_dim: int, dim: int = 64, heads: int = 4,
                 localizer_depth: int = 2, downsample_factor: int = 4,
                 offset_kernel: int = 3, depthwise_offsets: bool = True,
                 drop_rate: float = 0.1, flags: AblationFlags = AblationFlags(),
                 generator: torch.Generator | None = None):
        super().__init__()
        self.flags = flags
        self.video_dim = video_dim
        self.query_dim = query_dim
        self.generator = generator
        self.video_proj = nn.Linear(video_dim, dim)
        self.query_proj = nn.Linear(query_dim, dim)
        self.query_pool = WeightedPool(dim)
        self.text_guide = MultiHeadAttention(dim, heads)
        self.context = ContextEncoder(dim, heads, drop_rate, generator)
        self.denoiser = ContextDenoiser(dim, heads, downsample_factor,
                                        offset_kernel, depthwise_offsets)
        self.localizer = Localizer(dim, heads, localizer_depth, drop_rate, generator)
        self.predictor = PredictionHeads(dim)

    @classmethod
    def from_config(cls, cfg: RunConfig, video_dim: int, query_dim: int,
                    generator: torch.Generator | None = None) -> "MomentNet":
        return cls(
            video_dim=video_dim,
            query_dim=query_dim,
            dim=cfg.dim,
            heads=cfg.heads,
            localizer_depth=cfg.localizer_depth,
            downsample_factor=cfg.downsample_factor,
            offset_kernel=cfg.offset_kernel,
            depthwise_offsets=cfg.depthwise_offsets,
            drop_rate=cfg.drop_path,
            flags=cfg.flags(),
            generator=generator,
        )

    def forward(self, video, query, with_offsets: bool = True) -> ModelOutput:
        video_tokens = self.video_proj(video)
        text_tokens = self.query_proj(query)
        query_global = self.query_pool(text_tokens)
        guided_text = video_guided_text(video_tokens, text_tokens, self.text_guide)
        context_tokens = self.context(video_tokens, text_tokens)
        relevance = relevance_scores(context_tokens, query_global, guided_text)
        if self.flags.relevance_mul:
            disentangled = disentangle(context_tokens, relevance)
        else:
            disentangled = context_tokens
        offsets = positions = None
        if self.flags.cdd:
            den = self.denoiser(disentangled, query_global, with_offsets=with_offsets)
            denoised, offsets, positions = den.denoised, den.offsets, den.positions
        else:
            denoised = disentangled
        clip_tokens, _ = self.localizer(denoised, text_tokens)
        confidence, boundary = self.predictor(clip_tokens)
        return ModelOutput(
            video_tokens=video_tokens,
            text_tokens=text_tokens,
            query_global=query_global,
            guided_text=guided_text,
            context_tokens=context_tokens,
            relevance=relevance,
            disentangled=disentangled,
            denoised=denoised,
            offsets=offsets,
            positions=positions,
            clip_tokens=clip_tokens,
            confidence=confidence,
            boundary=boundary,
        )

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
