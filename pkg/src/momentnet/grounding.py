"""Cross-modal grounding: localizer encoder, prediction heads, detection
losses, and span decoding with non-maximum suppression."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .metrics import temporal_iou
from .primitives import DropPath, MultiHeadAttention, TimeConv1d, sinusoidal_positions


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward, residuals with drop path."""

    def __init__(self, dim: int, heads: int, drop_rate: float = 0.0, generator=None):
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )
        self.drop = DropPath(drop_rate, generator)

    def forward(self, x):
        normed = self.attn_norm(x)
        x = x + self.drop(self.attn(normed, normed, normed))
        x = x + self.drop(self.ffn(self.ffn_norm(x)))
        return x


class Localizer(nn.Module):
    """Joint encoder over the concatenation of clip and text tokens.

    Adds a learned per-modality embedding and fixed sinusoidal positions to
    the concatenated sequence, runs the encoder stack, and splits the output
    back into clip and text parts.
    """

    def __init__(self, dim: int, heads: int, depth: int,
                 drop_rate: float = 0.0, generator=None):
        super().__init__()
        self.modality = nn.Parameter(torch.zeros(2, dim))
        self.blocks = nn.ModuleList(
            EncoderBlock(dim, heads, drop_rate, generator) for _ in range(depth)
        )

    def forward(self, clip_tokens, text_tokens):
        num_clips = clip_tokens.shape[-2]
        x = torch.cat(
            [clip_tokens + self.modality[0], text_tokens + self.modality[1]], dim=-2
        )
        pos = sinusoidal_positions(x.shape[-2], x.shape[-1], dtype=x.dtype).to(x.device)
        x = x + pos
        for block in self.blocks:
            x = block(x)
        return x[..., :num_clips, :], x[..., num_clips:, :]


class PredictionHeads(nn.Module):
    """Two 3-layer conv heads over clip tokens: sigmoid confidence in (0, 1)
    and softplus (left, right) boundary offsets, never negative."""

    def __init__(self, dim: int):
        super().__init__()
        self.confidence = nn.Sequential(
            TimeConv1d(dim, dim, 3), nn.GELU(),
            TimeConv1d(dim, dim, 3), nn.GELU(),
            TimeConv1d(dim, 1, 1),
        )
        self.boundary = nn.Sequential(
            TimeConv1d(dim, dim, 3), nn.GELU(),
            TimeConv1d(dim, dim, 3), nn.GELU(),
            TimeConv1d(dim, 2, 1),
        )

    def forward(self, clip_tokens):
        conf = torch.sigmoid(self.confidence(clip_tokens).squeeze(-1))   # (..., T)
        offsets = F.softplus(self.boundary(clip_tokens))                 # (..., T, 2)
        return conf, offsets


def focal_loss(confidence, positive_mask, gamma: float = 2.0,
               weight: float = 1.0) -> torch.Tensor:
    """Mean over clips of -weight * (1 - p_t)^gamma * log(p_t), where p_t is
    the probability assigned to the clip's true in/out-of-moment label.

    Confidence is clamped to (0, 1) at 1e-7; an all-negative mask is valid.
    """
    p = confidence.clamp(1e-7, 1.0 - 1e-7)
    p_t = torch.where(positive_mask, p, 1.0 - p)
    return (-weight * (1.0 - p_t) ** gamma * torch.log(p_t)).mean()


def giou_1d(pred_spans, gt_spans) -> torch.Tensor:
    """Generalized IoU of 1-D spans (..., 2); IoU minus the enclosing-hull
    penalty, in (-1, 1]."""
    pred_len = pred_spans[..., 1] - pred_spans[..., 0]
    gt_len = gt_spans[..., 1] - gt_spans[..., 0]
    inter = (
        torch.minimum(pred_spans[..., 1], gt_spans[..., 1])
        - torch.maximum(pred_spans[..., 0], gt_spans[..., 0])
    ).clamp(min=0.0)
    union = pred_len + gt_len - inter
    hull = torch.maximum(pred_spans[..., 1], gt_spans[..., 1]) - torch.minimum(
        pred_spans[..., 0], gt_spans[..., 0]
    )
    if (hull <= 0).any():
        raise ValueError("giou_1d requires at least one non-degenerate span per pair")
    return inter / union - (hull - union) / hull


def boundary_targets(num_clips: int, gt_spans, dtype=torch.float32, device=None):
    """Per-clip ground-truth (left, right) offsets for spans (..., 2)."""
    t = torch.arange(num_clips, dtype=dtype, device=device)
    left = t - gt_spans[..., 0:1]
    right = gt_spans[..., 1:2] - t
    return torch.stack([left, right], dim=-1)                            # (..., T, 2)


def boundary_loss(pred_offsets, positive_mask, gt_spans,
                  l1_weight: float = 1.0, iou_weight: float = 1.0) -> torch.Tensor:
    """Smooth-L1 on boundary offsets plus the gIoU gap, averaged over clips
    inside the ground-truth moment.

    pred_offsets: (..., T, 2) non-negative; positive_mask: (..., T) bool;
    gt_spans: (..., 2) float. Returns 0 (with a warning) when the mask is empty.
    """
    if not positive_mask.any():
        warnings.warn("boundary_loss evaluated with no positive clips")
        return pred_offsets.sum() * 0.0
    num_clips = pred_offsets.shape[-2]
    targets = boundary_targets(num_clips, gt_spans,
                               dtype=pred_offsets.dtype, device=pred_offsets.device)
    l1 = F.smooth_l1_loss(pred_offsets, targets, reduction="none").mean(dim=-1)

    t = torch.arange(num_clips, dtype=pred_offsets.dtype, device=pred_offsets.device)
    pred_spans = torch.stack(
        [t - pred_offsets[..., 0], t + pred_offsets[..., 1]], dim=-1
    )
    giou = giou_1d(pred_spans, gt_spans.unsqueeze(-2))
    per_clip = l1_weight * l1 + iou_weight * (1.0 - giou)
    return per_clip[positive_mask].mean()


def total_loss(guidance, focal, boundary) -> torch.Tensor:
    """Training objective: the three per-clip-averaged components summed."""
    return guidance + focal + boundary


@dataclass(frozen=True)
class DecodedSpan:
    start: float
    end: float
    score: float


def _span_order(span: DecodedSpan):
    return (-span.score, span.start, span.end)


def decode_spans(confidence, offsets) -> list[DecodedSpan]:
    """One candidate span per clip: [t - left, t + right] clamped to the video
    extent, scored by the clip confidence. Degenerate spans are dropped and
    the rest are sorted by score (ties: earlier start, then earlier end)."""
    num_clips = confidence.shape[-1]
    conf = confidence.detach().cpu().tolist()
    offs = offsets.detach().cpu().tolist()
    spans = []
    for t in range(num_clips):
        start = max(0.0, t - offs[t][0])
        end = min(float(num_clips), t + offs[t][1])
        if end > start:
            spans.append(DecodedSpan(start=start, end=end, score=conf[t]))
    return sorted(spans, key=_span_order)


def nms(spans, threshold: float) -> list[DecodedSpan]:
    """Greedy suppression of spans overlapping a kept span at IoU > threshold.

    Spans are expected ranked by score; ties are re-canonicalized (earlier
    start, then earlier end) so the result is permutation-invariant.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"nms threshold must be in [0, 1], got {threshold}")
    ordered = sorted(spans, key=_span_order)
    kept: list[DecodedSpan] = []
    for span in ordered:
        if all(temporal_iou((span.start, span.end), (k.start, k.end)) <= threshold
               for k in kept):
            kept.append(span)
    return kept
