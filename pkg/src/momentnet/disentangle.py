"""Query-guided semantic disentanglement.

Dual contrastive guidance pulls in-moment clip tokens toward the pooled query
(and its video-guided token counterparts) while pushing the remaining clips
away; the resulting per-clip relevance score rescales the clip features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .primitives import DropPath, MultiHeadAttention, cosine_sim


@dataclass
class GuidanceBatch:
    """Per-sample contrast sets, padded across the batch.

    positives: (B, dim) one in-moment clip token per sample.
    negatives: (B, N, dim) out-of-moment clip tokens; rows beyond a sample's
        true negative count are padding and must be flagged off in
        ``negative_mask`` (padding content is ignored).
    query_globals: (B, dim) pooled query vector per sample.
    guided_tokens: (B, T, dim) video-guided text tokens per sample.
    positive_index: (B,) clip index each positive was drawn from.
    """

    positives: torch.Tensor
    negatives: torch.Tensor
    negative_mask: torch.Tensor
    query_globals: torch.Tensor
    guided_tokens: torch.Tensor
    positive_index: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.positives.shape[0]


@dataclass(frozen=True)
class GuidanceWeights:
    intra: float = 0.1
    inter: float = 0.1
    token: float = 0.1

    def validate(self) -> None:
        if min(self.intra, self.inter, self.token) < 0:
            raise ValueError("guidance loss weights must be non-negative")


def _masked_negatives(batch: GuidanceBatch) -> torch.Tensor:
    # Padding rows may be zero vectors; swap them out before the cosine,
    # their logits get masked to -inf anyway.
    mask = batch.negative_mask.unsqueeze(-1)
    return torch.where(mask, batch.negatives, torch.ones_like(batch.negatives))


def _ranking_loss(batch: GuidanceBatch, anchors: torch.Tensor, temperature: float) -> torch.Tensor:
    """-log of softmax mass on the positive, negatives drawn from the same sample."""
    if batch.batch_size == 0:
        raise ValueError("empty guidance batch")
    if not batch.negative_mask.any(dim=1).all():
        raise ValueError("every sample needs at least one negative clip")
    pos_logit = cosine_sim(batch.positives, anchors) / temperature            # (B,)
    neg_logit = cosine_sim(_masked_negatives(batch), anchors.unsqueeze(1)) / temperature
    neg_logit = neg_logit.masked_fill(~batch.negative_mask, float("-inf"))    # (B, N)
    logits = torch.cat([pos_logit.unsqueeze(1), neg_logit], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos_logit).mean()


def intra_contrastive_loss(batch: GuidanceBatch, temperature: float = 1.0) -> torch.Tensor:
    """Positive clip vs the sample's own negatives, anchored on the pooled query."""
    return _ranking_loss(batch, batch.query_globals, temperature)


def token_level_loss(batch: GuidanceBatch, temperature: float = 1.0) -> torch.Tensor:
    """Same contrast as the intra loss, anchored on the video-guided text token
    at the positive clip's index."""
    idx = torch.arange(batch.batch_size, device=batch.positives.device)
    anchors = batch.guided_tokens[idx, batch.positive_index]
    return _ranking_loss(batch, anchors, temperature)


def inter_contrastive_loss(batch: GuidanceBatch, temperature: float = 1.0) -> torch.Tensor:
    """Each positive clip against every pooled query in the batch."""
    if batch.batch_size == 0:
        raise ValueError("empty guidance batch")
    sims = cosine_sim(
        batch.positives.unsqueeze(1), batch.query_globals.unsqueeze(0)
    ) / temperature                                                           # (B, B)
    return (torch.logsumexp(sims, dim=1) - sims.diagonal()).mean()


def guidance_terms(batch: GuidanceBatch, temperature: float = 1.0) -> dict[str, torch.Tensor]:
    return {
        "intra": intra_contrastive_loss(batch, temperature),
        "inter": inter_contrastive_loss(batch, temperature),
        "token": token_level_loss(batch, temperature),
    }


def guidance_loss(batch: GuidanceBatch, weights: GuidanceWeights,
                  temperature: float = 1.0) -> torch.Tensor:
    weights.validate()
    terms = guidance_terms(batch, temperature)
    return (weights.intra * terms["intra"]
            + weights.inter * terms["inter"]
            + weights.token * terms["token"])


def video_guided_text(video_tokens, text_tokens, attention: MultiHeadAttention):
    """Reform text tokens onto the clip timeline: one guided token per clip.

    video_tokens: (..., T, dim) attends as query over text_tokens (..., L, dim).
    """
    return attention(video_tokens, text_tokens, text_tokens)


class ContextEncoder(nn.Module):
    """Self-attention over clips followed by cross-attention into the text,
    each as a pre-norm residual branch with drop path."""

    def __init__(self, dim: int, heads: int, drop_rate: float = 0.0, generator=None):
        super().__init__()
        self.self_norm = nn.LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads)
        self.cross_norm = nn.LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, heads)
        self.drop = DropPath(drop_rate, generator)

    def forward(self, clip_tokens, text_tokens):
        x = clip_tokens
        normed = self.self_norm(x)
        x = x + self.drop(self.self_attn(normed, normed, normed))
        x = x + self.drop(self.cross_attn(self.cross_norm(x), text_tokens, text_tokens))
        return x


def relevance_scores(clip_tokens, query_global, guided_tokens) -> torch.Tensor:
    """Per-clip alignment score: cosine to the pooled query plus the mean
    cosine to all guided text tokens. Bounded in [-2, 2].

    clip_tokens: (..., T, dim), query_global: (..., 1, dim) or (dim,),
    guided_tokens: (..., T, dim) -> scores (..., T).
    """
    if query_global.dim() == 1:
        query_global = query_global.unsqueeze(0)
    global_term = cosine_sim(clip_tokens, query_global)                       # (..., T)
    token_term = cosine_sim(
        clip_tokens.unsqueeze(-2), guided_tokens.unsqueeze(-3)
    ).mean(dim=-1)                                                            # (..., T)
    return global_term + token_term


def disentangle(clip_tokens, relevance) -> torch.Tensor:
    """Scale clip row i by its relevance score."""
    if clip_tokens.shape[:-1] != relevance.shape:
        raise ValueError(
            f"relevance shape {tuple(relevance.shape)} does not match "
            f"clip rows {tuple(clip_tokens.shape[:-1])}"
        )
    return clip_tokens * relevance.unsqueeze(-1)
