"""Training loop, evaluation, prediction, and the diagnostic sweeps.

Everything here is deterministic given (config, seed): batch order and
positive-clip resampling come from numpy substreams keyed on (seed, epoch),
parameter init and drop-path draws from seeded torch generators.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import AblationFlags, RunConfig
from .corpus import CorpusSample, read_corpus
from .denoise import hit_fraction, make_reference_grid
from .disentangle import (GuidanceBatch, inter_contrastive_loss,
                          intra_contrastive_loss, token_level_loss)
from .grounding import boundary_loss, decode_spans, focal_loss, nms, total_loss
from .metrics import EvalRecord, MetricReport, evaluate_records
from .model import ModelOutput, MomentNet


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


# Cumulative switch ladder used by the ablation table: from the bare
# focal+boundary baseline up to the full model.
ABLATION_LADDER = [
    AblationFlags(intra=False, inter=False, token=False, relevance_mul=False, cdd=False),
    AblationFlags(intra=True, inter=False, token=False, relevance_mul=False, cdd=False),
    AblationFlags(intra=True, inter=True, token=False, relevance_mul=False, cdd=False),
    AblationFlags(intra=True, inter=True, token=True, relevance_mul=False, cdd=False),
    AblationFlags(intra=True, inter=True, token=True, relevance_mul=True, cdd=False),
    AblationFlags(intra=True, inter=True, token=True, relevance_mul=True, cdd=True),
]


@dataclass
class BatchTensors:
    sample_ids: list[str]
    video: torch.Tensor          # (B, T, d_v)
    query: torch.Tensor          # (B, L, d_q)
    moment_mask: torch.Tensor    # (B, T) bool
    spans: torch.Tensor          # (B, 2) float [start, end]
    saliency: np.ndarray         # (B, T) int


def stack_samples(samples: list[CorpusSample], dtype=torch.float32) -> BatchTensors:
    video = torch.as_tensor(np.stack([s.video for s in samples]), dtype=dtype)
    query = torch.as_tensor(np.stack([s.query for s in samples]), dtype=dtype)
    num_clips = video.shape[1]
    mask = torch.zeros(len(samples), num_clips, dtype=torch.bool)
    spans = torch.zeros(len(samples), 2, dtype=dtype)
    for i, s in enumerate(samples):
        mask[i, s.moment.start : s.moment.end] = True
        spans[i, 0] = s.moment.start
        spans[i, 1] = s.moment.end
    saliency = np.stack([s.saliency for s in samples])
    return BatchTensors(
        sample_ids=[s.sample_id for s in samples],
        video=video, query=query, moment_mask=mask, spans=spans, saliency=saliency,
    )


def sample_positive_indices(moment_mask: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """One uniformly drawn in-moment clip index per sample."""
    indices = []
    for row in moment_mask:
        candidates = torch.nonzero(row, as_tuple=False).squeeze(-1)
        indices.append(int(candidates[int(rng.integers(len(candidates)))]))
    return torch.tensor(indices, dtype=torch.long)


def build_guidance_batch(out: ModelOutput, batch: BatchTensors,
                         positive_index: torch.Tensor,
                         cross_sample: bool = False) -> GuidanceBatch:
    batch_size = batch.moment_mask.shape[0]
    rows = torch.arange(batch_size)
    positives = out.video_tokens[rows, positive_index]
    if cross_sample:
        # Every sample contrasts against all out-of-moment clips in the batch.
        flat = out.video_tokens[~batch.moment_mask]
        negatives = flat.unsqueeze(0).expand(batch_size, -1, -1)
        negative_mask = torch.ones(batch_size, flat.shape[0], dtype=torch.bool)
    else:
        per_sample = [out.video_tokens[i][~batch.moment_mask[i]] for i in range(batch_size)]
        lengths = [n.shape[0] for n in per_sample]
        negatives = torch.nn.utils.rnn.pad_sequence(per_sample, batch_first=True)
        negative_mask = torch.zeros(batch_size, max(lengths), dtype=torch.bool)
        for i, n in enumerate(lengths):
            negative_mask[i, :n] = True
    return GuidanceBatch(
        positives=positives,
        negatives=negatives,
        negative_mask=negative_mask,
        query_globals=out.query_global.squeeze(-2),
        guided_tokens=out.guided_text,
        positive_index=positive_index,
    )


def compute_losses(out: ModelOutput, batch: BatchTensors, cfg: RunConfig,
                   positive_index: torch.Tensor):
    """Total objective plus detached per-component values for logging."""
    flags = cfg.flags()
    zero = out.confidence.sum() * 0.0
    intra = inter = token = zero
    w_intra = cfg.intra_weight if flags.intra else 0.0
    w_inter = cfg.inter_weight if flags.inter else 0.0
    w_token = cfg.token_weight if flags.token else 0.0
    if w_intra > 0 or w_inter > 0 or w_token > 0:
        guidance_batch = build_guidance_batch(out, batch, positive_index,
                                              cfg.cross_sample_negatives)
        if w_intra > 0:
            intra = intra_contrastive_loss(guidance_batch, cfg.temperature)
        if w_inter > 0:
            inter = inter_contrastive_loss(guidance_batch, cfg.temperature)
        if w_token > 0:
            token = token_level_loss(guidance_batch, cfg.temperature)
    guidance = w_intra * intra + w_inter * inter + w_token * token
    focal = focal_loss(out.confidence, batch.moment_mask, cfg.gamma, cfg.focal_weight)
    boundary = boundary_loss(out.boundary, batch.moment_mask, batch.spans,
                             cfg.l1_weight, cfg.iou_weight)
    total = total_loss(guidance, focal, boundary)
    parts = {
        "guidance": guidance.item(), "intra": intra.item(), "inter": inter.item(),
        "token": token.item(), "focal": focal.item(), "boundary": boundary.item(),
        "total": total.item(),
    }
    return total, parts


def init_model(cfg: RunConfig, video_dim: int, query_dim: int) -> MomentNet:
    """Seeded construction; the offset projection starts at zero so the
    denoiser begins as plain strided-grid attention."""
    torch.manual_seed(cfg.seed)
    generator = torch.Generator()
    generator.manual_seed(cfg.seed)
    model = MomentNet.from_config(cfg, video_dim, query_dim, generator=generator)
    model.denoiser.zero_init_offsets()
    return model


@dataclass
class OffsetDiagnostics:
    rows: list[dict] = field(default_factory=list)

    @property
    def hit_rate(self) -> float:
        return float(np.mean([r["hit_rate"] for r in self.rows])) if self.rows else 0.0

    @property
    def baseline_rate(self) -> float:
        return float(np.mean([r["baseline_rate"] for r in self.rows])) if self.rows else 0.0

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write("sample_id,moment_len,hit_rate,baseline_rate\n")
            for r in self.rows:
                fh.write(f"{r['sample_id']},{r['moment_len']},"
                         f"{r['hit_rate']:.6f},{r['baseline_rate']:.6f}\n")


def predict_records(model: MomentNet, samples: list[CorpusSample], cfg: RunConfig,
                    chunk_size: int = 128):
    """Eval-mode forward over the corpus: ranked spans after NMS per sample,
    relevance as the saliency estimate, and grid hit-rate diagnostics."""
    model.eval()
    records: list[EvalRecord] = []
    diagnostics = OffsetDiagnostics()
    with torch.no_grad():
        for at in range(0, len(samples), chunk_size):
            part = samples[at : at + chunk_size]
            batch = stack_samples(part)
            out = model(batch.video, batch.query)
            num_clips = batch.video.shape[1]
            if out.positions is not None:
                grid = make_reference_grid(num_clips, model.denoiser.factor,
                                           dtype=batch.video.dtype)
                base_positions = grid.points.clamp(0.0, float(num_clips - 1))
            for i, sample in enumerate(part):
                spans = nms(decode_spans(out.confidence[i], out.boundary[i]),
                            cfg.nms_threshold)
                records.append(EvalRecord(
                    sample_id=sample.sample_id,
                    spans=[(s.start, s.end, s.score) for s in spans],
                    gt_span=(float(sample.moment.start), float(sample.moment.end)),
                    pred_saliency=out.relevance[i].numpy().copy(),
                    gt_saliency=sample.saliency,
                ))
                if out.positions is not None:
                    diagnostics.rows.append({
                        "sample_id": sample.sample_id,
                        "moment_len": sample.moment.length,
                        "hit_rate": hit_fraction(out.positions[i],
                                                 sample.moment.start, sample.moment.end),
                        "baseline_rate": hit_fraction(base_positions,
                                                      sample.moment.start, sample.moment.end),
                    })
    return records, diagnostics


def evaluate_model(model: MomentNet, samples: list[CorpusSample], cfg: RunConfig) -> MetricReport:
    records, _ = predict_records(model, samples, cfg)
    return evaluate_records(records)


def write_predictions(model: MomentNet, samples: list[CorpusSample], cfg: RunConfig,
                      path) -> None:
    records, _ = predict_records(model, samples, cfg)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "sample_id": rec.sample_id,
                "spans": [{"start": s, "end": e, "score": p} for s, e, p in rec.spans],
                "saliency": [float(v) for v in rec.pred_saliency],
            }, sort_keys=True))
            fh.write("\n")


@dataclass
class EpochLog:
    epoch: int
    losses: dict[str, float]
    metrics: MetricReport
    hit_rate: float
    baseline_rate: float

    def to_dict(self) -> dict:
        row = {"epoch": self.epoch}
        row.update({f"loss_{k}": v for k, v in self.losses.items()})
        row.update(self.metrics.to_dict())
        row["offset_hit_rate"] = self.hit_rate
        row["offset_baseline_rate"] = self.baseline_rate
        return row


@dataclass
class TrainResult:
    model: MomentNet
    log: list[EpochLog]
    best_epoch: int
    best_map: float

    def write_log(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for row in self.log:
                fh.write(json.dumps(row.to_dict(), sort_keys=True))
                fh.write("\n")


def train(cfg: RunConfig) -> TrainResult:
    """Adam on the total objective with per-epoch validation; the returned
    model carries the best-validation-mAP parameters."""
    cfg.validate()
    train_samples = read_corpus(cfg.train_corpus)
    val_samples = read_corpus(cfg.val_corpus)
    if not train_samples and cfg.epochs > 0:
        raise ValueError(f"empty training corpus: {cfg.train_corpus}")
    probe = train_samples[0] if train_samples else val_samples[0]
    model = init_model(cfg, probe.video.shape[1], probe.query.shape[1])
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    log: list[EpochLog] = []
    best_map = -math.inf
    best_epoch = 0
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 1 + epoch])
        order = rng.permutation(len(train_samples))
        model.train()
        sums = {}
        seen = 0
        for at in range(0, len(order), cfg.batch_size):
            part = [train_samples[i] for i in order[at : at + cfg.batch_size]]
            batch = stack_samples(part)
            out = model(batch.video, batch.query)
            positive_index = sample_positive_indices(batch.moment_mask, rng)
            total, parts = compute_losses(out, batch, cfg, positive_index)
            if not math.isfinite(parts["total"]):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}: {parts}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            for key, value in parts.items():
                sums[key] = sums.get(key, 0.0) + value * len(part)
            seen += len(part)
        losses = {k: v / max(seen, 1) for k, v in sums.items()}

        records, diagnostics = predict_records(model, val_samples, cfg)
        report = evaluate_records(records)
        log.append(EpochLog(epoch=epoch, losses=losses, metrics=report,
                            hit_rate=diagnostics.hit_rate,
                            baseline_rate=diagnostics.baseline_rate))
        if report.map_avg > best_map:
            best_map = report.map_avg
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    if best_map == -math.inf:
        best_map = 0.0
    return TrainResult(model=model, log=log, best_epoch=best_epoch, best_map=best_map)


def ablate(cfg: RunConfig, flag_sets: list[AblationFlags] | None = None) -> list[dict]:
    """Retrain per flag set with the shared seed; one table row per variant."""
    rows = []
    for flags in flag_sets or ABLATION_LADDER:
        variant = cfg.with_flags(flags)
        result = train(variant)
        report = evaluate_model(result.model, read_corpus(cfg.val_corpus), variant)
        row = {
            "intra": flags.intra, "inter": flags.inter, "token": flags.token,
            "relevance_mul": flags.relevance_mul, "cdd": flags.cdd,
            "map_avg": report.map_avg, "r1@0.5": report.r1[0.5],
            "hd_map": report.hd_map, "hd_hit1": report.hit_at_1,
        }
        rows.append(row)
    return rows


def sweep_factor(cfg: RunConfig, factors: list[int]) -> list[dict]:
    """Retrain across down-sample factors; one row per factor."""
    rows = []
    for factor in factors:
        variant = dataclasses.replace(cfg, downsample_factor=factor)
        result = train(variant)
        report = evaluate_model(result.model, read_corpus(cfg.val_corpus), variant)
        rows.append({
            "r": factor,
            "map_avg": report.map_avg,
            "r1@0.5": report.r1[0.5],
            "hd_map": report.hd_map,
            "hd_hit1": report.hit_at_1,
        })
    return rows


def write_table(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if not rows:
            return
        keys = list(rows[0].keys())
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row[k]) for k in keys) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
