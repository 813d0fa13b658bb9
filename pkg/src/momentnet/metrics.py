"""Retrieval and highlight-detection evaluation.

Covers temporal IoU, recall@k at IoU thresholds, mean average precision over
an IoU grid, and saliency-ranking metrics (mAP of the per-clip ranking and
HIT@1 against top-grade clips). Everything is rank-based and pure numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Saliency grade treated as a highlight positive (the top of the 0..4 scale).
TOP_SALIENCY_GRADE = 4

RECALL_IOUS = (0.3, 0.5, 0.7)
AP_GRID = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())


@dataclass
class EvalRecord:
    """Ranked predictions and ground truth for one sample."""

    sample_id: str
    spans: list[tuple[float, float, float]]       # (start, end, score), score desc
    gt_span: tuple[float, float]
    pred_saliency: np.ndarray | None = None       # (T,)
    gt_saliency: np.ndarray | None = None         # (T,) int grades


def temporal_iou(a, b) -> float:
    """IoU of two 1-D intervals given as (start, end); 0 when disjoint."""
    a_start, a_end = float(a[0]), float(a[1])
    b_start, b_end = float(b[0]), float(b[1])
    if a_end <= a_start or b_end <= b_start:
        raise ValueError("temporal_iou requires non-empty intervals")
    inter = max(0.0, min(a_end, b_end) - max(a_start, b_start))
    union = (a_end - a_start) + (b_end - b_start) - inter
    return inter / union


def recall_at_k(records, k: int, iou_threshold: float) -> float:
    """Fraction of records whose top-k spans contain an IoU >= threshold hit."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not records:
        raise ValueError("no records to evaluate")
    hits = 0
    for rec in records:
        for span in rec.spans[:k]:
            if temporal_iou(span[:2], rec.gt_span) >= iou_threshold:
                hits += 1
                break
    return hits / len(records)


def ranked_ap(positive_flags) -> float:
    """Average precision of a ranked binary list: mean precision at each hit."""
    true_positives = 0
    precision_sum = 0.0
    num_positives = 0
    for rank, flag in enumerate(positive_flags, start=1):
        if flag:
            true_positives += 1
            num_positives += 1
            precision_sum += true_positives / rank
    if num_positives == 0:
        raise ValueError("ranked_ap needs at least one positive")
    return precision_sum / num_positives


def _sample_ap(spans, gt_span, iou_threshold: float) -> float:
    # One ground truth per sample: the first span clearing the threshold is
    # the lone true positive, everything after it counts as false positive.
    for rank, span in enumerate(spans, start=1):
        if temporal_iou(span[:2], gt_span) >= iou_threshold:
            return 1.0 / rank
    return 0.0


def ap_at(records, iou_threshold: float) -> float:
    if not records:
        raise ValueError("no records to evaluate")
    return float(np.mean([_sample_ap(r.spans, r.gt_span, iou_threshold) for r in records]))


def mean_ap(records, iou_thresholds=AP_GRID) -> float:
    """AP averaged over records, then over the IoU threshold grid."""
    return float(np.mean([ap_at(records, t) for t in iou_thresholds]))


@dataclass
class HighlightMetrics:
    hd_map: float
    hit_at_1: float
    num_skipped: int = 0


def hd_metrics(records, positive_grade: int = TOP_SALIENCY_GRADE) -> HighlightMetrics:
    """Saliency-ranking quality against top-grade clips.

    Per sample, clips are ranked by predicted saliency (ties broken by clip
    index); hd_map averages the ranking AP, hit_at_1 the fraction of samples
    whose top-ranked clip has the top grade. Samples without a top-grade clip
    are skipped and counted.
    """
    ap_values = []
    hits = []
    skipped = 0
    for rec in records:
        if rec.pred_saliency is None or rec.gt_saliency is None:
            raise ValueError(f"record {rec.sample_id} lacks saliency arrays")
        positives = np.asarray(rec.gt_saliency) == positive_grade
        if not positives.any():
            skipped += 1
            continue
        order = np.argsort(-np.asarray(rec.pred_saliency, dtype=np.float64), kind="stable")
        ap_values.append(ranked_ap(positives[order]))
        hits.append(bool(positives[order[0]]))
    if not ap_values:
        raise ValueError("no records with a top-grade clip")
    return HighlightMetrics(
        hd_map=float(np.mean(ap_values)),
        hit_at_1=float(np.mean(hits)),
        num_skipped=skipped,
    )


@dataclass
class MetricReport:
    r1: dict[float, float] = field(default_factory=dict)
    r5: dict[float, float] = field(default_factory=dict)
    map_at: dict[float, float] = field(default_factory=dict)
    map_avg: float = 0.0
    hd_map: float = 0.0
    hit_at_1: float = 0.0
    hd_skipped: int = 0

    def to_dict(self) -> dict[str, float]:
        out = {}
        for thr in RECALL_IOUS:
            out[f"r1@{thr}"] = self.r1[thr]
        for thr in RECALL_IOUS:
            out[f"r5@{thr}"] = self.r5[thr]
        out["map@0.5"] = self.map_at[0.5]
        out["map@0.75"] = self.map_at[0.75]
        out["map_avg"] = self.map_avg
        out["hd_map"] = self.hd_map
        out["hd_hit1"] = self.hit_at_1
        return out

    def csv_header(self) -> str:
        return ",".join(self.to_dict().keys())

    def csv_row(self) -> str:
        return ",".join(f"{v:.6f}" for v in self.to_dict().values())


def evaluate_records(records) -> MetricReport:
    """Full retrieval + highlight report over a list of EvalRecords."""
    report = MetricReport()
    for thr in RECALL_IOUS:
        report.r1[thr] = recall_at_k(records, 1, thr)
        report.r5[thr] = recall_at_k(records, 5, thr)
    for thr in (0.5, 0.75):
        report.map_at[thr] = ap_at(records, thr)
    report.map_avg = mean_ap(records)
    highlight = hd_metrics(records)
    report.hd_map = highlight.hd_map
    report.hit_at_1 = highlight.hit_at_1
    report.hd_skipped = highlight.num_skipped
    return report
