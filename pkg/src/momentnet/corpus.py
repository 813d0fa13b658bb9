"""Synthetic clip/query feature corpus with planted moments.

Each sample plants one ground-truth moment inside a sequence of T clip
features. Clip features fall into three alignment tiers relative to a latent
per-sample concept vector:

  * full      - clips inside the moment embed the whole concept
                (saliency grade 4, or 3 for a slightly attenuated variant)
  * partial   - distractor spans embed a strict subset of the concept
                components (grade 1 or 2)
  * background- everything else embeds directions orthogonal to the concept
                (grade 0)

Query tokens are noisy images of the same concept vector, so with zero noise
the cosine ordering full > partial > background holds exactly. All features
are unit-normalized after noise is added.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError

# Number of latent concept components per sample. Distractor spans embed a
# strict subset of at most half of them, which caps their cosine against the
# pooled query at sqrt(1/2) before noise.
CONCEPT_COMPONENTS = 8

# Concept weight of a grade-3 (attenuated full-alignment) clip. Must stay
# above the sqrt(1/2) distractor cap so the tier ordering survives.
GRADE3_CONCEPT_WEIGHT = 0.85

MAX_GRADE = 4


class CorpusFormatError(ValueError):
    """Raised when a corpus file cannot be parsed; carries the 1-based line."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class MomentSpan:
    """Half-open clip-index interval [start, end)."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start

    def contains(self, clip: int) -> bool:
        return self.start <= clip < self.end

    def overlaps(self, other: "MomentSpan") -> bool:
        return self.start < other.end and other.start < self.end

    def validate(self, num_clips: int) -> None:
        if not (0 <= self.start < self.end <= num_clips):
            raise ValueError(f"invalid span [{self.start}, {self.end}) for T={num_clips}")


@dataclass(frozen=True)
class CorpusConfig:
    num_clips: int = 32          # T
    num_tokens: int = 8          # L
    video_dim: int = 32          # d_v
    query_dim: int = 32          # d_q
    num_samples: int = 500
    num_distractors: int = 2
    noise_sigma: float = 0.3
    seed: int = 7

    def validate(self) -> None:
        if self.num_clips < 8:
            raise ConfigError(f"num_clips must be >= 8, got {self.num_clips}")
        if self.num_tokens < 1:
            raise ConfigError(f"num_tokens must be >= 1, got {self.num_tokens}")
        if self.video_dim < 2 * CONCEPT_COMPONENTS:
            raise ConfigError(
                f"video_dim must be >= {2 * CONCEPT_COMPONENTS} to fit the "
                f"concept and background subspaces, got {self.video_dim}"
            )
        if self.query_dim < 1:
            raise ConfigError(f"query_dim must be >= 1, got {self.query_dim}")
        if self.num_samples < 0:
            raise ConfigError(f"num_samples must be >= 0, got {self.num_samples}")
        if self.num_distractors < 0:
            raise ConfigError(f"num_distractors must be >= 0, got {self.num_distractors}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class CorpusSample:
    sample_id: str
    video: np.ndarray            # (T, d_v), unit rows
    query: np.ndarray            # (L, d_q), unit rows
    moment: MomentSpan
    saliency: np.ndarray         # (T,) int grades in 0..4
    distractors: list[MomentSpan] = field(default_factory=list)

    @property
    def num_clips(self) -> int:
        return self.video.shape[0]

    def moment_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_clips, dtype=bool)
        mask[self.moment.start : self.moment.end] = True
        return mask

    def distractor_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_clips, dtype=bool)
        for span in self.distractors:
            mask[span.start : span.end] = True
        return mask

    def background_mask(self) -> np.ndarray:
        return ~(self.moment_mask() | self.distractor_mask())


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _query_map(cfg: CorpusConfig) -> np.ndarray | None:
    """Fixed per-corpus map taking the video-space concept into query space.

    Identity when the two feature spaces share a dimension, so cosine
    comparisons between clips and pooled query tokens are exact; otherwise a
    seeded orthonormal-column map.
    """
    if cfg.query_dim == cfg.video_dim:
        return None
    rng = np.random.default_rng([cfg.seed, 0x51])
    size = max(cfg.query_dim, cfg.video_dim)
    q, _ = np.linalg.qr(rng.normal(size=(size, size)))
    return q[: cfg.query_dim, : cfg.video_dim]


def _place_distractors(cfg: CorpusConfig, moment: MomentSpan, rng) -> list[MomentSpan]:
    """Drop spans into the clip ranges left free by the moment.

    Spans never touch the moment or each other; when the free gaps run out,
    fewer than the requested number are placed.
    """
    gaps = [g for g in [(0, moment.start), (moment.end, cfg.num_clips)] if g[1] > g[0]]
    spans = []
    for i in range(cfg.num_distractors):
        if not gaps:
            break
        remaining = cfg.num_distractors - i - 1
        gap = gaps.pop(int(rng.integers(len(gaps))))
        free_elsewhere = sum(g[1] - g[0] for g in gaps)
        # Leave one clip of room per distractor still to be placed.
        max_len = min(moment.length, (gap[1] - gap[0]) - max(0, remaining - free_elsewhere))
        if max_len < 1:
            gaps.append(gap)
            continue
        length = int(rng.integers(1, max_len, endpoint=True))
        start = int(rng.integers(gap[0], gap[1] - length, endpoint=True))
        spans.append(MomentSpan(start, start + length))
        for leftover in [(gap[0], start), (start + length, gap[1])]:
            if leftover[1] > leftover[0]:
                gaps.append(leftover)
    return sorted(spans, key=lambda s: s.start)


def generate_sample(cfg: CorpusConfig, rng, sample_id: str,
                    query_map: np.ndarray | None = None) -> CorpusSample:
    """Generate one sample from an already-validated config and rng stream."""
    T, L, dv, dq = cfg.num_clips, cfg.num_tokens, cfg.video_dim, cfg.query_dim
    k = CONCEPT_COMPONENTS
    sigma = cfg.noise_sigma

    # Orthonormal frame: first k columns span the concept, the rest hold
    # background and attenuation directions.
    frame, _ = np.linalg.qr(rng.normal(size=(dv, dv)))
    concept_basis = frame[:, :k]
    spare_basis = frame[:, k:]
    concept = concept_basis @ (np.ones(k) / np.sqrt(k))

    moment_len = int(rng.integers(2, T // 2, endpoint=True))
    moment_start = int(rng.integers(0, T - moment_len, endpoint=True))
    moment = MomentSpan(moment_start, moment_start + moment_len)
    distractors = _place_distractors(cfg, moment, rng)

    def spare_direction():
        coeffs = rng.normal(size=spare_basis.shape[1])
        return _unit(spare_basis @ coeffs)

    grades = np.zeros(T, dtype=np.int64)
    base = np.empty((T, dv))
    for t in range(T):
        base[t] = spare_direction()

    # Full-alignment tier. One clip is always a clean grade-4 anchor so every
    # sample has at least one top-grade highlight.
    moment_clips = np.arange(moment.start, moment.end)
    anchor = int(rng.choice(moment_clips))
    for t in moment_clips:
        grade = 4 if t == anchor else int(rng.choice([3, 4]))
        grades[t] = grade
        if grade == 4:
            base[t] = concept
        else:
            w = GRADE3_CONCEPT_WEIGHT
            base[t] = w * concept + np.sqrt(1.0 - w * w) * spare_direction()

    # Partial tier: each distractor span embeds a strict subset of at most
    # half the concept components.
    for span in distractors:
        subset_size = int(rng.integers(1, max(1, k // 2), endpoint=True))
        subset = rng.choice(k, size=subset_size, replace=False)
        direction = _unit(concept_basis[:, subset].sum(axis=1))
        grade = 2 if subset_size > k // 4 else 1
        for t in range(span.start, span.end):
            base[t] = direction
            grades[t] = grade

    video = np.empty((T, dv))
    for t in range(T):
        video[t] = _unit(base[t] + sigma * rng.normal(size=dv) / np.sqrt(dv))

    query_concept = concept if query_map is None else query_map @ concept
    query = np.empty((L, dq))
    for i in range(L):
        query[i] = _unit(query_concept + sigma * rng.normal(size=dq) / np.sqrt(dq))

    return CorpusSample(
        sample_id=sample_id,
        video=video,
        query=query,
        moment=moment,
        saliency=grades,
        distractors=distractors,
    )


def generate_corpus(cfg: CorpusConfig) -> list[CorpusSample]:
    """Generate num_samples samples, each from its own (seed, index) substream."""
    cfg.validate()
    query_map = _query_map(cfg)
    samples = []
    for index in range(cfg.num_samples):
        rng = np.random.default_rng([cfg.seed, index])
        samples.append(generate_sample(cfg, rng, f"sample-{index:05d}", query_map))
    return samples


def sample_to_dict(sample: CorpusSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "video": sample.video.tolist(),
        "query": sample.query.tolist(),
        "moment": {"start": sample.moment.start, "end": sample.moment.end},
        "saliency": sample.saliency.tolist(),
        "distractors": [{"start": s.start, "end": s.end} for s in sample.distractors],
    }


def sample_from_dict(record: dict) -> CorpusSample:
    moment = MomentSpan(int(record["moment"]["start"]), int(record["moment"]["end"]))
    video = np.asarray(record["video"], dtype=np.float64)
    moment.validate(video.shape[0])
    return CorpusSample(
        sample_id=str(record["sample_id"]),
        video=video,
        query=np.asarray(record["query"], dtype=np.float64),
        moment=moment,
        saliency=np.asarray(record["saliency"], dtype=np.int64),
        distractors=[MomentSpan(int(d["start"]), int(d["end"])) for d in record["distractors"]],
    )


def write_corpus(samples: list[CorpusSample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_dict(sample), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_corpus(path) -> list[CorpusSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                samples.append(sample_from_dict(record))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}", line=lineno) from exc
    return samples
