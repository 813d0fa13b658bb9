import json

import numpy as np
import pytest

from momentnet.config import ConfigError
from momentnet.corpus import (CONCEPT_COMPONENTS, CorpusConfig, CorpusFormatError,
                              MomentSpan, generate_corpus, read_corpus,
                              sample_to_dict, write_corpus)


def small_cfg(**kwargs):
    base = dict(num_clips=32, num_tokens=8, video_dim=32, query_dim=32,
                num_samples=20, num_distractors=2, noise_sigma=0.3, seed=7)
    base.update(kwargs)
    return CorpusConfig(**base)


def spans_overlap_oracle(a: MomentSpan, b: MomentSpan) -> float:
    # Interval-overlap check written against clip sets, not span arithmetic.
    clips_a = set(range(a.start, a.end))
    clips_b = set(range(b.start, b.end))
    inter = len(clips_a & clips_b)
    union = len(clips_a | clips_b)
    return inter / union


def pooled_query(sample):
    pooled = sample.query.mean(axis=0)
    return pooled / np.linalg.norm(pooled)


def test_same_seed_same_bytes(tmp_path):
    cfg = small_cfg(num_samples=10)
    path_a, path_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_corpus(generate_corpus(cfg), path_a)
    write_corpus(generate_corpus(cfg), path_b)
    assert path_a.read_bytes() == path_b.read_bytes()


def test_different_seeds_differ():
    moments_a = [(s.moment.start, s.moment.end) for s in generate_corpus(small_cfg(seed=7))]
    moments_b = [(s.moment.start, s.moment.end) for s in generate_corpus(small_cfg(seed=8))]
    assert moments_a != moments_b


def test_moment_length_range():
    for sample in generate_corpus(small_cfg(num_samples=50)):
        assert 2 <= sample.moment.length <= 16
        sample.moment.validate(32)


def test_noiseless_tier_ordering_every_sample():
    cfg = small_cfg(noise_sigma=0.0, num_samples=30)
    for sample in generate_corpus(cfg):
        cos = sample.video @ pooled_query(sample)
        moment_mean = cos[sample.moment_mask()].mean()
        background_mean = cos[sample.background_mask()].mean()
        distractor = sample.distractor_mask()
        if distractor.any():
            assert moment_mean > cos[distractor].mean() > background_mean
        assert moment_mean > background_mean


def test_noiseless_moment_beats_every_background_clip():
    cfg = small_cfg(noise_sigma=0.0, num_distractors=0, num_samples=20)
    for sample in generate_corpus(cfg):
        cos = sample.video @ pooled_query(sample)
        assert cos[sample.moment_mask()].min() > cos[sample.background_mask()].max()


def test_saliency_grades_match_tiers():
    for sample in generate_corpus(small_cfg(num_samples=30)):
        grades = sample.saliency
        assert (grades[sample.moment_mask()] >= 3).all()
        assert (grades[~sample.moment_mask()] <= 2).all()
        assert (grades[sample.distractor_mask()] >= 1).all()
        assert (grades[sample.background_mask()] == 0).all()
        # at least one top-grade highlight per sample
        assert (grades == 4).any()


def test_distractors_disjoint_from_moment():
    cfg = small_cfg(num_samples=40)
    for sample in generate_corpus(cfg):
        assert len(sample.distractors) == 2
        for span in sample.distractors:
            assert spans_overlap_oracle(span, sample.moment) == 0.0


def test_unit_norm_features():
    for sample in generate_corpus(small_cfg(num_samples=5)):
        assert np.allclose(np.linalg.norm(sample.video, axis=1), 1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(sample.query, axis=1), 1.0, atol=1e-12)


def test_roundtrip_identity(tmp_path):
    samples = generate_corpus(small_cfg(num_samples=8))
    path = tmp_path / "c.jsonl"
    write_corpus(samples, path)
    loaded = read_corpus(path)
    assert len(loaded) == len(samples)
    for a, b in zip(samples, loaded):
        assert a.sample_id == b.sample_id
        assert a.moment == b.moment
        assert a.distractors == b.distractors
        assert np.array_equal(a.video, b.video)
        assert np.array_equal(a.query, b.query)
        assert np.array_equal(a.saliency, b.saliency)


def test_empty_corpus_roundtrip(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_corpus(generate_corpus(small_cfg(num_samples=0)), path)
    assert path.exists()
    assert read_corpus(path) == []


def test_truncated_file_names_line(tmp_path):
    samples = generate_corpus(small_cfg(num_samples=3))
    path = tmp_path / "trunc.jsonl"
    write_corpus(samples, path)
    text = path.read_text()
    lines = text.splitlines(keepends=True)
    lines[-1] = lines[-1][: len(lines[-1]) // 2]
    path.write_text("".join(lines))
    with pytest.raises(CorpusFormatError) as err:
        read_corpus(path)
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_shuffled_lines_same_id_multiset(tmp_path, rng):
    samples = generate_corpus(small_cfg(num_samples=10))
    path = tmp_path / "shuf.jsonl"
    write_corpus(samples, path)
    lines = path.read_text().splitlines()
    rng.shuffle(lines)
    path.write_text("\n".join(lines) + "\n")
    loaded = read_corpus(path)
    assert sorted(s.sample_id for s in loaded) == sorted(s.sample_id for s in samples)


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        generate_corpus(small_cfg(num_clips=4))
    with pytest.raises(ConfigError):
        generate_corpus(small_cfg(noise_sigma=-0.1))
    with pytest.raises(ConfigError):
        generate_corpus(small_cfg(num_samples=-1))
    with pytest.raises(ConfigError):
        generate_corpus(small_cfg(video_dim=CONCEPT_COMPONENTS))


def test_bad_span_rejected_on_read(tmp_path):
    sample = generate_corpus(small_cfg(num_samples=1))[0]
    record = sample_to_dict(sample)
    record["moment"] = {"start": 5, "end": 5}
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n")
    with pytest.raises(CorpusFormatError) as err:
        read_corpus(path)
    assert err.value.line == 1
