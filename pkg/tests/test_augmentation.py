import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lexcon.augmentation import (
    SamplerConfig,
    annotate_dataset,
    build_augmented_input,
    sample_constraint_phrases,
    sample_k,
)
from lexcon.constraints import ConstraintSet
from lexcon.core import SentencePair, build_vocab
from lexcon.errors import ConfigurationError, DataError

VOCAB = build_vocab(["a b x y z"])
A, B, X, Y, Z = (VOCAB.index[t] for t in "abxyz")


def test_default_sampler_probabilities():
    cfg = SamplerConfig()
    assert cfg.k_max == 14 and cfg.p_zero == 0.4
    assert cfg.per_k == pytest.approx(0.6 / 14)
    assert cfg.k_probabilities().sum() == pytest.approx(1.0, abs=1e-12)
    assert cfg.n_segments == 15


def test_sampler_rejects_inconsistent_mass():
    with pytest.raises(ConfigurationError):
        SamplerConfig(k_max=4, p_zero=0.4, per_k=0.2)
    with pytest.raises(ConfigurationError):
        SamplerConfig(k_max=0)


def test_k_distribution_100k():
    cfg = SamplerConfig()
    ks = sample_k(cfg, np.random.default_rng(0), size=100_000)
    assert 0.39 <= np.mean(ks == 0) <= 0.41
    assert abs(ks.mean() - 4.5) <= 0.1
    freq = np.bincount(ks, minlength=15)[1:] / len(ks)
    assert np.all(np.abs(freq - 0.6 / 14) <= 0.005)


def test_k_capped_at_reference_length():
    cfg = SamplerConfig(k_max=5, p_zero=0.0)
    rng = np.random.default_rng(1)
    for _ in range(50):
        assert sample_constraint_phrases(["only"], cfg, rng) == ["only"]


def test_sampled_words_distinct_and_ordered():
    cfg = SamplerConfig(k_max=4, p_zero=0.0)
    words = [f"t{i}" for i in range(10)]
    rng = np.random.default_rng(2)
    for _ in range(200):
        picks = sample_constraint_phrases(words, cfg, rng)
        assert len(set(picks)) == len(picks)
        assert picks == sorted(picks, key=words.index)


def test_mean_k_over_50k_pairs():
    words = " ".join(f"t{i}" for i in range(20))
    pairs = [SentencePair(f"p{i}", "s", words) for i in range(50_000)]
    out = annotate_dataset(pairs, SamplerConfig(), seed=3)
    assert abs(np.mean([len(p.constraints) for p in out]) - 4.5) <= 0.1


def test_annotate_deterministic_and_p_zero_one():
    pairs = [SentencePair(f"p{i}", "s", "t1 t2 t3 +t3") for i in range(30)]
    a = annotate_dataset(pairs, SamplerConfig(k_max=3), 5)
    assert a == annotate_dataset(pairs, SamplerConfig(k_max=3), 5)
    assert any("t3 +t3" in p.constraints for p in a)
    none = annotate_dataset(pairs, SamplerConfig(k_max=3, p_zero=1.0), 5)
    assert all(p.constraints == () for p in none)


def test_layout_example():
    M = 16
    cfg = SamplerConfig(k_max=4, max_source_positions=M)
    aug = build_augmented_input([A, B], ConstraintSet(((X,), (Y, Z))), cfg, VOCAB)
    sep, eos = VOCAB.sep, VOCAB.eos
    assert aug.token_ids == (A, B, sep, X, sep, Y, Z, eos)
    assert aug.segment_ids == (0, 0, 1, 1, 2, 2, 2, 0)
    assert aug.position_ids == (0, 1, M, M + 1, M + 2, M + 3, M + 4, M + 5)


def test_layout_without_constraints():
    aug = build_augmented_input([A, B], ConstraintSet(()), SamplerConfig(max_source_positions=8), VOCAB)
    assert aug.token_ids == (A, B, VOCAB.eos)
    assert aug.segment_ids == (0, 0, 0)
    assert aug.position_ids == (0, 1, 2)


def test_segment_ids_clamped():
    cfg = SamplerConfig(k_max=2, max_source_positions=8)
    cs = ConstraintSet(((X,), (Y,), (Z,)))
    aug = build_augmented_input([A], cs, cfg, VOCAB)
    assert max(aug.segment_ids) == 2


def test_errors():
    cfg = SamplerConfig(max_source_positions=3)
    with pytest.raises(DataError):
        build_augmented_input([], ConstraintSet(()), cfg, VOCAB)
    with pytest.raises(ConfigurationError):
        build_augmented_input([A, A, A], ConstraintSet(()), cfg, VOCAB)


@given(
    st.lists(st.integers(0, 4), min_size=1, max_size=12),
    st.lists(st.lists(st.integers(0, 4), min_size=1, max_size=3), max_size=6),
)
def test_layout_invariants(src, phrases):
    cfg = SamplerConfig(k_max=4, max_source_positions=16)
    aug = build_augmented_input(src, ConstraintSet(tuple(map(tuple, phrases))), cfg, VOCAB)
    n = len(aug)
    assert len(aug.position_ids) == len(aug.segment_ids) == n
    assert aug.token_ids[-1] == VOCAB.eos
    # stripping constraint segments and the final eos gives back the source
    kept = [t for t, s in zip(aug.token_ids[:-1], aug.segment_ids[:-1]) if s == 0]
    assert kept == src
    assert list(aug.position_ids[: len(src)]) == list(range(len(src)))
    assert all(p >= 16 for p in aug.position_ids[len(src) : -1])
    # each phrase sits contiguously behind its separator with one segment id
    i = len(src)
    for j, ph in enumerate(phrases, start=1):
        assert aug.token_ids[i] == VOCAB.sep
        assert list(aug.token_ids[i + 1 : i + 1 + len(ph)]) == ph
        assert len(set(aug.segment_ids[i : i + 1 + len(ph)])) == 1
        assert aug.segment_ids[i] == min(j, 4)
        i += 1 + len(ph)
