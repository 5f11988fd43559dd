"""Constraint-aware input construction and training-time constraint sampling.

An augmented encoder input is the source followed by each constraint
phrase behind a separator, closed by ``eos``::

    x_1 .. x_S  <sep> c_1  <sep> c_2 ... c_N  <eos>

Position ids on the source run ``0..S-1``; everything after the source
uses one running counter starting at ``max_source_positions`` so the two
regions never share a position.  Segment ids are 0 on the source, ``i`` on
the ``i``-th constraint and its leading separator, and 0 on the final eos.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from lexcon.constraints import ConstraintSet
from lexcon.core import SentencePair, TokenSeq, Vocabulary, split_words
from lexcon.errors import ConfigurationError, DataError


@dataclass(frozen=True)
class SamplerConfig:
    k_max: int = 14
    p_zero: float = 0.4
    per_k: float | None = None
    max_source_positions: int = 64

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")
        if not 0.0 <= self.p_zero <= 1.0:
            raise ConfigurationError("p_zero must be a probability")
        if self.per_k is None:
            object.__setattr__(self, "per_k", (1.0 - self.p_zero) / self.k_max)
        if self.per_k < 0 or abs(self.p_zero + self.k_max * self.per_k - 1.0) > 1e-9:
            raise ConfigurationError(
                f"p_zero + k_max * per_k must equal 1 (got {self.p_zero + self.k_max * self.per_k!r})"
            )
        if self.max_source_positions < 1:
            raise ConfigurationError("max_source_positions must be >= 1")

    @property
    def n_segments(self) -> int:
        return self.k_max + 1

    def k_probabilities(self) -> np.ndarray:
        probs = np.full(self.k_max + 1, self.per_k, dtype=np.float64)
        probs[0] = self.p_zero
        return probs


@dataclass(frozen=True)
class AugmentedInput:
    token_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    source_len: int

    def __len__(self) -> int:
        return len(self.token_ids)


def sample_k(cfg: SamplerConfig, rng: np.random.Generator, size: int | None = None):
    return rng.choice(cfg.k_max + 1, size=size, p=cfg.k_probabilities())


def sample_constraint_phrases(
    reference_words: Sequence[str],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    shuffle: bool = False,
) -> list[str]:
    """Draw ``k`` and then ``k`` distinct reference words as one-word constraints."""
    k = min(int(sample_k(cfg, rng)), len(reference_words))
    if k == 0:
        return []
    picks = rng.choice(len(reference_words), size=k, replace=False)
    if not shuffle:
        picks = np.sort(picks)
    return [reference_words[int(i)] for i in picks]


def sample_constraints(
    reference_words: Sequence[str],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    vocab: Vocabulary,
    shuffle: bool = False,
) -> ConstraintSet:
    return ConstraintSet.from_surfaces(vocab, sample_constraint_phrases(reference_words, cfg, rng, shuffle))


def build_augmented_input(
    source: TokenSeq,
    cs: ConstraintSet,
    cfg: SamplerConfig,
    vocab: Vocabulary,
) -> AugmentedInput:
    source = [int(t) for t in source]
    if not source:
        raise DataError("cannot augment an empty source")
    if len(source) >= cfg.max_source_positions:
        raise ConfigurationError(
            f"source length {len(source)} reaches max_source_positions={cfg.max_source_positions}"
        )
    tokens = list(source)
    positions = list(range(len(source)))
    segments = [0] * len(source)
    pos = cfg.max_source_positions
    for i, phrase in enumerate(cs.phrases, start=1):
        seg = min(i, cfg.k_max)
        for tok in (vocab.sep, *phrase):
            tokens.append(tok)
            positions.append(pos)
            segments.append(seg)
            pos += 1
    tokens.append(vocab.eos)
    positions.append(pos if cs.phrases else len(source))
    segments.append(0)
    return AugmentedInput(tuple(tokens), tuple(positions), tuple(segments), len(source))


def sentence_rng(seed: int, sentence_id: str) -> np.random.Generator:
    digest = hashlib.sha256(sentence_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def annotate_dataset(
    pairs: Iterable[SentencePair],
    cfg: SamplerConfig,
    seed: int,
    shuffle: bool = False,
) -> list[SentencePair]:
    """Sample constraints for each pair from its reference; deterministic in ``seed``."""
    out = []
    for pair in pairs:
        rng = sentence_rng(seed, pair.id)
        phrases = sample_constraint_phrases(split_words(pair.target), cfg, rng, shuffle)
        out.append(replace(pair, constraints=tuple(phrases)))
    return out
