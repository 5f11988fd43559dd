"""Scorers: objects that map a prefix batch to next-token log-probabilities.

The decoders only need ``vocab_size``, ``eos``, ``start(source)`` and
``step(ctx, prefixes)``.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from lexcon.augmentation import AugmentedInput
from lexcon.model import Seq2Seq, encode_input, ensemble_scores, forward_step


class TableScorer:
    """A fixed random language model over a tiny vocabulary.

    Each prefix gets its own pseudo-random logits derived from
    ``(seed, source, prefix)``, so the scorer is deterministic and
    arbitrarily non-Markov, which is what the exhaustive oracle tests need.
    """

    def __init__(self, vocab_size: int, eos: int, seed: int = 0, temperature: float = 1.0):
        self.vocab_size = vocab_size
        self.eos = eos
        self.seed = seed
        self.temperature = temperature
        self.calls = 0

    def start(self, source):
        return tuple(source) if source is not None else ()

    def _row(self, ctx, prefix) -> np.ndarray:
        key = repr((self.seed, ctx, tuple(int(t) for t in prefix))).encode()
        digest = hashlib.blake2b(key, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        logits = rng.normal(size=self.vocab_size) / self.temperature
        return logits - np.logaddexp.reduce(logits)

    def step(self, ctx, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        self.calls += 1
        return np.stack([self._row(ctx, p) for p in prefixes])


class ModelScorer:
    def __init__(self, model: Seq2Seq, eos: int):
        self.model = model.eval()
        self.vocab_size = model.cfg.vocab_size
        self.eos = eos

    def start(self, source: AugmentedInput):
        return encode_input(self.model, source)

    def step(self, memory, prefixes):
        return forward_step(self.model, memory, prefixes, self.eos)


class EnsembleScorer:
    """Averages member distributions in probability (default) or log space."""

    def __init__(self, models: Sequence[Seq2Seq], eos: int, space: str = "prob"):
        self.models = [m.eval() for m in models]
        self.vocab_size = self.models[0].cfg.vocab_size
        self.eos = eos
        self.space = space

    def start(self, source: AugmentedInput):
        return [encode_input(m, source) for m in self.models]

    def step(self, memories, prefixes):
        return ensemble_scores(self.models, memories, prefixes, self.eos, self.space)
