"""Training loop, finite-difference gradient check, and loss evaluation."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from lexcon.augmentation import SamplerConfig, build_augmented_input, sample_constraint_phrases
from lexcon.constraints import ConstraintSet
from lexcon.core import SentencePair, Vocabulary, encode, split_words
from lexcon.errors import ConfigurationError, TrainingDiverged
from lexcon.model import Batch, Seq2Seq, average_state_dicts, make_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1500
    batch_size: int = 32
    max_lr: float = 3e-3
    warmup: int = 200
    betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    checkpoint_every: int = 100
    average_last: int = 8
    use_constraints: bool = True
    resample_constraints: bool = True
    shuffle_constraints: bool = False
    token_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be >= 1")
        if self.warmup < 0 or self.max_lr <= 0:
            raise ConfigurationError("bad learning-rate schedule")
        if self.average_last < 0 or self.checkpoint_every < 1:
            raise ConfigurationError("bad checkpoint averaging settings")


def inverse_sqrt_lr(step: int, max_lr: float, warmup: int) -> float:
    """Linear warmup to ``max_lr`` then decay proportional to ``step**-0.5``."""
    step = max(step, 1)
    if warmup == 0:
        return max_lr / math.sqrt(step)
    return max_lr * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class TrainResult:
    model: Seq2Seq
    losses: list[float] = field(default_factory=list)
    last_state: dict | None = None


class PairEncoder:
    """Turns sentence pairs into model inputs, optionally resampling constraints."""

    def __init__(self, vocab: Vocabulary, sampler: SamplerConfig, use_constraints: bool):
        self.vocab = vocab
        self.sampler = sampler
        self.use_constraints = use_constraints

    def input_for(self, source: str, constraints: Sequence[str]):
        cs = ConstraintSet.from_surfaces(self.vocab, constraints if self.use_constraints else ())
        return build_augmented_input(encode(self.vocab, source), cs, self.sampler, self.vocab)

    def batch(self, pairs: Sequence[SentencePair], rng: np.random.Generator | None = None,
              shuffle: bool = False, token_dropout: float = 0.0) -> Batch:
        inputs, targets = [], []
        for p in pairs:
            if rng is not None and self.use_constraints:
                cons = sample_constraint_phrases(split_words(p.target), self.sampler, rng, shuffle)
            else:
                cons = p.constraints
            source = p.source
            if token_dropout > 0 and rng is not None:
                words = source.split()
                kept = [w for w in words if rng.random() >= token_dropout] or words[:1]
                source = " ".join(kept)
            inputs.append(self.input_for(source, cons))
            targets.append(encode(self.vocab, p.target))
        return make_batch(inputs, targets, self.vocab.pad, self.vocab.eos)


def train(
    model: Seq2Seq,
    pairs: Sequence[SentencePair],
    vocab: Vocabulary,
    cfg: TrainConfig,
    sampler: SamplerConfig,
    noisy_pairs: Sequence[SentencePair] | None = None,
    pretrain_steps: int = 0,
) -> TrainResult:
    """Train in place; returns the (optionally checkpoint-averaged) model.

    With ``pretrain_steps > 0`` the first steps draw from ``noisy_pairs``
    mixed with ``pairs`` before switching to ``pairs`` alone.
    """
    if not pairs:
        raise ConfigurationError("empty training set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    enc = PairEncoder(vocab, sampler, cfg.use_constraints)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.max_lr, betas=cfg.betas, eps=cfg.adam_eps)
    mixed = list(pairs) + list(noisy_pairs or [])
    snapshots: list[dict] = []
    losses: list[float] = []
    model.train()
    for step in range(1, cfg.steps + 1):
        lr = inverse_sqrt_lr(step, cfg.max_lr, cfg.warmup)
        for group in opt.param_groups:
            group["lr"] = lr
        pool = mixed if step <= pretrain_steps else pairs
        idx = rng.integers(0, len(pool), size=min(cfg.batch_size, len(pool)))
        batch = enc.batch(
            [pool[int(i)] for i in idx],
            rng if cfg.resample_constraints else None,
            cfg.shuffle_constraints,
            cfg.token_dropout,
        )
        opt.zero_grad()
        loss = model.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss {value} at step {step} (lr={lr:.3g})")
        loss.backward()
        if cfg.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        opt.step()
        losses.append(value)
        if cfg.average_last and step % cfg.checkpoint_every == 0:
            snapshots.append({k: v.detach().clone() for k, v in model.state_dict().items()})
            snapshots = snapshots[-cfg.average_last :]
        if step % 500 == 0:
            log.debug("step %d loss %.4f lr %.2e", step, value, lr)
    model.eval()
    last = {k: v.detach().clone() for k, v in model.state_dict().items()}
    if cfg.average_last > 1 and len(snapshots) > 1:
        model.load_state_dict(average_state_dicts(snapshots))
    return TrainResult(model, losses, last)


def eval_loss(model: Seq2Seq, pairs: Sequence[SentencePair], vocab: Vocabulary, sampler: SamplerConfig,
              use_constraints: bool = True, label_smoothing: float = 0.0, batch_size: int = 64) -> float:
    """Token-averaged loss with the pairs' stored constraints, dropout off."""
    enc = PairEncoder(vocab, sampler, use_constraints)
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = enc.batch(pairs[start : start + batch_size])
            n = batch.n_tokens
            total += float(model.loss(batch, label_smoothing)) * n
            count += n
    model.train(was_training)
    return total / max(count, 1)


def grad_check(
    model: Seq2Seq,
    batch: Batch,
    step: float = 1e-4,
    max_entries: int | None = 24,
    floor: float = 1e-6,
    seed: int = 0,
) -> dict[str, float]:
    """Compare autograd gradients with central differences in float64.

    Returns the maximum relative error per parameter tensor; the relative
    error of one entry is ``|a - n| / max(|a|, |n|, floor)``.  At most
    ``max_entries`` entries per tensor are probed (all when ``None``),
    always including the largest-magnitude analytic entry.
    """
    m = copy.deepcopy(model).double().eval()
    rng = np.random.default_rng(seed)

    def loss_fn() -> torch.Tensor:
        return m.loss(batch)

    m.zero_grad()
    loss_fn().backward()
    report = {}
    with torch.no_grad():
        for name, p in m.named_parameters():
            grad = p.grad.detach().clone().reshape(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=p.dtype)
            flat = p.data.view(-1)
            n = flat.numel()
            if max_entries is None or n <= max_entries:
                probe = np.arange(n)
            else:
                probe = rng.choice(n, size=max_entries - 1, replace=False)
                probe = np.unique(np.append(probe, int(grad.abs().argmax())))
            worst = 0.0
            for i in probe:
                i = int(i)
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                numeric = (up - down) / (2 * step)
                analytic = float(grad[i])
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
                worst = max(worst, rel)
            report[name] = worst
    return report


def parameter_gradients(model: Seq2Seq, batch: Batch) -> dict[str, torch.Tensor]:
    m = copy.deepcopy(model).double().eval()
    m.zero_grad()
    m.loss(batch).backward()
    return {n: (p.grad.clone() if p.grad is not None else torch.zeros_like(p)) for n, p in m.named_parameters()}


def noisy_copies(pairs: Sequence[SentencePair], rate: float, seed: int) -> list[SentencePair]:
    """Source-side token dropout, used as a stand-in for out-of-domain data."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError("noise rate must be in [0, 1)")
    rng = np.random.default_rng(seed)
    out = []
    for p in pairs:
        words = p.source.split()
        kept = [w for w in words if rng.random() >= rate] or words[:1]
        out.append(SentencePair(id=f"{p.id}~noisy", source=" ".join(kept), target=p.target))
    return out
