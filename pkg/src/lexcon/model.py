"""A one-block Transformer encoder-decoder with a pointer-generator head.

The encoder input vector at each position is the sum of a token, a
position and a segment embedding.  The decoder output distribution mixes
the tied-embedding vocabulary softmax with a copy distribution obtained by
scattering cross-attention weights onto the token ids of the encoder
input::

    p(y) = g * softmax(h E^T)[y] + (1 - g) * sum_{j : x_j = y} a_j

where ``g = sigmoid(w . h + b)`` is computed from the decoder state and
``a`` is the attention of the first ``copy_heads`` cross-attention heads
(averaged).  Keeping the copy on a dedicated head leaves the remaining
heads free to read the source; when every head has to point at the
constraint region, the one-block decoder loses track of the source word
it is translating.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from lexcon.augmentation import AugmentedInput
from lexcon.errors import ConfigurationError, DataError


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    ffn_dim: int = 64
    max_source_positions: int = 64
    max_constraint_positions: int = 64
    max_target_positions: int = 160
    n_segments: int = 15
    copy_heads: int = 1
    label_smoothing: float = 0.1
    dropout: float = 0.1
    use_pointer: bool = True
    use_segments: bool = True
    copy_mask_separators: bool = False
    pad_id: int = -1
    sep_id: int = -1

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigurationError("vocab_size must be >= 1")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.n_segments < 1:
            raise ConfigurationError("n_segments must be >= 1")
        if not 1 <= self.copy_heads <= self.n_heads:
            raise ConfigurationError(f"copy_heads must be in [1, n_heads], got {self.copy_heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_input_positions(self) -> int:
        return self.max_source_positions + self.max_constraint_positions

    def to_dict(self) -> dict:
        return asdict(self)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, query, key, key_padding_mask=None, causal=False):
        B, Tq, D = query.shape
        Tk = key.shape[1]
        h, hd = self.n_heads, self.head_dim
        q = self.q(query).view(B, Tq, h, hd).transpose(1, 2)
        k = self.k(key).view(B, Tk, h, hd).transpose(1, 2)
        v = self.v(key).view(B, Tk, h, hd).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(Tq, Tk, dtype=torch.bool, device=query.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = weights @ v
        ctx = ctx.transpose(1, 2).reshape(B, Tq, D)
        return self.o(ctx), weights


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x):
        # gelu rather than relu keeps the loss smooth for finite differences
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.dropout = cfg.dropout

    def forward(self, x, pad_mask):
        h = self.ln1(x)
        x = x + F.dropout(self.attn(h, h, pad_mask)[0], self.dropout, self.training)
        x = x + F.dropout(self.ffn(self.ln2(x)), self.dropout, self.training)
        return self.ln_out(x)


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim)
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.dropout = cfg.dropout
        self.copy_heads = cfg.copy_heads

    def forward(self, y, memory, mem_pad_mask, tgt_pad_mask=None):
        h = self.ln1(y)
        y = y + F.dropout(self.self_attn(h, h, tgt_pad_mask, causal=True)[0], self.dropout, self.training)
        ctx, cross = self.cross_attn(self.ln2(y), memory, mem_pad_mask)
        y = y + F.dropout(ctx, self.dropout, self.training)
        y = y + F.dropout(self.ffn(self.ln3(y)), self.dropout, self.training)
        return self.ln_out(y), cross[:, : self.copy_heads].mean(dim=1)


@dataclass
class EncoderMemory:
    """Encoder states for a batch plus what the copy head needs."""

    states: torch.Tensor  # (B, S, d)
    tokens: torch.Tensor  # (B, S) token ids of the augmented input
    pad_mask: torch.Tensor  # (B, S) True on padding
    copy_mask: torch.Tensor | None = field(default=None)  # (B, S) True where copying is disallowed

    def expand(self, n: int) -> "EncoderMemory":
        """Repeat a single-sentence memory ``n`` times along the batch axis."""
        return EncoderMemory(
            self.states.expand(n, -1, -1),
            self.tokens.expand(n, -1),
            self.pad_mask.expand(n, -1),
            None if self.copy_mask is None else self.copy_mask.expand(n, -1),
        )


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.tok_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.n_input_positions, d)
        self.seg_emb = nn.Embedding(cfg.n_segments, d) if cfg.use_segments else None
        self.dec_pos_emb = nn.Embedding(cfg.max_target_positions, d)
        self.encoder = EncoderBlock(cfg)
        self.decoder = DecoderBlock(cfg)
        self.copy_gate = nn.Linear(d, 1) if cfg.use_pointer else None
        self.gate_override: float | None = None

    @property
    def output_projection(self) -> torch.Tensor:
        return self.tok_emb.weight

    def embed_input(self, tokens, positions, segments):
        """The three embedding terms of the encoder input, before summation."""
        if int(positions.max()) >= self.cfg.n_input_positions or int(positions.min()) < 0:
            raise DataError(
                f"position id {int(positions.max())} outside table of size {self.cfg.n_input_positions}"
            )
        if int(tokens.max()) >= self.cfg.vocab_size:
            raise DataError(f"token id {int(tokens.max())} outside vocabulary")
        scale = math.sqrt(self.cfg.d_model)
        tok = self.tok_emb(tokens) * scale
        pos = self.pos_emb(positions)
        if self.seg_emb is not None:
            if int(segments.max()) >= self.cfg.n_segments:
                raise DataError(f"segment id {int(segments.max())} outside table of size {self.cfg.n_segments}")
            seg = self.seg_emb(segments)
        else:
            seg = torch.zeros_like(pos)
        return tok, pos, seg

    def encode(self, tokens, positions, segments, pad_mask) -> EncoderMemory:
        tok, pos, seg = self.embed_input(tokens, positions, segments)
        x = F.dropout(tok + pos + seg, self.cfg.dropout, self.training)
        states = self.encoder(x, pad_mask)
        copy_mask = None
        if self.cfg.copy_mask_separators:
            copy_mask = tokens == self.cfg.sep_id
        return EncoderMemory(states, tokens, pad_mask, copy_mask)

    def decode(self, memory: EncoderMemory, prev_tokens, tgt_pad_mask=None) -> torch.Tensor:
        """Log-probabilities ``(B, T, V)`` for every decoder position."""
        B, T = prev_tokens.shape
        if T > self.cfg.max_target_positions:
            raise DataError(f"decoder length {T} exceeds max_target_positions={self.cfg.max_target_positions}")
        positions = torch.arange(T, device=prev_tokens.device).expand(B, T)
        y = self.tok_emb(prev_tokens) * math.sqrt(self.cfg.d_model) + self.dec_pos_emb(positions)
        y = F.dropout(y, self.cfg.dropout, self.training)
        h, cross = self.decoder(y, memory.states, memory.pad_mask, tgt_pad_mask)
        logits = h @ self.tok_emb.weight.t()
        if self.copy_gate is None:
            return torch.log_softmax(logits, dim=-1)
        p_vocab = torch.softmax(logits, dim=-1)
        if memory.copy_mask is not None:
            cross = cross.masked_fill(memory.copy_mask[:, None, :], 0.0)
            cross = cross / cross.sum(-1, keepdim=True).clamp_min(1e-30)
        index = memory.tokens[:, None, :].expand(B, T, memory.tokens.shape[1])
        p_copy = torch.zeros_like(p_vocab).scatter_add(-1, index, cross)
        if self.gate_override is None:
            g = torch.sigmoid(self.copy_gate(h))
        else:
            g = torch.full_like(h[..., :1], float(self.gate_override))
        return torch.log(g * p_vocab + (1.0 - g) * p_copy)

    def loss(self, batch: "Batch", label_smoothing: float | None = None) -> torch.Tensor:
        """Mean label-smoothed token cross-entropy over non-pad targets."""
        eps = self.cfg.label_smoothing if label_smoothing is None else label_smoothing
        memory = self.encode(batch.src_tokens, batch.src_positions, batch.src_segments, batch.src_pad)
        lprobs = self.decode(memory, batch.prev_tokens, batch.tgt_pad)
        nll = -lprobs.gather(-1, batch.targets[..., None]).squeeze(-1)
        smooth = -lprobs.mean(-1)
        per_tok = (1.0 - eps) * nll + eps * smooth
        keep = ~batch.tgt_pad
        return per_tok[keep].sum() / keep.sum()


@dataclass
class Batch:
    src_tokens: torch.Tensor
    src_positions: torch.Tensor
    src_segments: torch.Tensor
    src_pad: torch.Tensor
    prev_tokens: torch.Tensor
    targets: torch.Tensor
    tgt_pad: torch.Tensor

    @property
    def n_tokens(self) -> int:
        return int((~self.tgt_pad).sum())


def collate_inputs(inputs: Sequence[AugmentedInput], pad_id: int):
    S = max(len(a) for a in inputs)
    B = len(inputs)
    tok = np.full((B, S), pad_id, dtype=np.int64)
    pos = np.zeros((B, S), dtype=np.int64)
    seg = np.zeros((B, S), dtype=np.int64)
    pad = np.ones((B, S), dtype=bool)
    for i, a in enumerate(inputs):
        n = len(a)
        tok[i, :n] = a.token_ids
        pos[i, :n] = a.position_ids
        seg[i, :n] = a.segment_ids
        pad[i, :n] = False
    return torch.from_numpy(tok), torch.from_numpy(pos), torch.from_numpy(seg), torch.from_numpy(pad)


def make_batch(inputs: Sequence[AugmentedInput], targets: Sequence[Sequence[int]], pad_id: int, eos_id: int) -> Batch:
    """Teacher-forcing batch; the decoder is primed with ``eos`` as BOS."""
    tok, pos, seg, pad = collate_inputs(inputs, pad_id)
    T = max(len(t) for t in targets) + 1
    B = len(targets)
    prev = np.full((B, T), pad_id, dtype=np.int64)
    tgt = np.full((B, T), pad_id, dtype=np.int64)
    tgt_pad = np.ones((B, T), dtype=bool)
    for i, t in enumerate(targets):
        n = len(t)
        prev[i, 0] = eos_id
        prev[i, 1 : n + 1] = t
        tgt[i, :n] = t
        tgt[i, n] = eos_id
        tgt_pad[i, : n + 1] = False
    prev, tgt, tgt_pad = torch.from_numpy(prev), torch.from_numpy(tgt), torch.from_numpy(tgt_pad)
    return Batch(tok, pos, seg, pad, prev, tgt, tgt_pad)


def init_model(cfg: ModelConfig, rng_seed: int) -> Seq2Seq:
    """Build a model with deterministic, seed-dependent parameters."""
    if not isinstance(cfg, ModelConfig):
        raise ConfigurationError("init_model expects a ModelConfig")
    gen = torch.Generator().manual_seed(int(rng_seed))
    model = Seq2Seq(cfg)
    std = cfg.d_model**-0.5
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("emb.weight"):
                p.copy_(torch.randn(p.shape, generator=gen) * std)
            elif p.dim() == 2:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.copy_((torch.rand(p.shape, generator=gen) * 2 - 1) * bound)
            elif "ln" in name and name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    return model


def encode_input(model: Seq2Seq, aug: AugmentedInput) -> EncoderMemory:
    """Encoder memory for one augmented input (batch axis of size 1)."""
    tok, pos, seg, pad = collate_inputs([aug], model.cfg.pad_id if model.cfg.pad_id >= 0 else 0)
    with torch.no_grad():
        return model.encode(tok, pos, seg, pad)


def forward_step(model: Seq2Seq, memory: EncoderMemory, prefixes: Sequence[Sequence[int]], eos_id: int) -> np.ndarray:
    """Next-token log-probabilities ``(n, V)`` for equal-length prefixes.

    A single prefix may be passed as a flat sequence of ints.
    """
    if len(prefixes) == 0 or isinstance(prefixes[0], (int, np.integer)):
        prefixes = [prefixes]
    lengths = {len(p) for p in prefixes}
    if len(lengths) != 1:
        raise DataError("forward_step expects prefixes of one length")
    prev = torch.tensor([[eos_id, *p] for p in prefixes], dtype=torch.long)
    with torch.no_grad():
        lp = model.decode(memory.expand(len(prefixes)) if memory.states.shape[0] == 1 else memory, prev)
    return lp[:, -1, :].double().numpy()


def ensemble_scores(
    models: Sequence[Seq2Seq],
    memories: Sequence[EncoderMemory],
    prefixes,
    eos_id: int,
    space: str = "prob",
) -> np.ndarray:
    """Average the members' next-token distributions and renormalise.

    ``space="prob"`` averages probabilities; ``"logprob"`` averages
    log-probabilities (a normalised geometric mean).
    """
    if not models:
        raise ConfigurationError("empty ensemble")
    sizes = {m.cfg.vocab_size for m in models}
    if len(sizes) != 1:
        raise ConfigurationError(f"ensemble members disagree on vocabulary size: {sorted(sizes)}")
    outs = [forward_step(m, mem, prefixes, eos_id) for m, mem in zip(models, memories)]
    stack = np.stack(outs)
    if space == "prob":
        with np.errstate(divide="ignore"):
            mean = np.exp(stack).mean(0)
            mean /= mean.sum(-1, keepdims=True)
            return np.log(mean)
    if space == "logprob":
        mean = stack.mean(0)
        return mean - np.logaddexp.reduce(mean, axis=-1, keepdims=True)
    raise ConfigurationError(f"unknown ensemble space {space!r}")


def average_state_dicts(states: Sequence[dict]) -> dict:
    """Parameter-wise mean of several checkpoints."""
    if not states:
        raise ConfigurationError("nothing to average")
    out = {}
    for name in states[0]:
        out[name] = sum(s[name].double() for s in states) / len(states)
        out[name] = out[name].to(states[0][name].dtype)
    return out
