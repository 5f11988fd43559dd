"""Beam search, Grid Beam Search, Dynamic Beam Allocation, and an exhaustive oracle.

All searches share one expansion step.  A hypothesis lives in the *bank*
given by its ``tokens_met``; ``eos`` is only admissible from the full bank.
Each active hypothesis proposes its ``beam_size`` best vocabulary tokens
plus every token that advances a constraint, so progress toward the
constraints is always representable.

An ``eos`` candidate competes for a slot in the full bank and becomes a
finished hypothesis only when it ranks inside that bank's slot count, so
low-scoring early endings cannot fill the finished list.

* plain: one bank (no constraints), ``beam_size`` survivors per step.
* gbs: ``total_tokens + 1`` banks, each keeping ``beam_size`` survivors.
* dba: one beam of ``beam_size`` slots split across banks every step
  (see :func:`allocate_banks`).

Ranking ties are broken by lower token ids, then by shorter prefixes.
Final ranking divides the cumulative log-probability by ``len ** alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Protocol, Sequence

import numpy as np

from lexcon import kernels
from lexcon.constraints import ConstraintAutomaton, ConstraintSet, ConstraintState, build_automaton, forced_tokens
from lexcon.errors import ConfigurationError, ConstraintFailure

MODES = ("plain", "gbs", "dba")


class Scorer(Protocol):
    vocab_size: int
    eos: int

    def start(self, source: Any) -> Any: ...

    def step(self, ctx: Any, prefixes: Sequence[tuple[int, ...]]) -> np.ndarray: ...


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    max_len_a: float = 2.0
    max_len_b: int = 5
    length_norm: float = 0.6
    mode: str = "plain"

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigurationError("beam_size must be >= 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_len(0) < 1:
            raise ConfigurationError("max length formula must give at least 1")

    def max_len(self, source_len: int) -> int:
        return max(1, int(math.floor(self.max_len_a * source_len + self.max_len_b)))


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    cstate: ConstraintState
    finished: bool = False
    truncated: bool = False

    def normalized(self, alpha: float) -> float:
        return normalized_score(self.score, len(self.tokens), alpha)


def normalized_score(score: float, length: int, alpha: float) -> float:
    return score / (max(length, 1) ** alpha)


def _rank_key(h: Hypothesis):
    return (-h.score, h.tokens, len(h.tokens))


def _final_key(alpha: float):
    return lambda h: (-h.normalized(alpha), h.tokens, len(h.tokens))


def source_length(source: Any) -> int:
    n = getattr(source, "source_len", None)
    return int(n) if n is not None else len(source)


def allocate_banks(counts: Sequence[int], beam_size: int) -> list[int]:
    """Split ``beam_size`` slots across banks holding ``counts`` candidates.

    Slots are divided evenly across nonempty banks, with the remainder going
    one each to the highest banks.  A bank given more slots than it has
    candidates passes the surplus to the nearest lower bank with spare
    candidates (or, failing that, the nearest higher one).  The result
    always sums to ``beam_size``.
    """
    n = len(counts)
    alloc = [0] * n
    live = [i for i in range(n) if counts[i] > 0]
    if not live:
        if n:
            alloc[0] = beam_size
        return alloc
    base, extra = divmod(beam_size, len(live))
    for i in live:
        alloc[i] = base
    for i in sorted(live, reverse=True)[:extra]:
        alloc[i] += 1
    for i in sorted(live, reverse=True):
        surplus = alloc[i] - counts[i]
        if surplus <= 0:
            continue
        alloc[i] = counts[i]
        order = list(range(i - 1, -1, -1)) + list(range(i + 1, n))
        for j in order:
            if surplus == 0:
                break
            room = counts[j] - alloc[j]
            if room > 0:
                give = min(room, surplus)
                alloc[j] += give
                surplus -= give
        if surplus:
            # fewer candidates than slots overall; park the rest where it came from
            alloc[i] += surplus
    return alloc


@dataclass
class SearchTrace:
    """Per-step bookkeeping, used by tests of the bank invariants."""

    allocations: list[list[int]] = field(default_factory=list)
    bank_sizes: list[list[int]] = field(default_factory=list)


def _topk_tokens(row: np.ndarray, k: int) -> np.ndarray:
    finite = np.isfinite(row)
    order = np.lexsort((np.arange(row.shape[0]), -np.where(finite, row, -np.inf)))
    order = order[finite[order]]
    return order[:k]


def _search(scorer: Scorer, source: Any, aut: ConstraintAutomaton, cfg: DecodeConfig, mode: str,
            trace: SearchTrace | None = None) -> Hypothesis:
    eos = scorer.eos
    total = aut.total_tokens
    n_banks = total + 1
    max_len = cfg.max_len(source_length(source))
    k = cfg.beam_size
    ctx = scorer.start(source)
    active = [Hypothesis((), 0.0, aut.start())]
    finished: list[Hypothesis] = []
    last_active = active

    for _ in range(max_len):
        lp = np.asarray(scorer.step(ctx, [h.tokens for h in active]), dtype=np.float64)
        parents, toks, scores = [], [], []
        for i, h in enumerate(active):
            row = lp[i]
            complete = h.cstate.tokens_met >= total
            if not complete:
                row = row.copy()
                row[eos] = -np.inf
            cands = set(_topk_tokens(row, k).tolist())
            if not complete:
                cands.update(forced_tokens(aut, h.cstate))
            for t in sorted(cands):
                s = row[t]
                if np.isfinite(s):
                    parents.append(i)
                    toks.append(t)
                    scores.append(h.score + float(s))
        if not parents:
            break
        parents_a = np.asarray(parents, dtype=np.int32)
        toks_a = np.asarray(toks, dtype=np.int32)
        states = np.asarray([active[p].cstate.state for p in parents], dtype=np.int32)
        mets = np.frombuffer(b"".join(active[p].cstate.met for p in parents), dtype=np.uint8)
        mets = mets.reshape(len(parents), aut.n_phrases)
        new_s, new_m, new_c = kernels.advance_batch(aut, states, mets, toks_a)

        banks: list[list[Hypothesis]] = [[] for _ in range(n_banks)]
        for j in range(len(parents)):
            parent = active[parents_a[j]]
            tok = int(toks_a[j])
            if tok == eos:
                banks[total].append(Hypothesis(parent.tokens + (eos,), scores[j], parent.cstate, True))
                continue
            cs = ConstraintState(int(new_s[j]), new_m[j].tobytes(), int(new_c[j]))
            banks[cs.tokens_met].append(Hypothesis(parent.tokens + (tok,), scores[j], cs))
        for b in banks:
            b.sort(key=_rank_key)

        if mode == "dba":
            alloc = allocate_banks([len(b) for b in banks], k)
            if trace is not None:
                trace.allocations.append(alloc)
        else:
            alloc = [k] * n_banks
        # an eos candidate is final only if it ranks inside its bank's slots;
        # the open hypotheses of that bank still fill every slot
        top = banks[total]
        finished.extend(h for h in top[: alloc[total]] if h.finished)
        banks[total] = [h for h in top if not h.finished]
        survivors = [h for b, a in zip(banks, alloc) for h in b[:a]]
        if trace is not None:
            trace.bank_sizes.append([len(b) for b in banks])
        active = survivors
        if active:
            last_active = active
        if not active or len(finished) >= k:
            break

    alpha = cfg.length_norm
    if finished:
        return min(finished, key=_final_key(alpha))
    pool = active or last_active
    complete = [h for h in pool if h.cstate.tokens_met >= total]
    if complete:
        return replace(min(complete, key=_final_key(alpha)), truncated=True)
    best = min(pool, key=lambda h: (-h.cstate.tokens_met, -h.normalized(alpha), h.tokens))
    best = replace(best, truncated=True)
    if total == 0:
        return best
    raise ConstraintFailure(
        f"no constraint-complete hypothesis within {max_len} steps "
        f"(best partial met {best.cstate.tokens_met}/{total} tokens)",
        best,
    )


def _automaton(cs: ConstraintSet | ConstraintAutomaton | None) -> ConstraintAutomaton:
    if isinstance(cs, ConstraintAutomaton):
        return cs
    return build_automaton(cs if cs is not None else ConstraintSet(()))


def beam_search(scorer: Scorer, source: Any, cfg: DecodeConfig, trace: SearchTrace | None = None) -> Hypothesis:
    """Unconstrained beam search; returns the best finished hypothesis.

    When nothing finishes within the length budget the best unfinished
    hypothesis comes back with ``truncated=True``.
    """
    return _search(scorer, source, _automaton(None), cfg, "plain", trace)


def gbs_decode(scorer: Scorer, source: Any, cs, cfg: DecodeConfig, trace: SearchTrace | None = None) -> Hypothesis:
    return _search(scorer, source, _automaton(cs), cfg, "gbs", trace)


def dba_decode(scorer: Scorer, source: Any, cs, cfg: DecodeConfig, trace: SearchTrace | None = None) -> Hypothesis:
    return _search(scorer, source, _automaton(cs), cfg, "dba", trace)


def decode(scorer: Scorer, source: Any, cs, cfg: DecodeConfig, trace: SearchTrace | None = None) -> Hypothesis:
    """Dispatch on ``cfg.mode``; ``plain`` ignores ``cs``."""
    if cfg.mode == "plain":
        return beam_search(scorer, source, cfg, trace)
    if cfg.mode == "gbs":
        return gbs_decode(scorer, source, cs, cfg, trace)
    return dba_decode(scorer, source, cs, cfg, trace)


@dataclass(frozen=True)
class BruteForceResult:
    feasible: bool
    tokens: tuple[int, ...] = ()
    score: float = -math.inf
    normalized: float = -math.inf


def brute_force_decode(scorer: Scorer, source: Any, cs, max_len: int, length_norm: float = 0.6,
                       limit: int = 10**6) -> BruteForceResult:
    """Exhaustively score every ``eos``-terminated sequence up to ``max_len``.

    Only sequences that complete every constraint are eligible.  Refuses
    when ``vocab_size ** max_len`` exceeds ``limit``.
    """
    V = scorer.vocab_size
    if V**max_len > limit:
        raise ConfigurationError(f"brute force over {V}^{max_len} sequences exceeds limit {limit}")
    aut = _automaton(cs)
    eos = scorer.eos
    ctx = scorer.start(source)
    best: tuple | None = None
    level = [((), 0.0, aut.start())]
    for _ in range(max_len):
        if not level:
            break
        lp = np.asarray(scorer.step(ctx, [p for p, _, _ in level]), dtype=np.float64)
        nxt = []
        for (prefix, score, cst), row in zip(level, lp):
            if aut.is_complete(cst) and np.isfinite(row[eos]):
                seq = prefix + (eos,)
                s = score + float(row[eos])
                key = (-normalized_score(s, len(seq), length_norm), seq)
                if best is None or key < best[0]:
                    best = (key, seq, s)
            for t in range(V):
                if t != eos and np.isfinite(row[t]):
                    nxt.append((prefix + (t,), score + float(row[t]), aut.feed((t,), cst)))
        level = nxt
    if best is None:
        return BruteForceResult(False)
    (_, seq, s) = best
    return BruteForceResult(True, seq, s, normalized_score(s, len(seq), length_norm))


def rescore(scorer: Scorer, source: Any, tokens: Sequence[int]) -> float:
    """Sum of per-step log-probabilities the scorer assigns to ``tokens``."""
    ctx = scorer.start(source)
    total = 0.0
    for t in range(len(tokens)):
        total += float(np.asarray(scorer.step(ctx, [tuple(tokens[:t])]))[0, tokens[t]])
    return total
