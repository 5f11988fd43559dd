"""Multi-phrase constraint matching and per-hypothesis progress.

A :class:`ConstraintAutomaton` is an Aho-Corasick automaton over token ids,
compiled to a dense transition table plus CSR side tables so the hot
``advance`` path can run in the compiled kernel.

Credit rules (these define the bank a hypothesis lives in):

* Completing a phrase credits its full length.  A single occurrence in the
  stream credits at most one copy of a duplicated phrase; later
  occurrences credit further copies.
* Phrases complete independently, so overlapping phrases may share tokens.
* On top of completed phrases, the longest suffix of the stream that is a
  proper prefix of some still-unmet phrase is credited as partial progress.
  That credit is lost again if the partial match breaks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from lexcon import kernels
from lexcon.core import TokenSeq, Vocabulary, encode
from lexcon.errors import DataError


@dataclass(frozen=True)
class ConstraintSet:
    phrases: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        phrases = tuple(tuple(int(t) for t in p) for p in self.phrases)
        for i, p in enumerate(phrases):
            if not p:
                raise DataError(f"constraint phrase {i} is empty")
        object.__setattr__(self, "phrases", phrases)

    @property
    def total_tokens(self) -> int:
        return sum(len(p) for p in self.phrases)

    def __len__(self) -> int:
        return len(self.phrases)

    @classmethod
    def from_surfaces(cls, vocab: Vocabulary, phrases: Iterable[str]) -> "ConstraintSet":
        return cls(tuple(tuple(encode(vocab, p)) for p in phrases))


@dataclass(frozen=True)
class ConstraintState:
    state: int = 0
    met: bytes = b""
    tokens_met: int = 0

    def met_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.met) if f]


def _csr(rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(rows) + 1, dtype=np.int32)
    for i, r in enumerate(rows):
        ptr[i + 1] = ptr[i] + len(r)
    idx = np.fromiter((x for r in rows for x in r), dtype=np.int32, count=int(ptr[-1]))
    return ptr, idx


@dataclass(frozen=True, eq=False)
class ConstraintAutomaton:
    phrases: tuple[tuple[int, ...], ...]
    lens: np.ndarray
    delta: np.ndarray
    fail: np.ndarray
    depth: np.ndarray
    out_ptr: np.ndarray
    out_idx: np.ndarray
    term_ptr: np.ndarray
    term_idx: np.ndarray
    pre_ptr: np.ndarray
    pre_idx: np.ndarray
    kids_ptr: np.ndarray
    kids_idx: np.ndarray
    # list mirrors for the pure-Python kernel
    delta_l: list = field(repr=False)
    fail_l: list = field(repr=False)
    depth_l: list = field(repr=False)
    out_l: list = field(repr=False)
    term_l: list = field(repr=False)
    prefix_l: list = field(repr=False)
    kids_l: list = field(repr=False)
    lens_l: list = field(repr=False)
    # per-backend derived tables, filled lazily by the compiled kernels
    backend_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_phrases(self) -> int:
        return len(self.phrases)

    @property
    def n_states(self) -> int:
        return len(self.fail)

    @property
    def width(self) -> int:
        return self.delta.shape[1]

    @property
    def total_tokens(self) -> int:
        return int(self.lens.sum())

    def start(self) -> ConstraintState:
        return ConstraintState(0, bytes(self.n_phrases), 0)

    def is_complete(self, cstate: ConstraintState) -> bool:
        return cstate.tokens_met == self.total_tokens

    def feed(self, tokens: Iterable[int], cstate: ConstraintState | None = None) -> ConstraintState:
        cstate = cstate or self.start()
        for tok in tokens:
            cstate = advance(self, cstate, tok)
        return cstate


def build_automaton(cs: ConstraintSet | Sequence[Sequence[int]]) -> ConstraintAutomaton:
    phrases = cs.phrases if isinstance(cs, ConstraintSet) else ConstraintSet(tuple(map(tuple, cs))).phrases

    goto: list[dict[int, int]] = [{}]
    depth = [0]
    term: list[list[int]] = [[]]
    prefix_of: list[list[int]] = [[]]
    for p_idx, phrase in enumerate(phrases):
        node = 0
        prefix_of[0].append(p_idx)
        for k, tok in enumerate(phrase):
            nxt = goto[node].get(tok)
            if nxt is None:
                nxt = len(goto)
                goto[node][tok] = nxt
                goto.append({})
                depth.append(depth[node] + 1)
                term.append([])
                prefix_of.append([])
            node = nxt
            if k + 1 < len(phrase):
                prefix_of[node].append(p_idx)
        term[node].append(p_idx)

    n_states = len(goto)
    fail = [0] * n_states
    out: list[list[int]] = [[] for _ in range(n_states)]
    order = []
    queue = deque()
    for child in goto[0].values():
        queue.append(child)
    while queue:
        node = queue.popleft()
        order.append(node)
        for tok, child in goto[node].items():
            f = fail[node]
            while f and tok not in goto[f]:
                f = fail[f]
            fail[child] = goto[f].get(tok, 0) if goto[f].get(tok, 0) != child else 0
            queue.append(child)
    for node in [0] + order:
        # BFS order guarantees the failure target's output list is final
        own = [node] if term[node] else []
        out[node] = own + (out[fail[node]] if node else [])

    width = 1 + max((t for p in phrases for t in p), default=-1)
    delta = np.zeros((n_states, max(width, 1)), dtype=np.int32)
    for node in [0] + order:
        for tok in range(width):
            nxt = goto[node].get(tok)
            if nxt is not None:
                delta[node, tok] = nxt
            elif node:
                delta[node, tok] = delta[fail[node], tok]
    if width == 0:
        delta = delta[:, :0]

    kids = [sorted(g) for g in goto]
    out_ptr, out_idx = _csr(out)
    term_ptr, term_idx = _csr(term)
    pre_ptr, pre_idx = _csr(prefix_of)
    kids_ptr, kids_idx = _csr(kids)
    lens = np.array([len(p) for p in phrases], dtype=np.int32)
    return ConstraintAutomaton(
        phrases=phrases,
        lens=lens,
        delta=np.ascontiguousarray(delta),
        fail=np.array(fail, dtype=np.int32),
        depth=np.array(depth, dtype=np.int32),
        out_ptr=out_ptr,
        out_idx=out_idx,
        term_ptr=term_ptr,
        term_idx=term_idx,
        pre_ptr=pre_ptr,
        pre_idx=pre_idx,
        kids_ptr=kids_ptr,
        kids_idx=kids_idx,
        delta_l=delta.tolist(),
        fail_l=fail,
        depth_l=depth,
        out_l=out,
        term_l=term,
        prefix_l=[[p for p in row] for row in prefix_of],
        kids_l=kids,
        lens_l=lens.tolist(),
    )


def advance(aut: ConstraintAutomaton, cstate: ConstraintState, token: int) -> ConstraintState:
    s, met, credit = kernels.advance_one(aut, cstate.state, cstate.met, int(token))
    return ConstraintState(s, met, credit)


def forced_tokens(aut: ConstraintAutomaton, cstate: ConstraintState) -> set[int]:
    """Tokens that strictly increase ``tokens_met`` from ``cstate``."""
    if cstate.tokens_met >= aut.total_tokens:
        return set()
    return set(kernels.forced_tokens(aut, cstate.state, cstate.met, cstate.tokens_met))


def completed_counts(aut: ConstraintAutomaton, tokens: TokenSeq) -> list[int]:
    """Replay ``tokens`` and report which phrase copies were credited (0/1 each)."""
    return list(aut.feed(tokens).met)
