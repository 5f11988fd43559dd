"""Pure-Python constraint-tracking kernels.

Reference implementation and fallback for ``_ckernels``.  Both modules
expose the same three functions over an :class:`AutomatonTables`; the
compiled one reads the numpy arrays, this one reads the list mirrors.
"""

from __future__ import annotations

import numpy as np


def advance_one(t, state: int, met: bytes, token: int) -> tuple[int, bytes, int]:
    delta = t.delta_l
    ns = delta[state][token] if 0 <= token < t.width else 0
    flags = bytearray(met)
    for node in t.out_l[ns]:
        for p in t.term_l[node]:
            if not flags[p]:
                flags[p] = 1
                break
    lens = t.lens_l
    credit = 0
    for p in range(len(flags)):
        if flags[p]:
            credit += lens[p]
    node = ns
    fail = t.fail_l
    prefix_of = t.prefix_l
    while node != 0:
        hit = False
        for p in prefix_of[node]:
            if not flags[p]:
                hit = True
                break
        if hit:
            credit += t.depth_l[node]
            break
        node = fail[node]
    return ns, bytes(flags), credit


def advance_batch(t, states, mets, tokens):
    """Vectorised form of :func:`advance_one` for decoder candidate lists.

    ``mets`` is a ``(n, P)`` uint8 array; returns ``(states, mets, tokens_met)``.
    """
    n = len(states)
    out_s = np.empty(n, dtype=np.int32)
    out_m = np.empty((n, t.n_phrases), dtype=np.uint8)
    out_c = np.empty(n, dtype=np.int32)
    for i in range(n):
        s, m, c = advance_one(t, int(states[i]), bytes(mets[i]), int(tokens[i]))
        out_s[i] = s
        out_m[i] = np.frombuffer(m, dtype=np.uint8) if t.n_phrases else out_m[i]
        out_c[i] = c
    return out_s, out_m, out_c


def forced_tokens(t, state: int, met: bytes, tokens_met: int) -> list[int]:
    candidates: set[int] = set()
    node = state
    fail = t.fail_l
    kids = t.kids_l
    while True:
        candidates.update(kids[node])
        if node == 0:
            break
        node = fail[node]
    out = []
    for tok in sorted(candidates):
        if advance_one(t, state, met, tok)[2] > tokens_met:
            out.append(tok)
    return out
