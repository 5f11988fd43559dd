# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled constraint-tracking kernels; see ``_kernels_py`` for the reference."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef class _Tables:
    """Typed views over one automaton's arrays, built once and cached on it."""

    cdef const int[:, ::1] delta
    cdef int width
    cdef const int[::1] out_ptr, out_idx, term_ptr, term_idx
    cdef const int[::1] pre_ptr, pre_idx, kids_ptr, kids_idx
    cdef const int[::1] fail, depth, lens
    cdef Py_ssize_t n_phrases

    def __init__(self, t):
        self.delta = t.delta
        self.width = t.width
        self.out_ptr = t.out_ptr
        self.out_idx = t.out_idx
        self.term_ptr = t.term_ptr
        self.term_idx = t.term_idx
        self.pre_ptr = t.pre_ptr
        self.pre_idx = t.pre_idx
        self.kids_ptr = t.kids_ptr
        self.kids_idx = t.kids_idx
        self.fail = t.fail
        self.depth = t.depth
        self.lens = t.lens
        self.n_phrases = t.n_phrases


cdef _Tables _tables(t):
    cache = t.backend_cache
    tab = cache.get("cython")
    if tab is None:
        tab = _Tables(t)
        cache["cython"] = tab
    return <_Tables>tab


cdef inline int _step(_Tables tb, int state, int token) noexcept:
    if token < 0 or token >= tb.width:
        return 0
    return tb.delta[state, token]


cdef int _credit(_Tables tb, int ns, unsigned char[::1] flags) noexcept:
    """Mark the first unmet phrase ending at ``ns``; return the tokens-met count."""
    cdef Py_ssize_t a, b, p
    cdef int node, credit = 0
    for a in range(tb.out_ptr[ns], tb.out_ptr[ns + 1]):
        node = tb.out_idx[a]
        for b in range(tb.term_ptr[node], tb.term_ptr[node + 1]):
            p = tb.term_idx[b]
            if flags[p] == 0:
                flags[p] = 1
                break
    for p in range(flags.shape[0]):
        if flags[p]:
            credit += tb.lens[p]
    node = ns
    while node != 0:
        for b in range(tb.pre_ptr[node], tb.pre_ptr[node + 1]):
            if flags[tb.pre_idx[b]] == 0:
                return credit + tb.depth[node]
        node = tb.fail[node]
    return credit


def advance_one(t, int state, bytes met, int token):
    cdef _Tables tb = _tables(t)
    cdef int ns = _step(tb, state, token)
    cdef bytearray buf = bytearray(met)
    cdef unsigned char[::1] flags = buf
    cdef int credit = _credit(tb, ns, flags)
    return ns, bytes(buf), credit


def advance_batch(t, states, mets, tokens):
    cdef _Tables tb = _tables(t)
    cdef const int[::1] st = np.ascontiguousarray(states, dtype=np.int32)
    cdef const int[::1] tk = np.ascontiguousarray(tokens, dtype=np.int32)
    cdef Py_ssize_t n = st.shape[0], i
    out_m_arr = np.array(mets, dtype=np.uint8, copy=True, order="C").reshape(n, tb.n_phrases)
    out_s_arr = np.empty(n, dtype=np.int32)
    out_c_arr = np.empty(n, dtype=np.int32)
    cdef unsigned char[:, ::1] out_m = out_m_arr
    cdef int[::1] out_s = out_s_arr
    cdef int[::1] out_c = out_c_arr
    cdef int ns
    for i in range(n):
        ns = _step(tb, st[i], tk[i])
        out_s[i] = ns
        out_c[i] = _credit(tb, ns, out_m[i])
    return out_s_arr, out_m_arr, out_c_arr


def forced_tokens(t, int state, bytes met, int tokens_met):
    cdef _Tables tb = _tables(t)
    cdef const unsigned char[::1] orig = met
    cdef bytearray buf = bytearray(met)
    cdef unsigned char[::1] flags = buf
    cdef Py_ssize_t a, n_flags = orig.shape[0]
    cdef int node = state, tok
    cands = set()
    while True:
        for a in range(tb.kids_ptr[node], tb.kids_ptr[node + 1]):
            cands.add(tb.kids_idx[a])
        if node == 0:
            break
        node = tb.fail[node]
    out = []
    for tok in sorted(cands):
        for a in range(n_flags):
            flags[a] = orig[a]
        if _credit(tb, _step(tb, state, tok), flags) > tokens_met:
            out.append(tok)
    return out
