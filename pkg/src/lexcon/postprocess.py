"""Repairs that let exact constraint matching succeed on decoder output.

``restore_oov`` fills unknown-token sentinels from a constraint whose other
characters agree; ``repair_spacing`` re-spaces a constraint that occurs in
the output once all whitespace is ignored.  Both splice only the matched
span, leave every other character untouched, and iterate to a fixed point,
so applying them twice is the same as applying them once.  A splice is
kept only if it raises the number of satisfied constraints.
"""

from __future__ import annotations

import re
from typing import Iterator, Sequence

from lexcon.core import UNK
from lexcon.evaluation import constraint_hits

_WS = re.compile(r"\s+")


def _n_hits(text: str, constraints: Sequence[str]) -> int:
    return sum(constraint_hits(text, constraints))


def _stripped_with_map(text: str) -> tuple[str, list[int]]:
    chars, back = [], []
    for i, ch in enumerate(text):
        if not ch.isspace():
            chars.append(ch)
            back.append(i)
    return "".join(chars), back


def _token_bounds(text: str) -> tuple[set[int], set[int]]:
    starts, ends = set(), set()
    for m in re.finditer(r"\S+", text):
        starts.add(m.start())
        ends.add(m.end())
    return starts, ends


def _spacing_candidates(text: str, constraint: str) -> Iterator[str]:
    """Every splice of ``constraint`` over a boundary-aligned whitespace-free match, leftmost first."""
    target = _WS.sub("", constraint)
    if not target:
        return
    stripped, back = _stripped_with_map(text)
    starts, ends = _token_bounds(text)
    pos = stripped.find(target)
    while pos != -1:
        a = back[pos]
        b = back[pos + len(target) - 1] + 1
        if a in starts and b in ends:
            yield text[:a] + constraint + text[b:]
        pos = stripped.find(target, pos + 1)


def _splices(text: str, constraints: Sequence[str], hits: Sequence[bool], candidates) -> Iterator[str]:
    for c, ok in zip(constraints, hits):
        if not ok:
            for new in candidates(text, c):
                if new != text:
                    yield new


def _fixed_point(text: str, constraints: Sequence[str], candidates) -> tuple[str, int]:
    """Apply splices while they raise the number of satisfied constraints.

    A single splice is tried first.  When none helps, two splices in a row
    are tried: restoring one constraint can break an accidental match of a
    shorter one (``w1`` inside a mangled ``w1 1``) that a second splice
    then restores properly.  Progress is strict, so the loop terminates and
    a second application changes nothing.
    """
    repairs = 0
    while True:
        hits = constraint_hits(text, constraints)
        current = sum(hits)
        step = None
        for new in _splices(text, constraints, hits, candidates):
            if _n_hits(new, constraints) > current:
                step = (new, 1)
                break
        if step is None:
            for mid in _splices(text, constraints, hits, candidates):
                mid_hits = constraint_hits(mid, constraints)
                for new in _splices(mid, constraints, mid_hits, candidates):
                    if _n_hits(new, constraints) > current:
                        step = (new, 2)
                        break
                if step:
                    break
        if step is None:
            return text, repairs
        text, n = step
        repairs += n


def repair_spacing_counted(output: str, constraints: Sequence[str]) -> tuple[str, int]:
    return _fixed_point(output, constraints, _spacing_candidates)


def repair_spacing(output: str, constraints: Sequence[str]) -> str:
    """Re-space unmatched constraints found in the whitespace-free output.

    The leftmost whitespace-free occurrence whose span starts and ends on
    token boundaries, and whose replacement satisfies more constraints, is
    replaced by the constraint as written.
    """
    return repair_spacing_counted(output, constraints)[0]


def _unk_pattern(token: str) -> re.Pattern | None:
    if UNK not in token:
        return None
    parts = [re.escape(p) for p in token.split(UNK)]
    return re.compile(".+?".join(parts), re.DOTALL)


def _oov_candidates(text: str, constraint: str) -> Iterator[str]:
    c_toks = constraint.split()
    m = len(c_toks)
    spans = [(mm.start(), mm.end(), mm.group()) for mm in re.finditer(r"\S+", text)]
    for i in range(len(spans) - m + 1):
        window = spans[i : i + m]
        has_unk = False
        for (_, _, tok), want in zip(window, c_toks):
            if tok == want:
                continue
            pat = _unk_pattern(tok)
            if pat is None or not pat.fullmatch(want):
                break
            has_unk = True
        else:
            if has_unk:
                out = text
                for (a, b, tok), want in reversed(list(zip(window, c_toks))):
                    out = out[:a] + want + out[b:]
                yield out


def restore_oov_counted(output: str, constraints: Sequence[str]) -> tuple[str, int]:
    return _fixed_point(output, constraints, _oov_candidates)


def restore_oov(output: str, constraints: Sequence[str]) -> str:
    """Replace unknown-token sentinels with the characters of a matching constraint.

    A window of output tokens aligns with a constraint when every token is
    either identical to the constraint token or matches it with each
    sentinel standing for one or more characters.  Leftmost window wins.
    """
    return restore_oov_counted(output, constraints)[0]


def postprocess(output: str, constraints: Sequence[str]) -> tuple[str, int]:
    """OOV restoration followed by spacing repair; returns ``(text, repairs)``."""
    text, n1 = restore_oov_counted(output, constraints)
    text, n2 = repair_spacing_counted(text, constraints)
    return text, n1 + n2


def postprocess_records(records: Sequence[dict], constraints_by_id: dict[str, Sequence[str]]) -> list[dict]:
    """Rewrite ``output`` in decoder JSONL records and add a ``repairs`` count."""
    out = []
    for rec in records:
        text, n = postprocess(rec["output"], constraints_by_id.get(rec["id"], ()))
        new = dict(rec)
        new["output"] = text
        new["repairs"] = n
        out.append(new)
    return out
