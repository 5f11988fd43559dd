"""Corpus BLEU, constraint consistency (term% / sent%) and the combined score.

Constraint matching is exact and case-sensitive at word boundaries: a
constraint matches where its whitespace tokens occur contiguously in the
hypothesis.  A constraint listed ``m`` times needs ``m`` occurrences (at
distinct start positions); :func:`constraint_hits` is the only place this
rule lives.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from lexcon.errors import DataError


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4):
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4) -> float:
    """Unsmoothed corpus BLEU-4 on whitespace tokens, scaled to 0-100."""
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise DataError("BLEU needs at least one sentence")
    matches, totals, c, r = bleu_stats(hyps, refs, max_n)
    if c == 0 or any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def _occurrences(hyp_tokens: Sequence[str], phrase_tokens: Sequence[str]) -> int:
    n = len(phrase_tokens)
    if n == 0:
        return 0
    return sum(
        1 for i in range(len(hyp_tokens) - n + 1) if list(hyp_tokens[i : i + n]) == list(phrase_tokens)
    )


def constraint_hits(hyp: str, constraints: Sequence[str]) -> list[bool]:
    """Which listed constraints the hypothesis satisfies.

    The ``j``-th copy of a repeated constraint is satisfied when the phrase
    occurs more than ``j`` times.
    """
    tokens = hyp.split()
    seen: Counter = Counter()
    cache: dict[str, int] = {}
    hits = []
    for c in constraints:
        key = " ".join(c.split())
        if key not in cache:
            cache[key] = _occurrences(tokens, key.split())
        hits.append(seen[key] < cache[key])
        seen[key] += 1
    return hits


def compliant(hyp: str, constraints: Sequence[str]) -> bool:
    return all(constraint_hits(hyp, constraints))


def consistency(hyps: Sequence[str], constraint_lists: Sequence[Sequence[str]]) -> tuple[float, float]:
    """Return ``(term%, sent%)``; sentences without constraints count as compliant."""
    if len(hyps) != len(constraint_lists):
        raise DataError("hypotheses and constraint lists differ in length")
    n_terms = n_hit = n_sent = 0
    for h, cons in zip(hyps, constraint_lists):
        hits = constraint_hits(h, cons)
        n_terms += len(hits)
        n_hit += sum(hits)
        n_sent += all(hits)
    term = 100.0 if n_terms == 0 else 100.0 * n_hit / n_terms
    sent = 100.0 if not hyps else 100.0 * n_sent / len(hyps)
    return term, sent


def combined_score(hyps: Sequence[str], refs: Sequence[str], constraint_lists: Sequence[Sequence[str]]) -> float:
    """Corpus BLEU after blanking every hypothesis that misses a constraint."""
    if len(hyps) != len(constraint_lists):
        raise DataError("hypotheses and constraint lists differ in length")
    kept = [h if compliant(h, c) else "" for h, c in zip(hyps, constraint_lists)]
    return corpus_bleu(kept, refs)


@dataclass
class EvalReport:
    bleu: float
    term_pct: float
    sent_pct: float
    combined: float
    per_sentence: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    def summary(self) -> dict:
        return {"bleu": self.bleu, "term_pct": self.term_pct, "sent_pct": self.sent_pct, "combined": self.combined}


def evaluate(
    hyps: Sequence[str],
    refs: Sequence[str],
    constraint_lists: Sequence[Sequence[str]],
    ids: Sequence[str] | None = None,
) -> EvalReport:
    if not (len(hyps) == len(refs) == len(constraint_lists)):
        raise DataError("hypotheses, references and constraints must align")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(hyps))]
    rows = []
    for sid, h, cons in zip(ids, hyps, constraint_lists):
        hits = constraint_hits(h, cons)
        rows.append(
            {
                "id": sid,
                "hits": hits,
                "missing": [c for c, ok in zip(cons, hits) if not ok],
                "emptied": not all(hits),
            }
        )
    term, sent = consistency(hyps, constraint_lists)
    return EvalReport(
        bleu=corpus_bleu(hyps, refs),
        term_pct=term,
        sent_pct=sent,
        combined=combined_score(hyps, refs, constraint_lists),
        per_sentence=rows,
    )


def render_table(rows: Sequence[tuple[str, EvalReport]], with_combined: bool = True) -> str:
    """Fixed-width text table with one line per setting."""
    name_w = max([len("Setting")] + [len(n) for n, _ in rows])
    head = f"{'Setting':<{name_w}}  {'BLEU':>7}  {'Term%':>7}  {'Sent%':>7}"
    if with_combined:
        head += f"  {'Final':>7}"
    lines = [head, "-" * len(head)]
    for name, r in rows:
        line = f"{name:<{name_w}}  {r.bleu:7.2f}  {r.term_pct:7.2f}  {r.sent_pct:7.2f}"
        if with_combined:
            line += f"  {r.combined:7.2f}"
        lines.append(line)
    return "\n".join(lines)
