"""Deliberately naive reference implementations used only by the tests."""

from collections import Counter


def occurrences(stream, phrase):
    """Number of (possibly overlapping) positions where ``phrase`` occurs."""
    n, m = len(stream), len(phrase)
    return sum(1 for i in range(n - m + 1) if list(stream[i : i + m]) == list(phrase))


def completion_multiset(phrases, stream):
    """Copies of each distinct phrase that a stream completes, capped at its multiplicity."""
    want = Counter(tuple(p) for p in phrases)
    return {p: min(k, occurrences(stream, p)) for p, k in want.items()}


def tokens_met(phrases, stream):
    """Completed lengths plus the longest proper prefix of an unmet copy that ends the stream.

    A full trailing match of an unmet copy is not partial progress: that
    occurrence has already been credited to an earlier copy of the phrase.
    """
    done = completion_multiset(phrases, stream)
    credit = sum(len(p) * k for p, k in done.items())
    unmet = [p for p, k in Counter(tuple(p) for p in phrases).items() if done[p] < k]
    partial = 0
    for p in unmet:
        for k in range(len(p) - 1, 0, -1):
            if k <= len(stream) and list(stream[len(stream) - k :]) == list(p[:k]):
                partial = max(partial, k)
                break
    return credit + partial


def word_contains(text, phrase):
    """Whole-word containment by scanning token windows."""
    words, target = text.split(), phrase.split()
    return occurrences(words, target) > 0
