"""Vocabulary, whitespace tokenization, dataset records and the toy task.

The toy task stands in for a real parallel corpus.  Source sentences are
drawn from a synthetic alphabet ``w0 .. w{n-1}``; targets are produced by a
seeded permutation of that alphabet followed by reversal inside fixed-size
windows.  Three optional knobs make the task behave more like terminology
translation:

* ``synonym_rate``: a fraction of source words get a second rendering
  (``v{j}`` instead of ``w{j}``).  Each sentence picks one register with
  probability ``register_prob`` and then uses the second rendering for
  every word that has one.  Nothing in the source reveals the register,
  so only a constraint (or an earlier output word) can resolve it.
* ``split_rate``: a fraction of target words are written as two pieces,
  ``w{j} +w{j}``.  A token starting with ``+`` continues the previous word,
  so constraints sampled as words can span several ids.
* ``entity_rate``: each source position is replaced, with this
  probability, by the placeholder ``x``, whose target is a name drawn
  uniformly from ``n0 .. n{entity_pool-1}``.  The name is invisible in the
  source, so a model can only get it right by reading it from a constraint.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from lexcon.errors import ConfigurationError, DataError

PAD = "<pad>"
EOS = "<eos>"
SEP = "<sep>"
UNK = "⟨unk⟩"
SPECIALS = (PAD, EOS, SEP, UNK)
CONTINUATION = "+"

TokenSeq = list[int]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False, compare=False)
    pad: int
    eos: int
    sep: int
    unk: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {"pad": self.pad, "eos": self.eos, "sep": self.sep, "unk": self.unk}

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset((self.pad, self.eos, self.sep, self.unk))

    @classmethod
    def from_tokens(cls, corpus_tokens: Iterable[str]) -> "Vocabulary":
        tokens = tuple(corpus_tokens) + SPECIALS
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("vocabulary surfaces must be unique")
        index = {t: i for i, t in enumerate(tokens)}
        return cls(
            tokens=tokens,
            index=index,
            pad=index[PAD],
            eos=index[EOS],
            sep=index[SEP],
            unk=index[UNK],
        )

    def to_json(self) -> str:
        n = len(self.tokens) - len(SPECIALS)
        return json.dumps(
            {
                "version": 1,
                "tokens": list(self.tokens[:n]),
                "specials": {"pad": PAD, "eos": EOS, "sep": SEP, "unk": UNK},
            },
            ensure_ascii=False,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        data = json.loads(text)
        if data.get("version") != 1:
            raise DataError(f"unsupported vocabulary version {data.get('version')!r}")
        if data.get("specials") != {"pad": PAD, "eos": EOS, "sep": SEP, "unk": UNK}:
            raise DataError("vocabulary specials block does not match this build")
        return cls.from_tokens(data["tokens"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Sequence[str]) -> Vocabulary:
    """Collect every whitespace token of ``corpus`` (sorted) and append specials."""
    if len(corpus) == 0:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")
    seen: set[str] = set()
    for line in corpus:
        seen.update(line.split())
    seen.difference_update(SPECIALS)
    return Vocabulary.from_tokens(sorted(seen))


def encode(vocab: Vocabulary, text: str) -> TokenSeq:
    unk = vocab.unk
    return [vocab.index.get(tok, unk) for tok in text.split()]


def decode_tokens(vocab: Vocabulary, seq: Iterable[int]) -> str:
    skip = (vocab.pad, vocab.eos, vocab.sep)
    out = []
    size = len(vocab.tokens)
    for i in seq:
        i = int(i)
        if not 0 <= i < size:
            raise DataError(f"token id {i} outside vocabulary of size {size}")
        if i in skip:
            continue
        out.append(vocab.tokens[i])
    return " ".join(out)


def split_words(text: str) -> list[str]:
    """Group whitespace tokens into words; ``+``-prefixed pieces attach left."""
    words: list[list[str]] = []
    for tok in text.split():
        if tok.startswith(CONTINUATION) and words:
            words[-1].append(tok)
        else:
            words.append([tok])
    return [" ".join(w) for w in words]


@dataclass(frozen=True)
class SentencePair:
    id: str
    source: str
    target: str
    constraints: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if not c.strip():
                raise DataError(f"sentence {self.id}: empty constraint phrase")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constraints"] = list(self.constraints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SentencePair":
        try:
            return cls(
                id=str(d["id"]),
                source=d["source"],
                target=d["target"],
                constraints=tuple(d.get("constraints", ())),
            )
        except KeyError as exc:
            raise DataError(f"dataset record missing field {exc}") from None


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def save_pairs(path: str | Path, pairs: Iterable[SentencePair]) -> None:
    write_jsonl(path, (p.to_dict() for p in pairs))


def load_pairs(path: str | Path) -> list[SentencePair]:
    return [SentencePair.from_dict(d) for d in read_jsonl(path)]


@dataclass(frozen=True)
class ToyTaskSpec:
    source_alphabet_size: int = 50
    sentence_length_range: tuple[int, int] = (3, 10)
    mapping_seed: int = 0
    reorder_window: int = 2
    synonym_rate: float = 0.0
    register_prob: float = 0.5
    split_rate: float = 0.0
    entity_rate: float = 0.0
    entity_pool: int = 0

    def __post_init__(self):
        lo, hi = self.sentence_length_range
        if self.source_alphabet_size < 1:
            raise ConfigurationError("source_alphabet_size must be >= 1")
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad sentence_length_range {self.sentence_length_range}")
        if self.reorder_window < 1:
            raise ConfigurationError("reorder_window must be >= 1")
        if self.entity_rate > 0 and self.entity_pool < 1:
            raise ConfigurationError("entity_rate > 0 needs entity_pool >= 1")
        for name in ("synonym_rate", "register_prob", "split_rate", "entity_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class ToyLexicon:
    """The seeded word map behind a :class:`ToyTaskSpec`."""

    primary: tuple[str, ...]
    alternate: tuple[str | None, ...]
    split: frozenset[str]
    names: tuple[str, ...] = ()

    def render(self, word: str) -> str:
        if word in self.split:
            return f"{word} {CONTINUATION}{word}"
        return word

    def inverse(self) -> dict[str, int]:
        """Map each target word surface back to its source index."""
        inv = {}
        for i, (p, a) in enumerate(zip(self.primary, self.alternate)):
            inv[self.render(p)] = i
            if a is not None:
                inv[self.render(a)] = i
        for name in self.names:
            inv[name] = ENTITY_INDEX
        return inv


ENTITY_INDEX = -1
ENTITY_SOURCE = "x"


def source_word(i: int) -> str:
    return ENTITY_SOURCE if i == ENTITY_INDEX else f"w{i}"


def toy_lexicon(spec: ToyTaskSpec) -> ToyLexicon:
    rng = np.random.default_rng(spec.mapping_seed)
    n = spec.source_alphabet_size
    perm = rng.permutation(n)
    primary = tuple(f"w{int(j)}" for j in perm)
    has_alt = rng.random(n) < spec.synonym_rate
    alternate = tuple(f"v{int(j)}" if a else None for j, a in zip(perm, has_alt))
    words = list(primary) + [a for a in alternate if a is not None]
    split_mask = rng.random(len(words)) < spec.split_rate
    split = frozenset(w for w, s in zip(words, split_mask) if s)
    names = tuple(f"n{j}" for j in range(spec.entity_pool)) if spec.entity_rate > 0 else ()
    return ToyLexicon(primary=primary, alternate=alternate, split=split, names=names)


def reorder_windows(items: Sequence, window: int) -> list:
    out: list = []
    for start in range(0, len(items), window):
        out.extend(reversed(items[start : start + window]))
    return out


def generate_toy_corpus(spec: ToyTaskSpec, n: int, rng_seed: int, id_prefix: str = "s") -> list[SentencePair]:
    if n < 1:
        raise ConfigurationError("corpus size must be >= 1")
    lex = toy_lexicon(spec)
    rng = np.random.default_rng(rng_seed)
    lo, hi = spec.sentence_length_range
    width = len(str(n - 1))
    pairs = []
    for k in range(n):
        length = int(rng.integers(lo, hi + 1))
        src_idx = rng.integers(0, spec.source_alphabet_size, size=length)
        alt = rng.random() < spec.register_prob
        if spec.entity_rate > 0:
            src_idx = np.where(rng.random(length) < spec.entity_rate, ENTITY_INDEX, src_idx)
        words = []
        for i in src_idx:
            if i == ENTITY_INDEX:
                words.append(lex.names[int(rng.integers(len(lex.names)))])
                continue
            a = lex.alternate[i]
            words.append(lex.render(a if (alt and a is not None) else lex.primary[i]))
        target = " ".join(reorder_windows(words, spec.reorder_window))
        source = " ".join(source_word(int(i)) for i in src_idx)
        pairs.append(SentencePair(id=f"{id_prefix}{k:0{width}d}", source=source, target=target))
    return pairs
