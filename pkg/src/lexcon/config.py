"""Experiment configuration: one INI file, versioned, every seed explicit.

Schema (version 1).  Every key is optional; missing keys take the defaults
below.  Lists are comma separated.

.. code-block:: ini

    [experiment]
    version = 1
    seeds = 1, 2, 3, 4          ; one augmented model per seed
    ensemble_size = 4           ; first N seeds form the ensemble row
    data_seed = 7               ; corpus generation
    train_constraint_seed = 11  ; constraints stored with the train split
    test_constraint_seed = 99   ; constraints for the test split (independent)

    [toy]      ToyTaskSpec fields plus n_train / n_test
    [sampler]  k_max, p_zero, max_source_positions, test_k_max, test_p_zero, shuffle
    [model]    d_model, n_heads, ffn_dim, copy_heads, dropout, ...
    [train]    steps, batch_size, max_lr, warmup, ..., two_phase
    [decode]   beam_size, max_len_a, max_len_b, length_norm, sweep_beams, ...

Every key is also a command-line flag named ``--section.key``; a flag
overrides the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from lexcon.errors import ConfigurationError

CONFIG_VERSION = 1

# Keys added after artifacts were already being written.  They enter the
# digest only when set away from their default, so adding one does not
# rename every existing artifact.
LATE_KEYS = {("sampler", "shuffle"): False}


@dataclass(frozen=True)
class ExperimentSection:
    version: int = CONFIG_VERSION
    seeds: tuple[int, ...] = (1, 2, 3, 4)
    ensemble_size: int = 4
    data_seed: int = 7
    train_constraint_seed: int = 11
    test_constraint_seed: int = 99


@dataclass(frozen=True)
class ToySection:
    source_alphabet_size: int = 30
    min_len: int = 4
    max_len: int = 10
    mapping_seed: int = 0
    reorder_window: int = 2
    synonym_rate: float = 0.0
    register_prob: float = 0.5
    split_rate: float = 0.3
    entity_rate: float = 0.3
    entity_pool: int = 40
    n_train: int = 2000
    n_test: int = 500


@dataclass(frozen=True)
class SamplerSection:
    k_max: int = 4
    p_zero: float = 0.4
    max_source_positions: int = 32
    test_k_max: int = 4
    test_p_zero: float = 0.0
    shuffle: bool = False


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 48
    n_heads: int = 4
    ffn_dim: int = 96
    copy_heads: int = 1
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_constraint_positions: int = 64
    max_target_positions: int = 160


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2000
    batch_size: int = 32
    max_lr: float = 3e-3
    warmup: int = 200
    clip_norm: float = 1.0
    checkpoint_every: int = 100
    average_last: int = 8
    two_phase: bool = False
    pretrain_steps: int = 500
    noise_rate: float = 0.15


@dataclass(frozen=True)
class DecodeSection:
    beam_size: int = 5
    max_len_a: float = 2.0
    max_len_b: int = 5
    length_norm: float = 0.6
    ensemble_space: str = "prob"
    sweep_beams: tuple[int, ...] = (1, 2, 4, 8, 16)
    max_failure_rate: float = 0.25


SECTIONS = {
    "experiment": ExperimentSection,
    "toy": ToySection,
    "sampler": SamplerSection,
    "model": ModelSection,
    "train": TrainSection,
    "decode": DecodeSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    toy: ToySection = field(default_factory=ToySection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    decode: DecodeSection = field(default_factory=DecodeSection)

    def __post_init__(self):
        ex = self.experiment
        if ex.version != CONFIG_VERSION:
            raise ConfigurationError(f"unsupported config version {ex.version} (expected {CONFIG_VERSION})")
        if not ex.seeds:
            raise ConfigurationError("experiment.seeds must list at least one seed")
        if len(set(ex.seeds)) != len(ex.seeds):
            raise ConfigurationError("experiment.seeds must be distinct")
        if not 1 <= ex.ensemble_size <= len(ex.seeds):
            raise ConfigurationError(
                f"experiment.ensemble_size={ex.ensemble_size} needs 1..{len(ex.seeds)} seeds"
            )
        if self.toy.n_train < 1 or self.toy.n_test < 1:
            raise ConfigurationError("toy.n_train and toy.n_test must be >= 1")
        if self.toy.max_len >= self.sampler.max_source_positions:
            raise ConfigurationError("toy.max_len must stay below sampler.max_source_positions")
        if self.decode.ensemble_space not in ("prob", "logprob"):
            raise ConfigurationError("decode.ensemble_space must be 'prob' or 'logprob'")
        if not self.decode.sweep_beams or min(self.decode.sweep_beams) < 1:
            raise ConfigurationError("decode.sweep_beams must be positive")
        if not 0.0 <= self.decode.max_failure_rate <= 1.0:
            raise ConfigurationError("decode.max_failure_rate must be in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in fields(SECTIONS[name]):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self, *sections: str, extra: Any = None) -> str:
        """Short content hash over the named sections (all when none given)."""
        names = sections or tuple(SECTIONS)
        payload = {n: dataclasses.asdict(getattr(self, n)) for n in names}
        for (section, key), default in LATE_KEYS.items():
            if section in payload and payload[section][key] == default:
                del payload[section][key]
        payload["_extra"] = extra
        blob = json.dumps(payload, sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(cls, key: str, raw: str, where: str):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types:
        raise ConfigurationError(f"unknown config key {where}.{key}")
    kind = types[key]
    raw = raw.strip()
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("str", str):
            return raw
        if str(kind).startswith("tuple[int"):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigurationError(f"{where}.{key}: cannot parse {raw!r} as {kind}") from None
    raise ConfigurationError(f"{where}.{key}: unsupported field type {kind}")


def build_config(values: dict[str, dict[str, str]]) -> ExperimentConfig:
    parts = {}
    for name, cls in SECTIONS.items():
        given = values.get(name, {})
        kwargs = {k: _parse(cls, k, v, name) for k, v in given.items()}
        try:
            parts[name] = cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
    unknown = set(values) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return ExperimentConfig(**parts)


def read_config_values(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Read ``path`` (if any) and apply ``{"section.key": value}`` overrides."""
    values: dict[str, dict[str, str]] = read_config_values(path) if path else {}
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigurationError(f"override {dotted!r} must look like section.key")
        values.setdefault(section, {})[key] = str(raw)
    return build_config(values)


def config_keys() -> list[tuple[str, str, Any]]:
    """``(section, key, default)`` for every schema entry."""
    out = []
    for name, cls in SECTIONS.items():
        for f in fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else None
            out.append((name, f.name, default))
    return out
