"""Experiment stages behind the command-line interface.

Each stage writes content-addressed artifacts under a work directory::

    data/train-<hash>-s<seed>.jsonl   data/test-<hash>-s<seed>.jsonl
    data/vocab-<hash>-s<seed>.json
    ckpt/<kind>-<hash>-s<seed>.ckpt
    out/<setting>-b<beam>-<hash>.jsonl       raw decoder output
    post/<setting>-b<beam>-<hash>.jsonl      after repairs
    reports/report-<hash>.json, reports/table-<hash>.txt
    reports/sweep-<hash>.csv

``<hash>`` covers exactly the configuration sections that influence the
artifact, so changing a decoding knob never invalidates checkpoints.  A
stage whose artifact already exists is skipped.  Recomputing (``force``)
must reproduce the same bytes; a mismatch raises instead of overwriting.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from lexcon.augmentation import SamplerConfig, annotate_dataset, build_augmented_input
from lexcon.checkpoint import load_checkpoint, save_checkpoint
from lexcon.config import ExperimentConfig
from lexcon.constraints import ConstraintSet, build_automaton
from lexcon.core import SentencePair, ToyTaskSpec, Vocabulary, build_vocab, decode_tokens, encode, generate_toy_corpus
from lexcon.core import load_pairs, read_jsonl
from lexcon.decoding import DecodeConfig, decode
from lexcon.errors import ConfigurationError, ConstraintFailure, DataError, LexconError
from lexcon.evaluation import EvalReport, evaluate, render_table
from lexcon.model import ModelConfig, Seq2Seq, init_model
from lexcon.postprocess import postprocess_records
from lexcon.scoring import EnsembleScorer, ModelScorer
from lexcon.training import TrainConfig, grad_check, noisy_copies, train

log = logging.getLogger(__name__)

KINDS = ("base", "leca")

# setting name -> (model kind, decoding mode, uses the ensemble)
SETTINGS = {
    "base": ("base", "plain", False),
    "base+dba": ("base", "dba", False),
    "leca": ("leca", "plain", False),
    "leca+dba": ("leca", "dba", False),
    "leca-ensemble+dba": ("leca", "dba", True),
}
ROW_LABELS = dict(zip(SETTINGS, "abcde"))


class FailureThresholdExceeded(ConstraintFailure):
    """Too many sentences ended without a finished, constraint-complete output."""

    def __init__(self, message: str, result: "RunResult | None" = None):
        super().__init__(message)
        self.result = result


def toy_spec(cfg: ExperimentConfig) -> ToyTaskSpec:
    t = cfg.toy
    return ToyTaskSpec(
        source_alphabet_size=t.source_alphabet_size,
        sentence_length_range=(t.min_len, t.max_len),
        mapping_seed=t.mapping_seed,
        reorder_window=t.reorder_window,
        synonym_rate=t.synonym_rate,
        register_prob=t.register_prob,
        split_rate=t.split_rate,
        entity_rate=t.entity_rate,
        entity_pool=t.entity_pool,
    )


def train_sampler(cfg: ExperimentConfig) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(k_max=s.k_max, p_zero=s.p_zero, max_source_positions=s.max_source_positions)


def test_sampler(cfg: ExperimentConfig) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(k_max=s.test_k_max, p_zero=s.test_p_zero, max_source_positions=s.max_source_positions)


def model_config(cfg: ExperimentConfig, vocab: Vocabulary, kind: str) -> ModelConfig:
    if kind not in KINDS:
        raise ConfigurationError(f"model kind must be one of {KINDS}, got {kind!r}")
    m = cfg.model
    leca = kind == "leca"
    return ModelConfig(
        vocab_size=len(vocab),
        d_model=m.d_model,
        n_heads=m.n_heads,
        ffn_dim=m.ffn_dim,
        max_source_positions=cfg.sampler.max_source_positions,
        max_constraint_positions=m.max_constraint_positions,
        max_target_positions=m.max_target_positions,
        n_segments=cfg.sampler.k_max + 1,
        label_smoothing=m.label_smoothing,
        dropout=m.dropout,
        use_pointer=leca,
        use_segments=leca,
        copy_heads=m.copy_heads,
        pad_id=vocab.pad,
        sep_id=vocab.sep,
    )


def decode_config(cfg: ExperimentConfig, mode: str, beam: int | None = None) -> DecodeConfig:
    d = cfg.decode
    return DecodeConfig(
        beam_size=beam if beam is not None else d.beam_size,
        max_len_a=d.max_len_a,
        max_len_b=d.max_len_b,
        length_norm=d.length_norm,
        mode=mode,
    )


def _publish(path: Path, data: bytes) -> Path:
    """Write ``data`` to ``path`` unless an artifact with other bytes is already there."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        if path.read_bytes() != data:
            raise LexconError(f"refusing to overwrite {path}: recomputed artifact differs from the stored one")
        return path
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def _jsonl_bytes(records: Sequence[dict]) -> bytes:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records).encode("utf-8")


@dataclass(frozen=True)
class DataFiles:
    train: Path
    test: Path
    vocab: Path

    def load(self) -> tuple[list[SentencePair], list[SentencePair], Vocabulary]:
        for p in (self.train, self.test, self.vocab):
            if not p.exists():
                raise DataError(f"missing dataset artifact {p}; run 'prepare' first")
        return load_pairs(self.train), load_pairs(self.test), Vocabulary.load(self.vocab)


class Workspace:
    """Artifact naming and the stage functions for one configuration."""

    def __init__(self, root: str | Path, cfg: ExperimentConfig, force: bool = False):
        self.root = Path(root)
        self.cfg = cfg
        self.force = force
        torch.set_num_threads(1)

    # -- naming ---------------------------------------------------------
    def _data_hash(self) -> str:
        ex = self.cfg.experiment
        return self.cfg.digest("toy", "sampler", extra=[ex.train_constraint_seed, ex.test_constraint_seed])

    def data_files(self) -> DataFiles:
        h, seed = self._data_hash(), self.cfg.experiment.data_seed
        d = self.root / "data"
        return DataFiles(d / f"train-{h}-s{seed}.jsonl", d / f"test-{h}-s{seed}.jsonl", d / f"vocab-{h}-s{seed}.json")

    def checkpoint_path(self, kind: str, seed: int) -> Path:
        h = self.cfg.digest("toy", "sampler", "model", "train", extra=[kind, self._data_hash(), self.cfg.experiment.data_seed])
        return self.root / "ckpt" / f"{kind}-{h}-s{seed}.ckpt"

    def _member_seeds(self, kind: str, ensemble: bool, seed: int | None = None) -> tuple[int, ...]:
        seeds = self.cfg.experiment.seeds
        if seed is not None:
            if ensemble:
                raise ConfigurationError("an ensemble setting cannot be pinned to one seed")
            return (seed,)
        if ensemble:
            return tuple(seeds[: self.cfg.experiment.ensemble_size])
        return (seeds[0],)

    def output_path(self, setting: str, beam: int, stage: str = "out", seed: int | None = None) -> Path:
        kind, mode, ensemble = SETTINGS[setting]
        members = [self.checkpoint_path(kind, s).name for s in self._member_seeds(kind, ensemble, seed)]
        d = self.cfg.decode
        h = _short_hash([setting, beam, members, d.max_len_a, d.max_len_b, d.length_norm,
                         d.ensemble_space if ensemble else None, self.data_files().test.name])
        return self.root / stage / f"{setting}-b{beam}-{h}.jsonl"

    # -- stages ---------------------------------------------------------
    def prepare(self) -> DataFiles:
        files = self.data_files()
        if all(p.exists() for p in (files.train, files.test, files.vocab)) and not self.force:
            return files
        cfg = self.cfg
        spec = toy_spec(cfg)
        pairs = generate_toy_corpus(spec, cfg.toy.n_train + cfg.toy.n_test, cfg.experiment.data_seed)
        n_train = cfg.toy.n_train
        train_pairs = [_rename(p, "tr", i, n_train) for i, p in enumerate(pairs[:n_train])]
        test_pairs = [_rename(p, "te", i, cfg.toy.n_test) for i, p in enumerate(pairs[n_train:])]
        shuffle = cfg.sampler.shuffle
        train_pairs = annotate_dataset(train_pairs, train_sampler(cfg), cfg.experiment.train_constraint_seed, shuffle)
        test_pairs = annotate_dataset(test_pairs, test_sampler(cfg), cfg.experiment.test_constraint_seed, shuffle)
        vocab = build_vocab([p.source for p in pairs] + [p.target for p in pairs])
        _publish(files.train, _jsonl_bytes([p.to_dict() for p in train_pairs]))
        _publish(files.test, _jsonl_bytes([p.to_dict() for p in test_pairs]))
        _publish(files.vocab, (vocab.to_json() + "\n").encode("utf-8"))
        return files

    def train_model(self, kind: str, seed: int) -> Path:
        path = self.checkpoint_path(kind, seed)
        if path.exists() and not self.force:
            return path
        train_pairs, _, vocab = self.data_files().load()
        cfg = self.cfg
        model = init_model(model_config(cfg, vocab, kind), seed)
        t = cfg.train
        tcfg = TrainConfig(
            steps=t.steps,
            batch_size=t.batch_size,
            max_lr=t.max_lr,
            warmup=t.warmup,
            clip_norm=t.clip_norm,
            checkpoint_every=t.checkpoint_every,
            average_last=t.average_last,
            use_constraints=kind == "leca",
            shuffle_constraints=cfg.sampler.shuffle,
            seed=seed,
        )
        noisy, pretrain = None, 0
        if t.two_phase:
            noisy = noisy_copies(train_pairs, t.noise_rate, seed)
            pretrain = t.pretrain_steps
        started = time.perf_counter()
        result = train(model, train_pairs, vocab, tcfg, train_sampler(cfg), noisy, pretrain)
        log.info("trained %s seed %d in %.1fs (final loss %.3f)", kind, seed, time.perf_counter() - started,
                 float(np.mean(result.losses[-50:])))
        tmp = path.with_name(path.name + ".new")
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(tmp, result.model, {"kind": kind, "seed": seed})
        data = tmp.read_bytes()
        tmp.unlink()
        _publish(path, data)
        return path

    def load_models(self, kind: str, seeds: Sequence[int]) -> list[Seq2Seq]:
        models = []
        for s in seeds:
            path = self.checkpoint_path(kind, s)
            if not path.exists():
                raise DataError(f"missing checkpoint {path}; run 'train --kind {kind} --seed {s}' first")
            models.append(load_checkpoint(path)[0])
        return models

    def decode_setting(self, setting: str, beam: int | None = None, seed: int | None = None) -> tuple[Path, int]:
        """Decode the test split; returns the output path and the number of failures.

        Single-model settings use the first configured seed unless ``seed``
        picks another member.
        """
        if setting not in SETTINGS:
            raise ConfigurationError(f"unknown setting {setting!r}; choose from {', '.join(SETTINGS)}")
        beam = beam if beam is not None else self.cfg.decode.beam_size
        path = self.output_path(setting, beam, seed=seed)
        if path.exists() and not self.force:
            return path, sum(not r["finished"] for r in read_jsonl(path))
        kind, mode, ensemble = SETTINGS[setting]
        _, test_pairs, vocab = self.data_files().load()
        models = self.load_models(kind, self._member_seeds(kind, ensemble, seed))
        if ensemble:
            scorer = EnsembleScorer(models, vocab.eos, self.cfg.decode.ensemble_space)
        else:
            scorer = ModelScorer(models[0], vocab.eos)
        records, failures = decode_pairs(
            scorer, test_pairs, vocab, train_sampler(self.cfg), decode_config(self.cfg, mode, beam),
            use_constraints=kind == "leca",
        )
        _publish(path, _jsonl_bytes(records))
        return path, failures

    def postprocess_setting(self, setting: str, beam: int | None = None, seed: int | None = None) -> Path:
        beam = beam if beam is not None else self.cfg.decode.beam_size
        src = self.output_path(setting, beam, seed=seed)
        dst = self.output_path(setting, beam, stage="post", seed=seed)
        if dst.exists() and not self.force:
            return dst
        _, test_pairs, _ = self.data_files().load()
        records = postprocess_records(read_jsonl(src), {p.id: p.constraints for p in test_pairs})
        _publish(dst, _jsonl_bytes(records))
        return dst

    def evaluate_file(self, path: Path) -> EvalReport:
        _, test_pairs, _ = self.data_files().load()
        return evaluate_records(read_jsonl(path), test_pairs)

    def run(self) -> "RunResult":
        """Prepare, train, decode every setting, repair, evaluate, and write the table."""
        cfg = self.cfg
        self.prepare()
        self.train_model("base", cfg.experiment.seeds[0])
        for s in self._member_seeds("leca", ensemble=True):
            self.train_model("leca", s)
        rows: list[tuple[str, EvalReport]] = []
        summary = []
        exceeded = []
        for setting in SETTINGS:
            out, failures = self.decode_setting(setting)
            post = self.postprocess_setting(setting)
            report = self.evaluate_file(post)
            n = cfg.toy.n_test
            label = f"({ROW_LABELS[setting]}) {setting}"
            rows.append((label, report))
            summary.append({"setting": setting, "label": label, **report.summary(),
                            "finished_rate": 1.0 - failures / n, "output": str(post.relative_to(self.root))})
            if SETTINGS[setting][1] != "plain" and failures / n > cfg.decode.max_failure_rate:
                exceeded.append(setting)
        table = render_table(rows)
        # the report embeds the whole config, so its name has to cover it too
        h = _short_hash([[r["output"] for r in summary], cfg.digest()])
        report_path = self.root / "reports" / f"report-{h}.json"
        table_path = self.root / "reports" / f"table-{h}.txt"
        _publish(report_path, (json.dumps({"config": cfg.to_dict(), "rows": summary}, indent=1) + "\n").encode())
        _publish(table_path, (table + "\n").encode())
        result = RunResult(rows=summary, table=table, report_path=report_path, table_path=table_path)
        if exceeded:
            raise FailureThresholdExceeded(
                f"constrained decoding failure rate above {cfg.decode.max_failure_rate} for: {', '.join(exceeded)}",
                result,
            )
        return result

    def sweep_beam(self) -> Path:
        """dba over ``decode.sweep_beams`` for the base and the augmented scorer."""
        cfg = self.cfg
        self.prepare()
        self.train_model("base", cfg.experiment.seeds[0])
        self.train_model("leca", cfg.experiment.seeds[0])
        rows = []
        for kind in KINDS:
            setting = f"{kind}+dba"
            for beam in cfg.decode.sweep_beams:
                _, failures = self.decode_setting(setting, beam)
                post = self.postprocess_setting(setting, beam)
                report = self.evaluate_file(post)
                rows.append((kind, beam, round(report.bleu, 4), round(1.0 - failures / cfg.toy.n_test, 4)))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["mode", "beam", "bleu", "sent_complete_rate"])
        writer.writerows(rows)
        h = _short_hash([self.output_path(f"{k}+dba", b).name for k in KINDS for b in cfg.decode.sweep_beams])
        return _publish(self.root / "reports" / f"sweep-{h}.csv", buf.getvalue().encode())


@dataclass
class RunResult:
    rows: list[dict]
    table: str
    report_path: Path
    table_path: Path


def _short_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:12]


def _rename(pair: SentencePair, prefix: str, i: int, n: int) -> SentencePair:
    width = len(str(max(n - 1, 0)))
    return SentencePair(id=f"{prefix}{i:0{width}d}", source=pair.source, target=pair.target,
                        constraints=pair.constraints)


def decode_pairs(scorer, pairs: Sequence[SentencePair], vocab: Vocabulary, sampler: SamplerConfig,
                 dcfg: DecodeConfig, use_constraints: bool) -> tuple[list[dict], int]:
    """Decode every pair; a failed constrained search keeps its best partial output."""
    records = []
    failures = 0
    for p in pairs:
        cs = ConstraintSet.from_surfaces(vocab, p.constraints)
        aug = build_augmented_input(encode(vocab, p.source), cs if use_constraints else ConstraintSet(()),
                                    sampler, vocab)
        try:
            hyp = decode(scorer, aug, cs, dcfg)
        except ConstraintFailure as exc:
            hyp = exc.best
        finished = bool(hyp.finished)
        failures += not finished
        met = build_automaton(cs).feed(hyp.tokens).tokens_met
        records.append(
            {
                "id": p.id,
                "output": decode_tokens(vocab, hyp.tokens),
                "score": round(float(hyp.score), 6),
                "finished": finished,
                "tokens_met": int(met),
                "beam": dcfg.beam_size,
                "mode": dcfg.mode,
            }
        )
    return records, failures


def evaluate_records(records: Sequence[dict], pairs: Sequence[SentencePair]) -> EvalReport:
    by_id = {r["id"]: r for r in records}
    missing = [p.id for p in pairs if p.id not in by_id]
    if missing:
        raise DataError(f"{len(missing)} test sentences have no output (first: {missing[0]})")
    hyps = [by_id[p.id]["output"] for p in pairs]
    return evaluate(hyps, [p.target for p in pairs], [p.constraints for p in pairs], [p.id for p in pairs])


def gradcheck_suite(vocab_size: int = 12, d_model: int = 8, seed: int = 0, max_entries: int | None = 24):
    """Max relative gradient error for {pointer, no pointer} x {segments, none}."""
    from lexcon.augmentation import AugmentedInput
    from lexcon.model import make_batch

    rng = np.random.default_rng(seed)
    pad, eos, sep = vocab_size - 3, vocab_size - 2, vocab_size - 1
    inputs, targets = [], []
    for _ in range(3):
        n = int(rng.integers(2, 5))
        src = [int(x) for x in rng.integers(0, pad, n)]
        con = [int(x) for x in rng.integers(0, pad, 2)]
        toks = src + [sep, con[0], sep, con[1], eos]
        pos = list(range(n)) + [8, 9, 10, 11, 12]
        seg = [0] * n + [1, 1, 2, 2, 0]
        inputs.append(AugmentedInput(tuple(toks), tuple(pos), tuple(seg), n))
        targets.append([int(x) for x in rng.integers(0, pad, int(rng.integers(2, 5)))])
    batch = make_batch(inputs, targets, pad, eos)
    out = {}
    for pointer in (True, False):
        for segments in (True, False):
            cfg = ModelConfig(vocab_size=vocab_size, d_model=d_model, n_heads=2, ffn_dim=2 * d_model,
                              max_source_positions=8, max_constraint_positions=8, max_target_positions=8,
                              n_segments=3, dropout=0.0, use_pointer=pointer, use_segments=segments,
                              pad_id=pad, sep_id=sep)
            model = init_model(cfg, seed)
            errs = grad_check(model, batch, max_entries=max_entries, seed=seed)
            out[(pointer, segments)] = max(errs.values())
    return out
