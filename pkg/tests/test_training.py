import numpy as np
import pytest
import torch

from lexcon.augmentation import SamplerConfig, annotate_dataset
from lexcon.core import SentencePair, ToyTaskSpec, build_vocab, generate_toy_corpus
from lexcon.errors import ConfigurationError, TrainingDiverged
from lexcon.model import ModelConfig, init_model
from lexcon.training import (
    PairEncoder,
    TrainConfig,
    eval_loss,
    grad_check,
    inverse_sqrt_lr,
    noisy_copies,
    parameter_gradients,
    train,
)

SAMPLER = SamplerConfig(k_max=4, max_source_positions=16)


@pytest.fixture(scope="module")
def toy():
    spec = ToyTaskSpec(source_alphabet_size=12, sentence_length_range=(3, 6), split_rate=0.2)
    pairs = generate_toy_corpus(spec, 260, 0)
    vocab = build_vocab([p.source for p in pairs] + [p.target for p in pairs])
    pairs = annotate_dataset(pairs, SAMPLER, 1)
    return pairs[:200], pairs[200:], vocab


def small_cfg(vocab, **kw):
    base = dict(vocab_size=len(vocab), d_model=16, n_heads=2, ffn_dim=32, max_source_positions=16,
                max_constraint_positions=32, n_segments=5, pad_id=vocab.pad, sep_id=vocab.sep)
    base.update(kw)
    return ModelConfig(**base)


def test_lr_schedule():
    assert inverse_sqrt_lr(1, 1e-3, 100) == pytest.approx(1e-5)
    assert inverse_sqrt_lr(100, 1e-3, 100) == pytest.approx(1e-3)
    assert inverse_sqrt_lr(400, 1e-3, 100) == pytest.approx(5e-4)


def test_loss_falls_in_first_50_steps(toy):
    train_p, _, vocab = toy
    falls = 0
    for seed in range(10):
        m = init_model(small_cfg(vocab), seed)
        r = train(m, train_p, vocab, TrainConfig(steps=50, warmup=10, average_last=0, seed=seed), SAMPLER)
        falls += np.mean(r.losses[-5:]) < np.mean(r.losses[:5])
    assert falls >= 9


def test_memorises_one_sentence(toy):
    train_p, _, vocab = toy
    one = [SentencePair("x", train_p[0].source, train_p[0].target)]
    m = init_model(small_cfg(vocab, label_smoothing=0.0, dropout=0.0), 0)
    r = train(m, one, vocab, TrainConfig(steps=300, batch_size=1, warmup=20, max_lr=1e-2, average_last=0,
                                         use_constraints=False), SAMPLER)
    assert r.losses[-1] < 0.05


def test_checkpoint_average_no_worse(toy):
    train_p, held, vocab = toy
    m = init_model(small_cfg(vocab), 3)
    r = train(m, train_p, vocab, TrainConfig(steps=400, checkpoint_every=50, average_last=4, seed=3), SAMPLER)
    averaged = eval_loss(r.model, held, vocab, SAMPLER)
    last = init_model(small_cfg(vocab), 0)
    last.load_state_dict(r.last_state)
    assert averaged <= eval_loss(last, held, vocab, SAMPLER) * 1.05


def test_training_is_deterministic(toy):
    train_p, _, vocab = toy
    runs = []
    for _ in range(2):
        m = init_model(small_cfg(vocab), 4)
        runs.append(train(m, train_p, vocab, TrainConfig(steps=20, seed=4), SAMPLER).losses)
    assert runs[0] == runs[1]


def test_nan_loss_aborts(toy, monkeypatch):
    train_p, _, vocab = toy
    m = init_model(small_cfg(vocab), 0)
    monkeypatch.setattr(type(m), "loss", lambda self, batch: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(TrainingDiverged):
        train(m, train_p, vocab, TrainConfig(steps=5), SAMPLER)


def test_bad_train_config():
    with pytest.raises(ConfigurationError):
        TrainConfig(steps=0)


def _batch(toy, use_constraints=True, n=3):
    train_p, _, vocab = toy
    with_cons = [p for p in train_p if p.constraints][:n]
    return PairEncoder(vocab, SAMPLER, use_constraints).batch(with_cons)


@pytest.mark.parametrize("pointer", [True, False])
@pytest.mark.parametrize("segments", [True, False])
def test_grad_check(toy, pointer, segments):
    vocab = toy[2]
    m = init_model(small_cfg(vocab, d_model=8, ffn_dim=16, dropout=0.0, use_pointer=pointer,
                             use_segments=segments), 0)
    errs = grad_check(m, _batch(toy), max_entries=12)
    assert max(errs.values()) < 1e-4


def test_untouched_rows_have_zero_gradient(toy):
    vocab = toy[2]
    m = init_model(small_cfg(vocab, dropout=0.0), 0)
    batch = _batch(toy)
    grads = parameter_gradients(m, batch)
    used = set(batch.src_positions.flatten().tolist())
    unused = [i for i in range(m.cfg.n_input_positions) if i not in used]
    assert unused
    assert torch.count_nonzero(grads["pos_emb.weight"][unused]) == 0


def test_copy_gate_gets_gradient_with_constraints(toy):
    vocab = toy[2]
    m = init_model(small_cfg(vocab, dropout=0.0, use_pointer=True), 0)
    grads = parameter_gradients(m, _batch(toy))
    assert torch.count_nonzero(grads["copy_gate.weight"]) > 0


def test_noisy_copies(toy):
    train_p = toy[0]
    noisy = noisy_copies(train_p, 0.3, 0)
    assert len(noisy) == len(train_p)
    assert all(n.id.endswith("~noisy") for n in noisy)
    assert all(n.target == p.target for n, p in zip(noisy, train_p))
    assert sum(len(n.source.split()) for n in noisy) < sum(len(p.source.split()) for p in train_p)
    assert all(n.source for n in noisy)
    with pytest.raises(ConfigurationError):
        noisy_copies(train_p, 1.0, 0)


def test_two_phase_runs(toy):
    train_p, _, vocab = toy
    m = init_model(small_cfg(vocab), 0)
    r = train(m, train_p, vocab, TrainConfig(steps=20), SAMPLER, noisy_copies(train_p, 0.2, 0), pretrain_steps=10)
    assert len(r.losses) == 20
