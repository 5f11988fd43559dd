import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lexcon import model as model_mod
from lexcon.augmentation import SamplerConfig, build_augmented_input
from lexcon.constraints import ConstraintSet
from lexcon.core import build_vocab
from lexcon.errors import ConfigurationError, DataError
from lexcon.model import (
    ModelConfig,
    Seq2Seq,
    average_state_dicts,
    collate_inputs,
    encode_input,
    ensemble_scores,
    forward_step,
    init_model,
)
from lexcon.scoring import EnsembleScorer, ModelScorer

VOCAB = build_vocab([" ".join(f"t{i}" for i in range(10))])
SAMPLER = SamplerConfig(k_max=4, max_source_positions=16)


def cfg(**kw):
    base = dict(vocab_size=len(VOCAB), d_model=16, n_heads=2, ffn_dim=32, max_source_positions=16,
                max_constraint_positions=32, n_segments=5, pad_id=VOCAB.pad, sep_id=VOCAB.sep)
    base.update(kw)
    return ModelConfig(**base)


def aug(src, phrases=()):
    return build_augmented_input(src, ConstraintSet(tuple(map(tuple, phrases))), SAMPLER, VOCAB)


def test_init_deterministic():
    a, b = init_model(cfg(), 3), init_model(cfg(), 3)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), n
    c = init_model(cfg(), 4)
    assert not torch.equal(a.tok_emb.weight, c.tok_emb.weight)


def test_head_divisibility():
    assert cfg(d_model=8, n_heads=2).head_dim == 4
    with pytest.raises(ConfigurationError):
        cfg(d_model=8, n_heads=3)
    with pytest.raises(ConfigurationError):
        cfg(label_smoothing=1.0)
    with pytest.raises(ConfigurationError):
        cfg(copy_heads=3)


def test_tied_embeddings_share_storage():
    m = init_model(cfg(), 0)
    assert m.output_projection.data_ptr() == m.tok_emb.weight.data_ptr()
    with torch.no_grad():
        m.tok_emb.weight[2, 0] = 123.0
    assert m.output_projection[2, 0].item() == 123.0


def test_memory_shape():
    m = init_model(cfg(), 0)
    for n in (1, 3, 7):
        a = aug(list(range(n)), [[1], [2, 3]])
        mem = encode_input(m, a)
        assert tuple(mem.states.shape) == (1, len(a), 16)


def test_segment_table_zeroed_makes_segments_irrelevant():
    m = init_model(cfg(), 1).eval()
    with torch.no_grad():
        m.seg_emb.weight.zero_()
    tok, pos, seg, pad = collate_inputs([aug([1, 2], [[3], [4]])], VOCAB.pad)
    a = m.encode(tok, pos, seg, pad).states
    b = m.encode(tok, pos, torch.zeros_like(seg), pad).states
    assert torch.allclose(a, b)


def test_permuting_constraints_only_moves_segment_and_position_terms():
    m = init_model(cfg(), 2).eval()
    one = collate_inputs([aug([1, 2], [[3], [4, 5]])], VOCAB.pad)
    two = collate_inputs([aug([1, 2], [[4, 5], [3]])], VOCAB.pad)
    t1, p1, s1 = m.embed_input(one[0], one[1], one[2])
    t2, p2, s2 = m.embed_input(two[0], two[1], two[2])
    assert torch.allclose(t1.sum(1), t2.sum(1), atol=1e-6)
    assert not torch.allclose(s1, s2)


def test_out_of_table_position_is_data_error():
    m = init_model(cfg(max_constraint_positions=2), 0)
    with pytest.raises(DataError):
        encode_input(m, aug([1], [[2, 3, 4]]))


@settings(max_examples=60)
@given(
    st.lists(st.integers(0, 9), min_size=1, max_size=8),
    st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=2), max_size=3),
    st.lists(st.integers(0, len(VOCAB) - 1), max_size=6),
    st.booleans(),
    st.booleans(),
    st.integers(0, 3),
)
def test_distributions_normalised(src, phrases, prefix, pointer, segments, seed):
    m = init_model(cfg(use_pointer=pointer, use_segments=segments), seed).eval()
    lp = forward_step(m, encode_input(m, aug(src, phrases)), [prefix], VOCAB.eos)
    assert lp.shape == (1, len(VOCAB))
    assert np.all(np.isfinite(lp))
    assert abs(np.exp(lp).sum() - 1.0) <= 1e-6


def test_gate_one_is_plain_softmax():
    m = init_model(cfg(use_pointer=True), 5).eval()
    plain = Seq2Seq(cfg(use_pointer=False)).eval()
    plain.load_state_dict({k: v for k, v in m.state_dict().items() if not k.startswith("copy_gate")})
    a = aug([1, 2, 3], [[7]])
    m.gate_override = 1.0
    got = forward_step(m, encode_input(m, a), [[4, 5]], VOCAB.eos)
    want = forward_step(plain, encode_input(plain, a), [[4, 5]], VOCAB.eos)
    np.testing.assert_allclose(np.exp(got), np.exp(want), atol=1e-7)


def test_gate_zero_copies_only_input_tokens():
    m = init_model(cfg(use_pointer=True), 6).eval()
    m.gate_override = 0.0
    a = aug([1, 2], [[7]])
    with np.errstate(divide="ignore"):
        p = np.exp(forward_step(m, encode_input(m, a), [[3]], VOCAB.eos))[0]
    support = set(np.flatnonzero(p > 0).tolist())
    assert support <= set(a.token_ids)
    assert abs(p.sum() - 1.0) < 1e-6


def test_dropout_only_in_training():
    m = init_model(cfg(dropout=0.5), 0)
    a = aug([1, 2, 3])
    m.eval()
    x = forward_step(m, encode_input(m, a), [[1]], VOCAB.eos)
    y = forward_step(m, encode_input(m, a), [[1]], VOCAB.eos)
    np.testing.assert_array_equal(x, y)


def test_ensemble_identities():
    m = init_model(cfg(), 7).eval()
    a = aug([1, 2, 3], [[4]])
    mem = encode_input(m, a)
    single = forward_step(m, mem, [[2]], VOCAB.eos)
    np.testing.assert_allclose(ensemble_scores([m], [mem], [[2]], VOCAB.eos), single, atol=1e-12)
    np.testing.assert_allclose(ensemble_scores([m, m, m], [mem] * 3, [[2]], VOCAB.eos), single, atol=1e-12)
    ens = EnsembleScorer([m], VOCAB.eos)
    np.testing.assert_allclose(ens.step(ens.start(a), [[2]]), ModelScorer(m, VOCAB.eos).step(mem, [[2]]))


def test_ensemble_hand_case(monkeypatch):
    # member argmaxes differ (0 and 2); mean of probabilities is (.35, .325, .325)
    rows = {0: np.log([[0.6, 0.3, 0.1]]), 1: np.log([[0.1, 0.35, 0.55]])}
    monkeypatch.setattr(model_mod, "forward_step", lambda m, mem, pre, eos: rows[m])

    class Stub:
        def __init__(self, i):
            self.cfg = type("C", (), {"vocab_size": 3})()
            self.i = i

        def __hash__(self):
            return self.i

    members = [0, 1]
    stubs = [Stub(i) for i in members]
    monkeypatch.setattr(model_mod, "forward_step", lambda m, mem, pre, eos: rows[m.i])
    p = np.exp(ensemble_scores(stubs, [None, None], [[]], 0, "prob"))[0]
    np.testing.assert_allclose(p, [0.35, 0.325, 0.325], atol=1e-12)
    assert int(np.argmax(p)) == 0
    # the geometric mean prefers the middle token instead
    g = np.exp(ensemble_scores(stubs, [None, None], [[]], 0, "logprob"))[0]
    assert int(np.argmax(g)) == 1


def test_ensemble_vocab_mismatch():
    a = init_model(cfg(), 0)
    b = init_model(ModelConfig(vocab_size=20, d_model=16, n_heads=2), 0)
    with pytest.raises(ConfigurationError):
        ensemble_scores([a, b], [None, None], [[]], VOCAB.eos)


def test_average_state_dicts():
    a, b = init_model(cfg(), 0).state_dict(), init_model(cfg(), 1).state_dict()
    avg = average_state_dicts([a, b])
    torch.testing.assert_close(avg["tok_emb.weight"], (a["tok_emb.weight"] + b["tok_emb.weight"]) / 2)
