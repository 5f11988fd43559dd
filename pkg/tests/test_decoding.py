import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexcon.constraints import ConstraintSet, build_automaton
from lexcon.decoding import (
    DecodeConfig,
    SearchTrace,
    allocate_banks,
    beam_search,
    brute_force_decode,
    dba_decode,
    decode,
    gbs_decode,
    rescore,
)
from lexcon.errors import ConfigurationError, ConstraintFailure
from lexcon.scoring import TableScorer

EOS = 0


def cfg(beam, max_len=4, **kw):
    # source of length 0 makes max_len = max_len_b
    return DecodeConfig(beam_size=beam, max_len_a=0.0, max_len_b=max_len, **kw)


def greedy(scorer, source, max_len):
    ctx = scorer.start(source)
    prefix = ()
    score = 0.0
    for _ in range(max_len):
        row = np.asarray(scorer.step(ctx, [prefix]))[0]
        t = int(np.argmax(row))
        score += float(row[t])
        prefix += (t,)
        if t == EOS:
            break
    return prefix, score


@pytest.mark.parametrize("seed", range(20))
def test_beam_one_is_greedy(seed):
    sc = TableScorer(6, EOS, seed=seed)
    hyp = beam_search(sc, (), cfg(1, max_len=6))
    toks, score = greedy(sc, (), 6)
    if toks[-1] == EOS:
        assert hyp.tokens == toks
        assert hyp.score == pytest.approx(score)


@pytest.mark.parametrize("seed", range(20))
def test_saturating_beam_is_exhaustive(seed):
    sc = TableScorer(4, EOS, seed=seed)
    bf = brute_force_decode(sc, (), None, 4)
    hyp = beam_search(sc, (), cfg(4**4, max_len=4))
    assert hyp.finished and hyp.tokens == bf.tokens
    assert hyp.score == pytest.approx(bf.score)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("mode", ["gbs", "dba"])
def test_empty_constraints_match_plain(seed, mode):
    sc = TableScorer(7, EOS, seed=seed)
    plain = beam_search(sc, (), cfg(4, max_len=6))
    got = decode(sc, (), ConstraintSet(()), cfg(4, max_len=6, mode=mode))
    assert got.tokens == plain.tokens
    assert got.score == pytest.approx(plain.score)


@pytest.mark.parametrize("seed", range(25))
@pytest.mark.parametrize("fn", [gbs_decode, dba_decode])
def test_constrained_small_instances_match_brute_force(seed, fn):
    rng = np.random.default_rng(seed)
    cs = ConstraintSet((tuple(int(x) for x in rng.integers(1, 5, 2)),))
    sc = TableScorer(5, EOS, seed=seed)
    bf = brute_force_decode(sc, (), cs, 5)
    hyp = fn(sc, (), cs, cfg(5**5, max_len=5))
    assert bf.feasible
    assert hyp.tokens == bf.tokens
    assert hyp.normalized(0.6) == pytest.approx(bf.normalized)


@pytest.mark.parametrize("seed", range(30))
@pytest.mark.parametrize("mode", ["gbs", "dba"])
def test_output_contains_every_constraint(seed, mode):
    rng = np.random.default_rng(100 + seed)
    phrases = tuple(tuple(int(x) for x in rng.integers(1, 9, rng.integers(1, 3))) for _ in range(rng.integers(1, 4)))
    cs = ConstraintSet(phrases)
    sc = TableScorer(9, EOS, seed=seed)
    hyp = decode(sc, (), cs, cfg(6, max_len=12, mode=mode))
    # a returned hypothesis always completes the set; finished ones also end in eos
    assert hyp.finished == (hyp.tokens[-1] == EOS)
    aut = build_automaton(cs)
    assert aut.is_complete(aut.feed(hyp.tokens))
    assert rescore(sc, (), hyp.tokens) == pytest.approx(hyp.score)


def test_infeasible_budget_raises_with_best_partial():
    sc = TableScorer(6, EOS, seed=0)
    cs = ConstraintSet(((1, 2, 3, 4),))
    with pytest.raises(ConstraintFailure) as info:
        dba_decode(sc, (), cs, cfg(4, max_len=3))
    best = info.value.best
    assert not best.finished
    assert best.cstate.tokens_met <= 3


class NoEos:
    vocab_size = 4
    eos = EOS

    def start(self, source):
        return None

    def step(self, ctx, prefixes):
        row = np.log(np.array([0.0, 0.5, 0.3, 0.2]) + 1e-300)
        row[EOS] = -math.inf
        return np.tile(row, (len(prefixes), 1))


def test_unfinished_plain_search_is_flagged():
    hyp = beam_search(NoEos(), (), cfg(3, max_len=4))
    assert hyp.truncated and not hyp.finished
    assert hyp.tokens == (1, 1, 1, 1)


@pytest.mark.parametrize("seed", range(10))
def test_decoding_is_deterministic(seed):
    sc = TableScorer(8, EOS, seed=seed)
    cs = ConstraintSet(((3,), (5, 6)))
    a = dba_decode(sc, (), cs, cfg(5, max_len=10))
    b = dba_decode(sc, (), cs, cfg(5, max_len=10))
    assert a == b


@settings(max_examples=300)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=8), st.integers(1, 40))
def test_allocation_sums_to_beam(counts, beam):
    alloc = allocate_banks(counts, beam)
    assert sum(alloc) == beam
    assert len(alloc) == len(counts)
    assert all(a >= 0 for a in alloc)
    if sum(counts) >= beam:
        assert all(a <= c for a, c in zip(alloc, counts))


def test_allocation_examples():
    assert allocate_banks([5, 5, 5], 10) == [3, 3, 4]
    assert allocate_banks([5, 0, 5], 5) == [2, 0, 3]
    assert allocate_banks([10, 1, 1], 9) == [7, 1, 1]


@pytest.mark.parametrize("seed", range(5))
def test_dba_trace_allocations_sum_to_beam(seed):
    sc = TableScorer(9, EOS, seed=seed)
    trace = SearchTrace()
    dba_decode(sc, (), ConstraintSet(((2, 3), (4,))), cfg(7, max_len=10), trace)
    assert trace.allocations
    assert all(sum(a) == 7 for a in trace.allocations)


@pytest.mark.parametrize("seed", range(10))
def test_saturating_beam_is_monotone(seed):
    # once the beam holds every candidate, widening it cannot lower the score
    cs = ConstraintSet(((1, 2),))
    sc = TableScorer(4, EOS, seed=seed)
    a = dba_decode(sc, (), cs, cfg(64, max_len=4))
    b = dba_decode(sc, (), cs, cfg(256, max_len=4))
    assert b.normalized(0.6) >= a.normalized(0.6) - 1e-12


def test_config_validation():
    with pytest.raises(ConfigurationError):
        DecodeConfig(beam_size=0)
    with pytest.raises(ConfigurationError):
        DecodeConfig(mode="sideways")
    with pytest.raises(ConfigurationError):
        brute_force_decode(TableScorer(10, EOS), (), None, 9)
