"""Compare the compiled and pure-Python constraint kernels.

    python3 benchmarks/bench_kernels.py [--cases 300] [--repeat 5]

Workload: random phrase sets (1-4 phrases, 1-3 tokens, vocabulary 60) and
candidate batches shaped like one decoder step at beam 10 (about 100
candidates).  Each backend runs the same inputs; outputs are checked for
equality before timings are printed.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from lexcon.constraints import build_automaton
from lexcon.kernels import implementations


def make_cases(n: int, seed: int, vocab: int = 60, batch: int = 100):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n):
        phrases = [rng.integers(0, vocab, rng.integers(1, 4)).tolist() for _ in range(rng.integers(1, 5))]
        aut = build_automaton(phrases)
        # walk a few random steps so states and flags are not all at the root
        states = np.zeros(batch, dtype=np.int32)
        mets = np.zeros((batch, aut.n_phrases), dtype=np.uint8)
        tokens = rng.integers(0, vocab, batch).astype(np.int32)
        cases.append((aut, states, mets, tokens))
    impl = implementations()["python"]
    warmed = []
    for aut, states, mets, tokens in cases:
        s, m, c = impl.advance_batch(aut, states, mets, tokens)
        warmed.append((aut, s, m, c, tokens[::-1].copy()))
    return warmed


def run_batch(impl, cases):
    for aut, s, m, _, tokens in cases:
        impl.advance_batch(aut, s, m, tokens)


def run_forced(impl, cases):
    for aut, s, m, c, _ in cases:
        for i in range(0, len(s), 10):
            impl.forced_tokens(aut, int(s[i]), bytes(m[i]), int(c[i]))


def check_parity(impls: dict, cases) -> None:
    ref = impls["python"]
    for name, impl in impls.items():
        for aut, s, m, c, tokens in cases:
            a = ref.advance_batch(aut, s, m, tokens)
            b = impl.advance_batch(aut, s, m, tokens)
            if not all(np.array_equal(x, y) for x, y in zip(a, b)):
                sys.exit(f"{name}: advance_batch disagrees with the python kernel")
            for i in range(len(s)):
                args = (aut, int(s[i]), bytes(m[i]), int(c[i]))
                if list(ref.forced_tokens(*args)) != list(impl.forced_tokens(*args)):
                    sys.exit(f"{name}: forced_tokens disagrees with the python kernel")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = implementations()
    cases = make_cases(args.cases, args.seed)
    check_parity(impls, cases)
    if "cython" not in impls:
        print("compiled kernels not built; only the python backend is available")

    n_cand = sum(len(c[1]) for c in cases)
    print(f"{args.cases} automata, {n_cand} candidate transitions per pass, best of {args.repeat}")
    print(f"{'kernel':<14}{'backend':<9}{'seconds':>10}{'per item (us)':>15}{'speedup':>9}")
    for label, fn, items in (("advance_batch", run_batch, n_cand), ("forced_tokens", run_forced, n_cand // 10)):
        base = None
        for name in ("python", "cython"):
            if name not in impls:
                continue
            t = min(timeit.repeat(lambda: fn(impls[name], cases), number=1, repeat=args.repeat))
            base = base or t
            print(f"{label:<14}{name:<9}{t:10.4f}{1e6 * t / items:15.2f}{base / t:9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
