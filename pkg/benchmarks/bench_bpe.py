"""Compare the compiled and pure-Python BPE merge kernels.

    python benchmarks/bench_bpe.py --words 20000 --merges 2000 --repeat 5
"""

import argparse
import statistics
import sys
import time
from collections import Counter

import numpy as np

from recam._kernels import PyMergeTable, compiled_merge_table


def synthetic_words(n, seed, alphabet=26):
    # Zipf-distributed words over a small alphabet so merges get reused
    rng = np.random.default_rng(seed)
    stems = ["".join(chr(97 + c) for c in rng.integers(0, alphabet, size=rng.integers(3, 12))) for _ in range(2000)]
    picks = np.minimum(rng.zipf(1.3, size=n), len(stems)) - 1
    return [[ord(ch) for ch in stems[i]] for i in picks]


def learn_merges(words, n_merges):
    counts = Counter(tuple(w) for w in words)
    left, right, merged = [], [], []
    next_id = 256
    for _ in range(n_merges):
        pairs = Counter()
        for w, c in counts.items():
            for a, b in zip(w, w[1:]):
                pairs[a, b] += c
        if not pairs:
            break
        (a, b), _ = max(pairs.items(), key=lambda kv: (kv[1], -kv[0][0], -kv[0][1]))
        left.append(a)
        right.append(b)
        merged.append(next_id)
        new = Counter()
        for w, c in counts.items():
            out, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == a and w[i + 1] == b:
                    out.append(next_id)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            new[tuple(out)] += c
        counts = new
        next_id += 1
    return left, right, merged


def time_backend(table, words, repeat):
    runs = []
    for _ in range(repeat):
        start = time.perf_counter()
        table.apply_many(words)
        runs.append(time.perf_counter() - start)
    return statistics.median(runs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--words", type=int, default=20000)
    ap.add_argument("--merges", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    words = synthetic_words(args.words, args.seed)
    rules = learn_merges(words[:5000], args.merges)
    py = PyMergeTable(*rules)
    compiled = compiled_merge_table()
    print(f"{len(words)} words, {len(py)} merges, median of {args.repeat}")

    t_py = time_backend(py, words, args.repeat)
    print(f"python   {t_py * 1e3:9.1f} ms")
    if compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 0
    cy = compiled(*rules)
    if cy.apply_many(words) != py.apply_many(words):
        print("backends disagree", file=sys.stderr)
        return 1
    t_cy = time_backend(cy, words, args.repeat)
    print(f"cython   {t_cy * 1e3:9.1f} ms")
    print(f"speedup  {t_py / t_cy:9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
