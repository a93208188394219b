"""Time the compiled average-linkage kernel against the numpy fallback.

    python3 benchmarks/bench_linkage.py --sizes 100 200 400 --repeat 3
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from commval.canonicalize import cosine_distances
from commval.linkage import BACKEND, average_linkage_merges


def random_distances(n: int, d: int, seed: int) -> np.ndarray:
    x = np.random.default_rng(seed).normal(size=(n, d))
    return cosine_distances(x / np.linalg.norm(x, axis=1, keepdims=True))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    parser.add_argument("--dim", type=int, default=384)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    backends = ["python"] + (["cython"] if BACKEND == "cython" else [])
    if BACKEND != "cython":
        print("compiled kernel not available; timing the fallback only")
    print(f"{'n':>6} " + " ".join(f"{b + ' (s)':>14}" for b in backends) + f" {'speedup':>9}")
    for n in args.sizes:
        dist = random_distances(n, args.dim, args.seed)
        ref = average_linkage_merges(dist, args.k, backend="python")
        times = {}
        for b in backends:
            got = average_linkage_merges(dist, args.k, backend=b)
            if not (np.array_equal(got[0], ref[0]) and np.array_equal(got[1], ref[1])):
                raise SystemExit(f"backend {b} disagrees with the fallback at n={n}")
            times[b] = min(timeit.repeat(lambda: average_linkage_merges(dist, args.k, backend=b),
                                         number=1, repeat=args.repeat))
        speed = f"{times['python'] / times['cython']:>8.1f}x" if "cython" in times else f"{'-':>9}"
        print(f"{n:>6} " + " ".join(f"{times[b]:>14.4f}" for b in backends) + f" {speed}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
