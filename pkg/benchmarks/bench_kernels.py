"""Time the compiled and numpy paths of every hot kernel on identical inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Shapes mirror the desk-scale workload: 1000 sequences x 20 prefixes scored
over 200 items with k = 20 lists.
"""

import argparse
import json
import sys
import time

import numpy as np

from seqextract import _accel, kernels


def cases(rng):
    P, n, k = 20_000, 200, 20
    scores = rng.normal(size=(P, n)).astype(np.float32)
    scores[:, ::7] = np.round(scores[:, ::7], 1)  # some ties
    black = np.argsort(rng.random((P, n)), axis=1)[:, :k]
    white_top = kernels.topk_rows_numpy(scores, k)
    white_rank = kernels.ranks_of_numpy(scores, black)
    exclude = black
    u = rng.random((P, k))
    return {
        "topk_rows": ((scores, k), kernels.topk_rows_numpy, kernels.topk_rows_numba),
        "ranks_of": ((scores, black), kernels.ranks_of_numpy, kernels.ranks_of_numba),
        "repair_pairs": ((black, white_top, white_rank), kernels.repair_pairs_numpy, kernels.repair_pairs_numba),
        "sample_excluding": ((n, exclude, u), kernels.sample_excluding_numpy, kernels.sample_excluding_numba),
    }


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy path exists", file=sys.stderr)
        return 1
    rows = []
    for name, (inputs, np_fn, nb_fn) in cases(np.random.default_rng(0)).items():
        nb_fn(*inputs)  # compile outside the timed region
        t_np, a = best_of(np_fn, inputs, args.repeat)
        t_nb, b = best_of(nb_fn, inputs, args.repeat)
        a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        rows.append({"kernel": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb, "speedup": t_np / t_nb, "identical": same})
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  identical")
    for r in rows:
        print(f"{r['kernel']:<18}{r['numpy_ms']:>12.2f}{r['numba_ms']:>12.2f}{r['speedup']:>10.2f}  {r['identical']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
