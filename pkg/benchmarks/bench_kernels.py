"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 2642] [--dim 512] [--repeats 3]

The numba column is skipped when XMATCH_DISABLE_NUMBA is set.
"""
import argparse
import time

import numpy as np

from xmatch import kernels
from xmatch.core import l2_normalize_rows
from xmatch.mining import SELFIE, DOCUMENT


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def mining_inputs(rng, batch, dim):
    half = batch // 2
    emb = l2_normalize_rows(rng.standard_normal((batch, dim)))
    dist = np.maximum(2.0 - 2.0 * np.clip(emb @ emb.T, -1.0, 1.0), 0.0)
    subject = np.concatenate([np.arange(half), np.arange(half)])
    modality = np.concatenate([np.full(half, SELFIE), np.full(half, DOCUMENT)])
    anchors = np.arange(batch)
    return dist, subject, modality, anchors, rng.random(batch)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2642)
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--batch", type=int, default=240)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    docs = l2_normalize_rows(rng.standard_normal((args.n, args.dim)))
    selfies = l2_normalize_rows(rng.standard_normal((args.n, args.dim)))
    mine = mining_inputs(rng, args.batch, 128)

    print(f"cosine {args.n}x{args.n} d={args.dim}, mining batch={args.batch}")
    print(f"{'kernel':<18}{'numpy (s)':>12}{'numba (s)':>12}{'max |diff|':>14}")

    t_np, ref = best_of(lambda: kernels.cosine_matrix_numpy(selfies, docs), args.repeats)
    row = f"{'cosine_matrix':<18}{t_np:>12.4f}"
    if kernels.cosine_matrix_numba is not None:
        kernels.cosine_matrix_numba(selfies[:4], docs[:4])  # compile outside the timer
        t_nb, out = best_of(lambda: kernels.cosine_matrix_numba(selfies, docs), args.repeats)
        row += f"{t_nb:>12.4f}{np.abs(out - ref).max():>14.2e}"
    print(row)

    margin = 0.3
    t_np, ref = best_of(lambda: kernels.select_negatives_numpy(*mine[:4], margin, mine[4]),
                        args.repeats)
    row = f"{'select_negatives':<18}{t_np:>12.4f}"
    if kernels.select_negatives_numba is not None:
        kernels.select_negatives_numba(*mine[:4], margin, mine[4])
        t_nb, out = best_of(lambda: kernels.select_negatives_numba(*mine[:4], margin, mine[4]),
                            args.repeats)
        same = all(np.array_equal(a, b) for a, b in zip(out, ref))
        row += f"{t_nb:>12.4f}{'identical' if same else 'DIFFERENT':>14}"
    print(row)


if __name__ == "__main__":
    main()
