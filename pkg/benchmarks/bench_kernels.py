"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Each kernel runs on identical seeded inputs under both backends; the table
shows the best wall time of `repeat` runs, the speedup, and the largest
absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from syncmotion import kernels


def _cases(quick):
    rng = np.random.default_rng(0)
    n, N, Q = (2000, 128, 64) if quick else (20000, 245, 300)

    def unit_rows(q, d):
        W = rng.standard_normal((q, d)).astype(np.float32)
        return W / np.linalg.norm(W, axis=1, keepdims=True)

    X = rng.standard_normal((n, N)).astype(np.float32)
    Y = rng.standard_normal((n, N)).astype(np.float32)
    W0, Wy0 = unit_rows(Q, N), unit_rows(Q, N)
    order = rng.permutation(n).astype(np.int64)

    def seq():
        W = W0.copy()
        losses, wins, dirty = np.empty(n), np.zeros(Q, np.int64), np.zeros(Q, np.uint8)
        kernels.skmeans_seq_epoch(W, X, order, 0.01, 1000, 0, 1e-8, losses, wins, dirty)
        return W

    def pair():
        Wx, Wy = W0.copy(), Wy0.copy()
        losses, wins, dirty = np.empty(n), np.zeros(Q, np.int64), np.zeros(Q, np.uint8)
        kernels.skmeans_pair_epoch(Wx, Wy, X, Y, order, 0.01, 1000, 0, 1e-8, losses, wins, dirty)
        return np.concatenate([Wx, Wy])

    def online():
        W = X[:Q].copy()
        kernels.kmeans_online_epoch(W, X, order, 0.01, np.empty(n), np.zeros(Q, np.int64))
        return W

    D = rng.standard_normal((n, 50))
    C = rng.standard_normal((200 if quick else 3000, 50))
    H = rng.random((200 if quick else 1000, 200))
    H /= H.sum(axis=1, keepdims=True)

    return [
        (f"skmeans_seq_epoch n={n} N={N} Q={Q}", seq),
        (f"skmeans_pair_epoch n={n} N={N} Q={Q}", pair),
        (f"kmeans_online_epoch n={n} N={N} Q={Q}", online),
        (f"nearest_centroid n={n} K={C.shape[0]} D=50", lambda: kernels.nearest_centroid(D, C)[1]),
        (f"chi2_matrix {H.shape[0]}x{H.shape[0]} K=200", lambda: kernels.chi2_matrix(H, H)),
    ]


def _best(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), np.asarray(out, dtype=np.float64)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small inputs")
    args = ap.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        print("compiled backend not built; only the python backend is available")
    print(f"{'kernel':44s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    previous = kernels.BACKEND
    try:
        for name, fn in _cases(args.quick):
            res = {}
            for backend in kernels.BACKENDS:
                kernels.use_backend(backend)
                res[backend] = _best(fn, args.repeat)
            tp, outp = res["python"]
            if "compiled" in res:
                tc, outc = res["compiled"]
                diff = float(np.max(np.abs(outc - outp)))
                print(f"{name:44s} {tc:11.4f} {tp:10.4f} {tp / tc:7.1f}x {diff:11.2e}")
            else:
                print(f"{name:44s} {'-':>11s} {tp:10.4f} {'-':>8s} {'-':>11s}")
    finally:
        kernels.use_backend(previous)


if __name__ == "__main__":
    main()
