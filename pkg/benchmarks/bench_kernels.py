"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Reports per-kernel timings on a representative workload (one 128x128 view
of a ~900-splat scene plus a hash-grid batch). The numpy column is what
you get with SPLATPAINT_PURE_NUMPY=1.
"""

import argparse
import time

import numpy as np

from splatpaint import _kernels as K


def timeit(fn, repeat):
    fn()  # warm (jit compile / cache touch)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def blend_workload(rng, side=128, n_splats=900, tile=16):
    nt = side // tile
    tiles = nt * nt
    ctr = rng.uniform(0, side, size=(n_splats, 2))
    sig = rng.uniform(1.0, 3.5, size=n_splats)
    icov = np.stack([1.0 / sig**2, np.zeros(n_splats), 1.0 / sig**2], 1)
    opac = rng.uniform(0.3, 1.0, size=n_splats)
    # each splat lands in the tiles its 3-sigma box touches
    rows = []
    ptr = np.zeros(tiles + 1, dtype=np.int64)
    for t in range(tiles):
        x0, y0 = (t % nt) * tile, (t // nt) * tile
        r = 3.0 * sig
        hit = (
            (ctr[:, 0] + r > x0) & (ctr[:, 0] - r < x0 + tile)
            & (ctr[:, 1] + r > y0) & (ctr[:, 1] - r < y0 + tile)
        )
        idx = np.nonzero(hit)[0]
        rows.append(idx[np.argsort(idx)])
        ptr[t + 1] = ptr[t] + idx.size
    entry_splat = np.concatenate(rows).astype(np.int64)
    gid = np.arange(n_splats, dtype=np.int32)
    tid = np.arange(tiles)
    geo = (
        ((tid % nt) * tile).astype(np.int64),
        ((tid // nt) * tile).astype(np.int64),
        np.full(tiles, tile, dtype=np.int64),
        np.full(tiles, tile, dtype=np.int64),
    )
    return (ptr, entry_splat, gid, ctr, icov, opac, *geo, 1 / 255.0, 0.99, 1e-4)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        raise SystemExit("numba unavailable; nothing to compare")

    rng = np.random.default_rng(0)
    blend_args = blend_workload(rng)
    ptr, gauss, weight, t_bg = K._blend_over_tiles_numba(*blend_args)
    colors = rng.random((900, 3))
    bg = rng.random(3)
    d_pix = rng.normal(size=(t_bg.shape[0], 3))
    alphas = rng.random(900)
    table = rng.normal(size=(2**14, 2))
    idx = rng.integers(0, 2**14, size=(5000, 8))
    wts = rng.random((5000, 8))
    dfeat = rng.normal(size=(5000, 2))
    grad = np.zeros_like(table)

    cases = [
        ("blend precompute", lambda: K._blend_over_tiles_numba(*blend_args),
         lambda: K._blend_over_tiles_numpy(*blend_args)),
        ("composite forward", lambda: K._composite_forward_nb(ptr, gauss, weight, t_bg, colors, bg),
         lambda: K._composite_forward_numpy(ptr, gauss, weight, t_bg, colors, bg)),
        ("composite backward", lambda: K._composite_backward_nb(ptr, gauss, weight, d_pix, 900),
         lambda: K._composite_backward_numpy(ptr, gauss, weight, d_pix, 900)),
        ("alpha forward", lambda: K._alpha_forward_nb(ptr, gauss, weight, alphas),
         lambda: K._alpha_forward_numpy(ptr, gauss, weight, alphas)),
        ("hash gather", lambda: K._hash_gather_nb(table, idx, wts),
         lambda: K._hash_gather_numpy(table, idx, wts)),
        ("hash scatter", lambda: K._hash_scatter_nb(grad, idx, wts, dfeat),
         lambda: K._hash_scatter_numpy(grad, idx, wts, dfeat)),
    ]

    print(f"{'kernel':<20} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, nb, np_ in cases:
        t_nb = timeit(nb, args.repeat)
        t_np = timeit(np_, args.repeat)
        print(f"{name:<20} {t_nb * 1e3:>8.2f}ms {t_np * 1e3:>8.2f}ms {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
