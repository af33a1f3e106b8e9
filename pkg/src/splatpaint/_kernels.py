"""Hot numeric kernels: numba-compiled loops with pure-numpy fallbacks.

The numba path is the default. Set SPLATPAINT_PURE_NUMPY=1 (or
NUMBA_DISABLE_JIT=1) before import to run on the vectorized numpy
implementations instead. Both paths evaluate the same arithmetic in the
same order; results agree except for last-ulp differences in exp().

All kernels are single-threaded and deterministic: per-pixel entry lists
are emitted in tile/depth order, and gradient scatters accumulate in CSR
order.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get
PURE_NUMPY = _env("SPLATPAINT_PURE_NUMPY", "").lower() in ("1", "true", "yes") or _env(
    "NUMBA_DISABLE_JIT", "0"
) not in ("0", "")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USING_NUMBA = HAVE_NUMBA and not PURE_NUMPY


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _blend_over_tiles_numpy(
    tile_entry_ptr,
    entry_splat,
    splat_gid,
    ctr,
    icov,
    opac,
    tile_x0,
    tile_y0,
    tile_w,
    tile_h,
    alpha_min,
    alpha_max,
    t_stop,
):
    n_tiles = tile_entry_ptr.shape[0] - 1
    counts_parts = []
    gauss_parts = []
    weight_parts = []
    tbg_parts = []
    for t in range(n_tiles):
        w = int(tile_w[t])
        h = int(tile_h[t])
        npix = w * h
        rows = entry_splat[tile_entry_ptr[t] : tile_entry_ptr[t + 1]]
        if rows.size == 0:
            counts_parts.append(np.zeros(npix, dtype=np.int64))
            tbg_parts.append(np.ones(npix))
            continue
        xs = tile_x0[t] + np.arange(w) + 0.5
        ys = tile_y0[t] + np.arange(h) + 0.5
        dx = xs[None, :, None] - ctr[rows, 0][None, None, :]  # h,w,K
        dy = ys[:, None, None] - ctr[rows, 1][None, None, :]
        q = (
            icov[rows, 0] * dx * dx
            + 2.0 * icov[rows, 1] * dx * dy
            + icov[rows, 2] * dy * dy
        )
        a = opac[rows] * np.exp(-0.5 * q)
        np.minimum(a, alpha_max, out=a)
        a[a < alpha_min] = 0.0
        a = a.reshape(npix, rows.size)
        one_minus = 1.0 - a
        cum = np.cumprod(one_minus, axis=1)
        t_excl = np.empty_like(cum)
        t_excl[:, 0] = 1.0
        t_excl[:, 1:] = cum[:, :-1]
        include = (a > 0.0) & (t_excl >= t_stop)
        w_mat = np.where(include, a * t_excl, 0.0)
        # final transmittance: product over included entries, in order
        masked = np.where(include, one_minus, 1.0)
        tbg_parts.append(np.cumprod(masked, axis=1)[:, -1])
        counts_parts.append(include.sum(axis=1).astype(np.int64))
        pix_i, ent_i = np.nonzero(include)
        gauss_parts.append(splat_gid[rows[ent_i]])
        weight_parts.append(w_mat[pix_i, ent_i])
    counts = np.concatenate(counts_parts) if counts_parts else np.zeros(0, np.int64)
    ptr = np.zeros(counts.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    gauss = (
        np.concatenate(gauss_parts).astype(np.int32)
        if gauss_parts
        else np.zeros(0, np.int32)
    )
    weight = np.concatenate(weight_parts) if weight_parts else np.zeros(0)
    t_bg = np.concatenate(tbg_parts) if tbg_parts else np.zeros(0)
    return ptr, gauss, weight, t_bg


def _segments(ptr):
    return np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))


def _composite_forward_numpy(ptr, gauss, weight, t_bg, colors, background):
    out = t_bg[:, None] * background[None, :]
    seg = _segments(ptr)
    np.add.at(out, seg, weight[:, None] * colors[gauss])
    return out


def _composite_backward_numpy(ptr, gauss, weight, d_pix, n_colors):
    grad = np.zeros((n_colors, 3))
    seg = _segments(ptr)
    np.add.at(grad, gauss, weight[:, None] * d_pix[seg])
    return grad


def _alpha_forward_numpy(ptr, gauss, weight, alphas):
    out = np.zeros(ptr.shape[0] - 1)
    seg = _segments(ptr)
    np.add.at(out, seg, weight * alphas[gauss])
    return out


def _hash_gather_numpy(table, idx, wts):
    return np.einsum("nc,ncf->nf", wts, table[idx])


def _hash_scatter_numpy(grad, idx, wts, dfeat):
    f = grad.shape[1]
    np.add.at(grad, idx.ravel(), (wts[:, :, None] * dfeat[:, None, :]).reshape(-1, f))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USING_NUMBA:

    @njit(cache=True)
    def _blend_counts_nb(
        tile_entry_ptr,
        entry_splat,
        ctr,
        icov,
        opac,
        tile_x0,
        tile_y0,
        tile_w,
        tile_h,
        alpha_min,
        alpha_max,
        t_stop,
    ):
        n_tiles = tile_entry_ptr.shape[0] - 1
        total_px = 0
        for t in range(n_tiles):
            total_px += tile_w[t] * tile_h[t]
        counts = np.zeros(total_px, dtype=np.int64)
        t_bg = np.ones(total_px)
        base = 0
        for t in range(n_tiles):
            e0 = tile_entry_ptr[t]
            e1 = tile_entry_ptr[t + 1]
            w = tile_w[t]
            h = tile_h[t]
            for py in range(h):
                y = tile_y0[t] + py + 0.5
                for px in range(w):
                    x = tile_x0[t] + px + 0.5
                    pix = base + py * w + px
                    trans = 1.0
                    c = 0
                    for e in range(e0, e1):
                        s = entry_splat[e]
                        dx = x - ctr[s, 0]
                        dy = y - ctr[s, 1]
                        q = (
                            icov[s, 0] * dx * dx
                            + 2.0 * icov[s, 1] * dx * dy
                            + icov[s, 2] * dy * dy
                        )
                        a = opac[s] * np.exp(-0.5 * q)
                        if a > alpha_max:
                            a = alpha_max
                        if a < alpha_min:
                            continue
                        c += 1
                        trans *= 1.0 - a
                        if trans < t_stop:
                            break
                    counts[pix] = c
                    t_bg[pix] = trans
            base += w * h
        return counts, t_bg

    @njit(cache=True)
    def _blend_fill_nb(
        tile_entry_ptr,
        entry_splat,
        splat_gid,
        ctr,
        icov,
        opac,
        tile_x0,
        tile_y0,
        tile_w,
        tile_h,
        alpha_min,
        alpha_max,
        t_stop,
        ptr,
        gauss,
        weight,
    ):
        n_tiles = tile_entry_ptr.shape[0] - 1
        base = 0
        for t in range(n_tiles):
            e0 = tile_entry_ptr[t]
            e1 = tile_entry_ptr[t + 1]
            w = tile_w[t]
            h = tile_h[t]
            for py in range(h):
                y = tile_y0[t] + py + 0.5
                for px in range(w):
                    x = tile_x0[t] + px + 0.5
                    pix = base + py * w + px
                    out = ptr[pix]
                    trans = 1.0
                    for e in range(e0, e1):
                        s = entry_splat[e]
                        dx = x - ctr[s, 0]
                        dy = y - ctr[s, 1]
                        q = (
                            icov[s, 0] * dx * dx
                            + 2.0 * icov[s, 1] * dx * dy
                            + icov[s, 2] * dy * dy
                        )
                        a = opac[s] * np.exp(-0.5 * q)
                        if a > alpha_max:
                            a = alpha_max
                        if a < alpha_min:
                            continue
                        gauss[out] = splat_gid[s]
                        weight[out] = a * trans
                        out += 1
                        trans *= 1.0 - a
                        if trans < t_stop:
                            break
            base += w * h

    def _blend_over_tiles_numba(
        tile_entry_ptr,
        entry_splat,
        splat_gid,
        ctr,
        icov,
        opac,
        tile_x0,
        tile_y0,
        tile_w,
        tile_h,
        alpha_min,
        alpha_max,
        t_stop,
    ):
        counts, t_bg = _blend_counts_nb(
            tile_entry_ptr,
            entry_splat,
            ctr,
            icov,
            opac,
            tile_x0,
            tile_y0,
            tile_w,
            tile_h,
            alpha_min,
            alpha_max,
            t_stop,
        )
        ptr = np.zeros(counts.shape[0] + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        gauss = np.zeros(ptr[-1], dtype=np.int32)
        weight = np.zeros(ptr[-1])
        _blend_fill_nb(
            tile_entry_ptr,
            entry_splat,
            splat_gid,
            ctr,
            icov,
            opac,
            tile_x0,
            tile_y0,
            tile_w,
            tile_h,
            alpha_min,
            alpha_max,
            t_stop,
            ptr,
            gauss,
            weight,
        )
        return ptr, gauss, weight, t_bg

    @njit(cache=True)
    def _composite_forward_nb(ptr, gauss, weight, t_bg, colors, background):
        n = t_bg.shape[0]
        out = np.empty((n, 3))
        for p in range(n):
            r = t_bg[p] * background[0]
            g = t_bg[p] * background[1]
            b = t_bg[p] * background[2]
            for e in range(ptr[p], ptr[p + 1]):
                gi = gauss[e]
                w = weight[e]
                r += w * colors[gi, 0]
                g += w * colors[gi, 1]
                b += w * colors[gi, 2]
            out[p, 0] = r
            out[p, 1] = g
            out[p, 2] = b
        return out

    @njit(cache=True)
    def _composite_backward_nb(ptr, gauss, weight, d_pix, n_colors):
        grad = np.zeros((n_colors, 3))
        for p in range(ptr.shape[0] - 1):
            for e in range(ptr[p], ptr[p + 1]):
                gi = gauss[e]
                w = weight[e]
                grad[gi, 0] += w * d_pix[p, 0]
                grad[gi, 1] += w * d_pix[p, 1]
                grad[gi, 2] += w * d_pix[p, 2]
        return grad

    @njit(cache=True)
    def _alpha_forward_nb(ptr, gauss, weight, alphas):
        n = ptr.shape[0] - 1
        out = np.zeros(n)
        for p in range(n):
            for e in range(ptr[p], ptr[p + 1]):
                out[p] += weight[e] * alphas[gauss[e]]
        return out

    @njit(cache=True)
    def _hash_gather_nb(table, idx, wts):
        n = idx.shape[0]
        f = table.shape[1]
        out = np.zeros((n, f))
        for i in range(n):
            for c in range(8):
                w = wts[i, c]
                row = idx[i, c]
                for k in range(f):
                    out[i, k] += w * table[row, k]
        return out

    @njit(cache=True)
    def _hash_scatter_nb(grad, idx, wts, dfeat):
        n = idx.shape[0]
        f = grad.shape[1]
        for i in range(n):
            for c in range(8):
                w = wts[i, c]
                row = idx[i, c]
                for k in range(f):
                    grad[row, k] += w * dfeat[i, k]


if USING_NUMBA:
    blend_over_tiles = _blend_over_tiles_numba
    composite_forward_csr = _composite_forward_nb
    composite_backward_csr = _composite_backward_nb
    alpha_forward_csr = _alpha_forward_nb
    hash_gather = _hash_gather_nb
    hash_scatter = _hash_scatter_nb
else:
    blend_over_tiles = _blend_over_tiles_numpy
    composite_forward_csr = _composite_forward_numpy
    composite_backward_csr = _composite_backward_numpy
    alpha_forward_csr = _alpha_forward_numpy
    hash_gather = _hash_gather_numpy
    hash_scatter = _hash_scatter_numpy
