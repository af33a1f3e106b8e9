"""Frozen per-pixel blend weights and the linear compositing operators.

Because geometry and opacity never change, the per-pixel front-to-back
weights w_i = alpha_i * T_i can be computed once per view. Compositing any
per-gaussian color field is then a sparse linear map, and its adjoint
(scatter-add of pixel gradients) is exact.

Pixels are stored tile-major (tiles in raster order, row-major inside a
tile) in a CSR layout: this is what makes the backward scatter
cache-friendly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels
from .errors import NumericError
from .projection import TILE_SIZE, bin_arrays, project_arrays, tile_grid

if TYPE_CHECKING:
    from .scene import Camera, Scene

ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4


@dataclass
class BlendRecord:
    """Per-pixel ordered (gaussian, weight) lists for one camera.

    ptr/gauss/weight form a CSR over pixels in tile-major order;
    flat_index maps each CSR pixel slot to its y*width + x position.
    """

    width: int
    height: int
    tile_size: int
    ntx: int
    nty: int
    tile_pixel_ptr: np.ndarray  # (ntiles+1,) first CSR pixel of each tile
    flat_index: np.ndarray  # (P,) image position per CSR pixel
    ptr: np.ndarray  # (P+1,)
    gauss: np.ndarray  # (nnz,) int32 gaussian indices
    weight: np.ndarray  # (nnz,) float64
    t_bg: np.ndarray  # (P,) residual transmittance

    @property
    def n_tiles(self) -> int:
        return self.ntx * self.nty

    @property
    def n_pixels(self) -> int:
        return self.t_bg.shape[0]

    def tile_index(self, tx: int, ty: int) -> int:
        return ty * self.ntx + tx

    def tile_slices(self, tile: int) -> tuple[slice, slice]:
        """(pixel slice, entry slice) of one tile within the CSR arrays."""
        p0 = int(self.tile_pixel_ptr[tile])
        p1 = int(self.tile_pixel_ptr[tile + 1])
        return slice(p0, p1), slice(int(self.ptr[p0]), int(self.ptr[p1]))

    def scatter_to_image(self, values: np.ndarray) -> np.ndarray:
        """Reorder CSR-ordered per-pixel values (P, ...) into an H x W image."""
        out = np.zeros((self.height * self.width,) + values.shape[1:])
        out[self.flat_index] = values
        return out.reshape((self.height, self.width) + values.shape[1:])


def _tile_geometry(width, height, tile_size):
    ntx, nty = tile_grid(width, height, tile_size)
    tid = np.arange(ntx * nty)
    x0 = (tid % ntx) * tile_size
    y0 = (tid // ntx) * tile_size
    tw = np.minimum(tile_size, width - x0)
    th = np.minimum(tile_size, height - y0)
    return ntx, nty, x0.astype(np.int64), y0.astype(np.int64), tw.astype(
        np.int64
    ), th.astype(np.int64)


def blend_for_camera(
    means: np.ndarray,
    quats: np.ndarray,
    scales: np.ndarray,
    opacities: np.ndarray,
    cam: "Camera",
    tile_size: int = TILE_SIZE,
) -> BlendRecord:
    """Project, bin, and composite alpha weights for one camera pose."""
    centers, cov_abc, depths, gidx = project_arrays(means, quats, scales, cam)
    ptr_tiles, rows, ntx, nty = bin_arrays(
        centers, cov_abc, depths, gidx, tile_size, cam.width, cam.height
    )
    det = cov_abc[:, 0] * cov_abc[:, 2] - cov_abc[:, 1] ** 2
    if centers.shape[0] and (not np.all(np.isfinite(det)) or np.any(det <= 0.0)):
        raise NumericError("singular 2D covariance in blend precompute")
    icov = np.stack(
        [cov_abc[:, 2] / det, -cov_abc[:, 1] / det, cov_abc[:, 0] / det], 1
    ) if centers.shape[0] else np.zeros((0, 3))

    ntx2, nty2, x0, y0, tw, th = _tile_geometry(cam.width, cam.height, tile_size)
    ptr, gauss, weight, t_bg = _kernels.blend_over_tiles(
        ptr_tiles,
        rows,
        gidx,
        np.ascontiguousarray(centers),
        np.ascontiguousarray(icov),
        np.ascontiguousarray(opacities[gidx] if centers.shape[0] else opacities[:0]),
        x0,
        y0,
        tw,
        th,
        ALPHA_MIN,
        ALPHA_MAX,
        T_STOP,
    )

    # map CSR slots back to image positions
    pix_counts = tw * th
    tile_pixel_ptr = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(pix_counts, out=tile_pixel_ptr[1:])
    flat = np.empty(int(pix_counts.sum()), dtype=np.int64)
    for t in range(ntx * nty):
        ys = y0[t] + np.arange(th[t])
        xs = x0[t] + np.arange(tw[t])
        flat[tile_pixel_ptr[t] : tile_pixel_ptr[t + 1]] = (
            ys[:, None] * cam.width + xs[None, :]
        ).ravel()

    return BlendRecord(
        width=cam.width,
        height=cam.height,
        tile_size=tile_size,
        ntx=ntx,
        nty=nty,
        tile_pixel_ptr=tile_pixel_ptr,
        flat_index=flat,
        ptr=ptr,
        gauss=gauss,
        weight=weight,
        t_bg=t_bg,
    )


def precompute_blend(scene: "Scene", view_id: int, tile_size: int = TILE_SIZE) -> BlendRecord:
    """Blend weights for a training view of a frozen scene."""
    packed = scene.packed()
    cam = scene.views[view_id].camera
    return blend_for_camera(
        packed.means, packed.quats, packed.scales, packed.opacities, cam, tile_size
    )


def composite_forward(
    blend: BlendRecord, colors: np.ndarray, background: np.ndarray
) -> np.ndarray:
    """pixel = sum_i w_i c_i + T_bg * background, as an H x W x 3 image."""
    if blend.gauss.size and int(blend.gauss.max()) >= colors.shape[0]:
        raise IndexError("blend record references a missing color index")
    flat = _kernels.composite_forward_csr(
        blend.ptr,
        blend.gauss,
        blend.weight,
        blend.t_bg,
        np.ascontiguousarray(colors, dtype=np.float64),
        np.ascontiguousarray(background, dtype=np.float64),
    )
    return blend.scatter_to_image(flat)


def composite_backward(
    blend: BlendRecord, d_image: np.ndarray, n_gaussians: int
) -> np.ndarray:
    """Adjoint of composite_forward: dL/dc_i = sum_pixels w_i dL/dpixel."""
    d_flat = np.ascontiguousarray(
        d_image.reshape(-1, 3)[blend.flat_index], dtype=np.float64
    )
    return _kernels.composite_backward_csr(
        blend.ptr, blend.gauss, blend.weight, d_flat, n_gaussians
    )


def render_alpha(blend: BlendRecord, alphas: np.ndarray) -> np.ndarray:
    """Composite per-gaussian scalars in [0,1]; background contributes 0."""
    a = np.asarray(alphas, dtype=np.float64)
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ValueError("alphas must lie in [0, 1]")
    flat = _kernels.alpha_forward_csr(blend.ptr, blend.gauss, blend.weight, a)
    return blend.scatter_to_image(flat)


# --- per-tile views used by the trainer -----------------------------------


def tile_forward(
    blend: BlendRecord, tile: int, colors: np.ndarray, background: np.ndarray
) -> np.ndarray:
    """Composite only one tile's pixels; returns (npix, 3) in CSR order."""
    pix, ent = blend.tile_slices(tile)
    ptr = blend.ptr[pix.start : pix.stop + 1] - blend.ptr[pix.start]
    return _kernels.composite_forward_csr(
        ptr,
        blend.gauss[ent],
        blend.weight[ent],
        blend.t_bg[pix],
        np.ascontiguousarray(colors, dtype=np.float64),
        np.ascontiguousarray(background, dtype=np.float64),
    )


def tile_backward(
    blend: BlendRecord, tile: int, d_pix: np.ndarray, n_gaussians: int
) -> np.ndarray:
    pix, ent = blend.tile_slices(tile)
    ptr = blend.ptr[pix.start : pix.stop + 1] - blend.ptr[pix.start]
    return _kernels.composite_backward_csr(
        ptr,
        blend.gauss[ent],
        blend.weight[ent],
        np.ascontiguousarray(d_pix, dtype=np.float64),
        n_gaussians,
    )


def tile_target(blend: BlendRecord, tile: int, image: np.ndarray) -> np.ndarray:
    """Ground-truth pixels of one tile in CSR order, (npix, 3)."""
    pix, _ = blend.tile_slices(tile)
    return image.reshape(-1, 3)[blend.flat_index[pix]]


# --- cache files -----------------------------------------------------------

_CACHE_MAGIC = b"VGSB"
_CACHE_VERSION = 1


def blend_cache_key(scene_hash: str, view_id: int, tile_size: int) -> str:
    return f"{scene_hash[:16]}_v{view_id}_t{tile_size}"


def save_blend(record: BlendRecord, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(
            struct.pack(
                "<6I",
                _CACHE_VERSION,
                record.width,
                record.height,
                record.tile_size,
                record.ntx,
                record.nty,
            )
        )
        for arr, dtype in (
            (record.tile_pixel_ptr, "<i8"),
            (record.flat_index, "<i8"),
            (record.ptr, "<i8"),
            (record.gauss, "<i4"),
            (record.weight, "<f8"),
            (record.t_bg, "<f8"),
        ):
            data = np.ascontiguousarray(arr, dtype=dtype)
            fh.write(struct.pack("<Q", data.shape[0]))
            fh.write(data.tobytes())


def load_blend(path: str | Path) -> BlendRecord:
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise NumericError(f"not a blend cache file: {path}")
        version, width, height, tile_size, ntx, nty = struct.unpack("<6I", fh.read(24))
        if version != _CACHE_VERSION:
            raise NumericError(f"unsupported blend cache version {version}")
        arrays = []
        for dtype in ("<i8", "<i8", "<i8", "<i4", "<f8", "<f8"):
            (count,) = struct.unpack("<Q", fh.read(8))
            arrays.append(
                np.frombuffer(fh.read(count * np.dtype(dtype).itemsize), dtype=dtype).copy()
            )
    return BlendRecord(
        width, height, tile_size, ntx, nty, arrays[0], arrays[1], arrays[2],
        arrays[3], arrays[4], arrays[5],
    )


def pose_hash(cam: "Camera", tile_size: int) -> str:
    """Cache key for novel poses; quantized so interactive orbits reuse records."""
    rot_q = np.round(cam.rotation / 1e-5).astype(np.int64)
    tr_q = np.round(cam.translation / 1e-4).astype(np.int64)
    h = hashlib.sha256()
    h.update(rot_q.tobytes())
    h.update(tr_q.tobytes())
    h.update(
        struct.pack(
            "<4d3I", cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height, tile_size
        )
    )
    return h.hexdigest()
