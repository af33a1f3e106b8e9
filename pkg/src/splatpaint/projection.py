"""Projection of 3D gaussians to screen-space splats and tile binning.

Conventions: camera looks down +z, pixel (ix, iy) has center
(ix + 0.5, iy + 0.5), and a splat's footprint is the 3-sigma ellipse of
its 2D covariance (error below 1/255 outside it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import NumericError

if TYPE_CHECKING:
    from .scene import Camera, Gaussian3D

TILE_SIZE = 16
NEAR_PLANE = 0.01
LOW_PASS = 0.3  # px^2 added to the cov2d diagonal, upstream anti-alias floor
FOOTPRINT_SIGMAS = 3.0


@dataclass
class Splat2D:
    """Screen-space gaussian: pixel-space center, 2x2 covariance, camera depth."""

    center: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) symmetric positive definite, pixels^2
    depth: float
    gaussian_index: int


@dataclass
class TileBin:
    """Depth-sorted splat references for one tile.

    entries are (depth_key, gaussian_index) pairs where depth_key is the
    order-preserving uint32 bit pattern of the float32 camera depth.
    """

    tile_coord: tuple[int, int]
    entries: list[tuple[int, int]]


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to 3x3 rotation matrix."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def covariance_3d(quat: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """World-space covariance R S S^T R^T of an anisotropic gaussian."""
    m = quat_to_rotation(quat) * scale[None, :]
    return m @ m.T


def project_arrays(
    means: np.ndarray,
    quats: np.ndarray,
    scales: np.ndarray,
    cam: "Camera",
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Project all gaussians at once.

    Returns (centers (M,2), cov_abc (M,3) packing [[a,b],[b,c]], depths (M,),
    gaussian_index (M,)) for the M splats surviving the near-plane and
    footprint culls.
    """
    n = means.shape[0]
    rot = cam.rotation
    p_cam = means @ rot.T + cam.translation[None, :]
    z = p_cam[:, 2]
    in_front = z > NEAR_PLANE

    # per-gaussian world covariance rotated into camera frame
    sigma = np.empty((n, 3, 3))
    for i in range(n):
        sigma[i] = covariance_3d(quats[i], scales[i])
    sigma_cam = np.einsum("ij,njk,lk->nil", rot, sigma, rot)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = np.where(in_front, 1.0 / z, 0.0)
    x, y = p_cam[:, 0], p_cam[:, 1]
    # perspective jacobian rows evaluated at the gaussian center
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = cam.fx * inv_z
    j[:, 0, 2] = -cam.fx * x * inv_z**2
    j[:, 1, 1] = cam.fy * inv_z
    j[:, 1, 2] = -cam.fy * y * inv_z**2
    cov2d = np.einsum("nij,njk,nlk->nil", j, sigma_cam, j)
    cov2d[:, 0, 0] += LOW_PASS
    cov2d[:, 1, 1] += LOW_PASS

    if not np.all(np.isfinite(cov2d[in_front])):
        raise NumericError("non-finite 2D covariance during projection")

    centers = np.stack([cam.fx * x * inv_z + cam.cx, cam.fy * y * inv_z + cam.cy], 1)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))
    radius = FOOTPRINT_SIGMAS * np.sqrt(np.maximum(lam_max, 0.0))

    on_screen = (
        (centers[:, 0] + radius > 0.0)
        & (centers[:, 0] - radius < cam.width)
        & (centers[:, 1] + radius > 0.0)
        & (centers[:, 1] - radius < cam.height)
    )
    keep = in_front & on_screen
    idx = np.nonzero(keep)[0].astype(np.int32)
    return (
        centers[keep],
        np.stack([a[keep], b[keep], c[keep]], 1),
        z[keep],
        idx,
    )


def project_gaussian(g: "Gaussian3D", cam: "Camera") -> Optional[Splat2D]:
    """Project one gaussian; returns None when culled."""
    centers, cov_abc, depths, idx = project_arrays(
        g.mean[None, :], g.rotation[None, :], g.scale[None, :], cam
    )
    if idx.size == 0:
        return None
    a, b, c = cov_abc[0]
    return Splat2D(
        center=centers[0],
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(depths[0]),
        gaussian_index=0,
    )


def depth_keys(depths: np.ndarray) -> np.ndarray:
    """Order-preserving uint32 keys from positive float depths."""
    return np.ascontiguousarray(depths, dtype=np.float32).view(np.uint32)


def tile_grid(width: int, height: int, tile_size: int) -> tuple[int, int]:
    """Tile counts for an image padded up to a tile-size multiple."""
    return -(-width // tile_size), -(-height // tile_size)


def bin_arrays(
    centers: np.ndarray,
    cov_abc: np.ndarray,
    depths: np.ndarray,
    gidx: np.ndarray,
    tile_size: int,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Bin projected splats into depth-sorted per-tile entry lists.

    A splat lands in every tile its 3-sigma axis-aligned box touches.
    Returns (tile_entry_ptr (ntiles+1,), entry_splat_row (E,), ntx, nty)
    with tiles in raster order and entries sorted by (depth, gaussian
    index) inside each tile.
    """
    ntx, nty = tile_grid(width, height, tile_size)
    m = centers.shape[0]
    if m == 0:
        return np.zeros(ntx * nty + 1, np.int64), np.zeros(0, np.int64), ntx, nty
    a, b, c = cov_abc[:, 0], cov_abc[:, 1], cov_abc[:, 2]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))
    radius = FOOTPRINT_SIGMAS * np.sqrt(lam_max)

    tx0 = np.clip(np.floor((centers[:, 0] - radius) / tile_size), 0, ntx - 1).astype(
        np.int64
    )
    tx1 = np.clip(np.floor((centers[:, 0] + radius) / tile_size), 0, ntx - 1).astype(
        np.int64
    )
    ty0 = np.clip(np.floor((centers[:, 1] - radius) / tile_size), 0, nty - 1).astype(
        np.int64
    )
    ty1 = np.clip(np.floor((centers[:, 1] + radius) / tile_size), 0, nty - 1).astype(
        np.int64
    )
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    per_splat = nx * ny
    total = int(per_splat.sum())

    rows = np.repeat(np.arange(m, dtype=np.int64), per_splat)
    local = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate([[0], np.cumsum(per_splat)[:-1]]), per_splat
    )
    tx = tx0[rows] + local % nx[rows]
    ty = ty0[rows] + local // nx[rows]
    tile_id = ty * ntx + tx

    keys = (tile_id.astype(np.uint64) << np.uint64(32)) | depth_keys(depths)[
        rows
    ].astype(np.uint64)
    order = np.lexsort((gidx[rows], keys))
    rows = rows[order]
    tile_id = tile_id[order]
    tile_entry_ptr = np.searchsorted(tile_id, np.arange(ntx * nty + 1)).astype(np.int64)
    return tile_entry_ptr, rows, ntx, nty


def bin_tiles(
    splats: list[Splat2D], tile_size: int, width: int, height: int
) -> list[TileBin]:
    """Spec-level binning API over Splat2D objects (empty tiles included)."""
    if splats:
        centers = np.stack([s.center for s in splats])
        cov_abc = np.stack(
            [(s.cov2d[0, 0], s.cov2d[0, 1], s.cov2d[1, 1]) for s in splats]
        )
        depths = np.array([s.depth for s in splats])
        gidx = np.array([s.gaussian_index for s in splats], dtype=np.int64)
    else:
        centers = np.zeros((0, 2))
        cov_abc = np.zeros((0, 3))
        depths = np.zeros(0)
        gidx = np.zeros(0, np.int64)
    ptr, rows, ntx, nty = bin_arrays(
        centers, cov_abc, depths, gidx, tile_size, width, height
    )
    keys = depth_keys(depths)
    bins = []
    for t in range(ntx * nty):
        entry_rows = rows[ptr[t] : ptr[t + 1]]
        bins.append(
            TileBin(
                tile_coord=(t % ntx, t // ntx),
                entries=[(int(keys[r]), int(gidx[r])) for r in entry_rows],
            )
        )
    return bins
