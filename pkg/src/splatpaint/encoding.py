"""Hash-grid positional features and spherical-harmonic direction features.

Positions are contracted into a radius-2 ball, rescaled to [0,1]^3, and
trilinearly interpolated from L feature tables. Coarse levels index their
grid densely; fine levels fall back to the XOR-of-primes spatial hash.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError

HASH_PRIMES = (1, 2654435761, 805459861)

# desk-scale grid defaults
LEVELS = 8
TABLE_SIZE = 2**14
FEATURES_PER_LEVEL = 2
BASE_RESOLUTION = 16
GROWTH = 1.5

SH_DIM = 16
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
       1.0925484305920792, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
       0.3731763325901154, 0.4570457994644658, 1.445305721320277,
       0.5900435899266435)


@dataclass
class HashGridParams:
    """Multiresolution feature tables; `tables` is the trainable blob."""

    levels: int = LEVELS
    table_size: int = TABLE_SIZE
    features_per_level: int = FEATURES_PER_LEVEL
    base_resolution: int = BASE_RESOLUTION
    growth: float = GROWTH
    tables: Optional[np.ndarray] = None  # (L, T, F)
    resolutions: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.table_size & (self.table_size - 1):
            raise ConfigError("table_size must be a power of two")
        if self.growth <= 1.0:
            raise ConfigError("growth factor must exceed 1")
        self.resolutions = np.floor(
            self.base_resolution * self.growth ** np.arange(self.levels)
        ).astype(np.int64)
        for res in self.resolutions:
            if res**3 <= self.table_size and (res + 1) ** 3 > self.table_size:
                raise ConfigError(
                    f"dense level resolution {res} does not fit table_size"
                )
        if self.tables is None:
            raise ConfigError("tables not initialized; use HashGridParams.create")

    @staticmethod
    def create(rng: np.random.Generator, **kwargs) -> "HashGridParams":
        levels = kwargs.get("levels", LEVELS)
        table_size = kwargs.get("table_size", TABLE_SIZE)
        feats = kwargs.get("features_per_level", FEATURES_PER_LEVEL)
        tables = rng.uniform(-1e-4, 1e-4, size=(levels, table_size, feats))
        return HashGridParams(tables=tables, **kwargs)

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level

    def level_is_dense(self, level: int) -> bool:
        return int(self.resolutions[level]) ** 3 <= self.table_size


@dataclass
class DirectionEncoding:
    """Real spherical-harmonic basis values, degrees 0-3."""

    values: np.ndarray  # (16,)


@dataclass
class HashFootprint:
    """Interpolation corners of a forward pass, reused by the backward scatter."""

    idx: np.ndarray  # (L, N, 8) table rows
    wts: np.ndarray  # (L, N, 8) trilinear weights


def contract(p: np.ndarray) -> np.ndarray:
    """Radial contraction into the ball of radius 2 (identity inside radius 1)."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    norm = np.linalg.norm(p2, axis=1, keepdims=True)
    safe = np.maximum(norm, 1e-12)
    out = np.where(norm <= 1.0, p2, (2.0 - 1.0 / safe) * p2 / safe)
    return out[0] if single else out


def normalize_positions(p: np.ndarray) -> np.ndarray:
    """contract + rescale from [-2, 2]^3 into the unit cube."""
    return (contract(p) + 2.0) * 0.25


def _corner_offsets() -> np.ndarray:
    off = np.zeros((8, 3), dtype=np.int64)
    for c in range(8):
        off[c] = ((c >> 2) & 1, (c >> 1) & 1, c & 1)
    return off


_OFFSETS = _corner_offsets()


def _level_footprint(points01: np.ndarray, res: int, dense: bool, table_size: int):
    x = points01 * res
    cell = np.minimum(np.floor(x), res - 1).astype(np.int64)
    frac = x - cell
    corners = cell[:, None, :] + _OFFSETS[None, :, :]  # (N, 8, 3)
    w_axis = np.where(_OFFSETS[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    wts = w_axis[..., 0] * w_axis[..., 1] * w_axis[..., 2]
    if dense:
        stride = res + 1
        idx = corners[..., 0] + stride * (corners[..., 1] + stride * corners[..., 2])
    else:
        u = corners.astype(np.uint32)
        idx = (
            (u[..., 0] * np.uint32(HASH_PRIMES[0]))
            ^ (u[..., 1] * np.uint32(HASH_PRIMES[1]))
            ^ (u[..., 2] * np.uint32(HASH_PRIMES[2]))
        ) & np.uint32(table_size - 1)
        idx = idx.astype(np.int64)
    return idx, wts


def hash_encode(
    points01: np.ndarray, grid: HashGridParams
) -> tuple[np.ndarray, HashFootprint]:
    """Features (N, L*F) for points in [0,1]^3, plus the corner footprint."""
    pts = np.atleast_2d(np.asarray(points01, dtype=np.float64))
    n = pts.shape[0]
    idx = np.empty((grid.levels, n, 8), dtype=np.int64)
    wts = np.empty((grid.levels, n, 8))
    feats = np.empty((n, grid.feature_dim))
    f = grid.features_per_level
    for lvl in range(grid.levels):
        idx[lvl], wts[lvl] = _level_footprint(
            pts, int(grid.resolutions[lvl]), grid.level_is_dense(lvl), grid.table_size
        )
        feats[:, lvl * f : (lvl + 1) * f] = _kernels.hash_gather(
            grid.tables[lvl], idx[lvl], wts[lvl]
        )
    return feats, HashFootprint(idx=idx, wts=wts)


def hash_encode_backward(
    footprint: HashFootprint, d_f: np.ndarray, grid: HashGridParams
) -> np.ndarray:
    """Scatter feature gradients back into (L, T, F) table gradients."""
    d_f = np.atleast_2d(d_f)
    grad = np.zeros_like(grid.tables)
    f = grid.features_per_level
    for lvl in range(grid.levels):
        _kernels.hash_scatter(
            grad[lvl],
            footprint.idx[lvl],
            footprint.wts[lvl],
            np.ascontiguousarray(d_f[:, lvl * f : (lvl + 1) * f]),
        )
    return grad


def encode_directions(dirs: np.ndarray) -> np.ndarray:
    """SH basis values (N, 16) for unit directions (degrees 0-3)."""
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("directions must be unit length")
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    out = np.empty((d.shape[0], SH_DIM))
    out[:, 0] = _C0
    out[:, 1] = _C1 * y
    out[:, 2] = _C1 * z
    out[:, 3] = _C1 * x
    xx, yy, zz = x * x, y * y, z * z
    out[:, 4] = _C2[0] * x * y
    out[:, 5] = _C2[1] * y * z
    out[:, 6] = _C2[2] * (3.0 * zz - 1.0)
    out[:, 7] = _C2[3] * x * z
    out[:, 8] = _C2[4] * (xx - yy)
    out[:, 9] = _C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = _C3[1] * x * y * z
    out[:, 11] = _C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = _C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = _C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = _C3[5] * z * (xx - yy)
    out[:, 15] = _C3[6] * x * (xx - 3.0 * yy)
    return out


def encode_direction(direction: np.ndarray) -> DirectionEncoding:
    return DirectionEncoding(values=encode_directions(direction)[0])
