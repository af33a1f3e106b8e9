"""Stage-1 appearance training.

Batches are built from tiles, five per mini-batch, drawn from distinct
views that all observe the same anchor gaussian. The loss per tile is an
L1 photometric term plus a scheduled quadratic penalty on the pre-sigmoid
specular output, and the batch loss is the plain mean over tiles, so the
batch gradient is exactly the mean of per-tile gradients.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .appearance import appearance_backward, appearance_forward
from .encoding import HashGridParams, encode_directions, hash_encode_backward
from .errors import ConfigError, DegenerateSceneError, NumericError
from .pipeline import ModelParams, gaussian_features, view_directions
from .rasterizer import BlendRecord, precompute_blend
from .scene import Scene

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass
class TrainConfig:
    steps: int = 2000
    minibatch_tiles: int = 5
    minibatches_per_batch: int = 64
    lambda_start: float = 0.25
    lambda_end: float = 0.05
    lr_tables: float = 1e-2
    lr_mlp: float = 2e-3
    rng_seed: int = 0
    mode: str = "decoupled"  # or "vanilla"
    multiview: bool = True
    visibility_threshold: float = 1.0 / 255.0
    seg_uses_hidden: bool = True
    train_views: Optional[list[int]] = None  # None -> all scene views

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.lambda_start >= self.lambda_end >= 0.0:
            raise ConfigError("need lambda_start >= lambda_end >= 0")
        if self.mode not in ("decoupled", "vanilla"):
            raise ConfigError(f"unknown training mode {self.mode!r}")


@dataclass
class MiniBatch:
    anchor_gaussian: int
    tiles: list[tuple[int, tuple[int, int]]]  # (view_id, (tx, ty)), distinct views


@dataclass
class BlendIndex:
    """Per-view blend records plus the gaussian -> (view, best tile) reverse map."""

    view_ids: list[int]
    records: dict[int, BlendRecord]
    best_tile: dict[int, np.ndarray]  # view -> (N,) tile index of max weight, -1 unseen
    max_weight: dict[int, np.ndarray]  # view -> (N,) max blend weight
    nonempty_tiles: dict[int, np.ndarray]
    _tile_gauss: dict = field(default_factory=dict)

    def eligible_anchors(self, eps: float, min_views: int = 2) -> np.ndarray:
        counts = sum(
            (self.max_weight[v] >= eps).astype(np.int64) for v in self.view_ids
        )
        return np.nonzero(counts >= min_views)[0]

    def tile_gaussians(self, view: int, tile: int) -> np.ndarray:
        """Sorted unique gaussian indices referenced by one tile (memoized)."""
        key = (view, tile)
        got = self._tile_gauss.get(key)
        if got is None:
            rec = self.records[view]
            _, ent = rec.tile_slices(tile)
            got = np.unique(rec.gauss[ent]).astype(np.int64)
            self._tile_gauss[key] = got
        return got


def build_blend_index(
    scene: Scene, view_ids: list[int], records: Optional[dict[int, BlendRecord]] = None
) -> BlendIndex:
    n = scene.n_gaussians
    records = dict(records) if records else {}
    best_tile, max_weight, nonempty = {}, {}, {}
    for v in view_ids:
        rec = records.get(v)
        if rec is None:
            rec = precompute_blend(scene, v)
            records[v] = rec
        entry_pixel = np.searchsorted(rec.ptr, np.arange(rec.gauss.size), side="right") - 1
        entry_tile = (
            np.searchsorted(rec.tile_pixel_ptr, entry_pixel, side="right") - 1
        )
        bw = np.zeros(n)
        bt = np.full(n, -1, dtype=np.int64)
        if rec.gauss.size:
            order = np.lexsort((rec.weight, rec.gauss))
            g_sorted = rec.gauss[order]
            last = np.nonzero(np.diff(g_sorted))[0]
            last = np.concatenate([last, [g_sorted.size - 1]])
            rows = order[last]
            bw[rec.gauss[rows]] = rec.weight[rows]
            bt[rec.gauss[rows]] = entry_tile[rows]
        best_tile[v] = bt
        max_weight[v] = bw
        counts = rec.ptr[rec.tile_pixel_ptr[1:]] - rec.ptr[rec.tile_pixel_ptr[:-1]]
        nonempty[v] = np.nonzero(counts > 0)[0]
    return BlendIndex(list(view_ids), records, best_tile, max_weight, nonempty)


def build_minibatch(
    scene: Scene, index: BlendIndex, rng: np.random.Generator, config: TrainConfig
) -> MiniBatch:
    """Anchor plus up to `minibatch_tiles` tiles from distinct views seeing it."""
    eps = config.visibility_threshold
    anchors = index.eligible_anchors(eps)
    if anchors.size == 0:
        raise DegenerateSceneError(
            "no gaussian is visible in at least two views; use mono-view training"
        )
    anchor = int(anchors[rng.integers(anchors.size)])
    views = [v for v in index.view_ids if index.max_weight[v][anchor] >= eps]
    k = min(config.minibatch_tiles, len(views))
    chosen = rng.choice(len(views), size=k, replace=False)
    tiles = []
    for vi in np.sort(chosen):
        v = views[vi]
        rec = index.records[v]
        t = int(index.best_tile[v][anchor])
        tiles.append((v, (t % rec.ntx, t // rec.ntx)))
    return MiniBatch(anchor_gaussian=anchor, tiles=tiles)


def mono_view_tiles(
    index: BlendIndex, rng: np.random.Generator, config: TrainConfig
) -> list[tuple[int, tuple[int, int]]]:
    """MV-off batches: the same tile budget, all drawn from one random view."""
    v = index.view_ids[rng.integers(len(index.view_ids))]
    pool = index.nonempty_tiles[v]
    want = config.minibatch_tiles * config.minibatches_per_batch
    chosen = rng.choice(pool, size=want, replace=pool.size < want)
    rec = index.records[v]
    return [(v, (int(t) % rec.ntx, int(t) // rec.ntx)) for t in chosen]


def lambda_schedule(step: int, config: TrainConfig) -> float:
    """Linear decay hitting lambda_start at step 0 and lambda_end at the last step."""
    if config.steps <= 1:
        return config.lambda_start
    t = min(max(step, 0), config.steps - 1) / (config.steps - 1)
    return (1.0 - t) * config.lambda_start + t * config.lambda_end


def _flatten_tiles(batch) -> list[tuple[int, tuple[int, int]]]:
    if batch and isinstance(batch[0], MiniBatch):
        return [t for mb in batch for t in mb.tiles]
    return list(batch)


def training_step(
    model: ModelParams,
    batch,
    scene: Scene,
    index: BlendIndex,
    lambda_spec: float,
    config: TrainConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """One forward/backward over a batch of tiles.

    Appearance is evaluated once per (gaussian, view) pair and shared by
    every tile of that view; loss contributions are still counted per
    tile, keeping the batch gradient the exact mean of per-tile gradients.
    """
    tiles = _flatten_tiles(batch)
    if not tiles:
        raise ConfigError("training_step needs a non-empty batch")
    n_tiles = len(tiles)
    means = scene.packed().means

    # group tiles by view; evaluate each (view, gaussian) pair once
    by_view: dict[int, list[int]] = {}
    for v, (tx, ty) in tiles:
        by_view.setdefault(v, []).append(index.records[v].tile_index(tx, ty))
    view_order = sorted(by_view)
    view_gauss = {
        v: np.unique(np.concatenate([index.tile_gaussians(v, t) for t in by_view[v]]))
        for v in view_order
    }
    pair_gauss = np.concatenate([view_gauss[v] for v in view_order])
    row_of = {}
    base = 0
    for v in view_order:
        lookup = np.full(scene.n_gaussians, -1, dtype=np.int64)
        lookup[view_gauss[v]] = base + np.arange(view_gauss[v].size)
        row_of[v] = lookup
        base += view_gauss[v].size

    uniq_gauss, inv = np.unique(pair_gauss, return_inverse=True)
    f_uniq, footprint = gaussian_features(model.grid, means[uniq_gauss])
    f_pairs = f_uniq[inv]

    dirs = np.concatenate(
        [
            view_directions(means[view_gauss[v]], scene.views[v].camera)
            for v in view_order
        ]
    )
    dir_enc = encode_directions(dirs)

    decoupled = model.decoupled
    cache = appearance_forward(model.mlp, f_pairs, dir_enc, decoupled=decoupled)
    colors = cache.cgs

    d_cgs = np.zeros((pair_gauss.size, 3))
    d_cspec = np.zeros((pair_gauss.size, 3)) if decoupled else None
    loss = 0.0
    from .rasterizer import tile_backward, tile_forward, tile_target

    color_table = np.zeros((scene.n_gaussians, 3))
    for v, (tx, ty) in tiles:
        rec = index.records[v]
        t = rec.tile_index(tx, ty)
        gs = index.tile_gaussians(v, t)
        rows = row_of[v][gs]
        color_table[gs] = colors[rows]
        rendered = tile_forward(rec, t, color_table, scene.background)
        target = tile_target(rec, t, scene.views[v].pixels)
        resid = rendered - target
        npx = resid.shape[0]
        loss += np.abs(resid).mean() / n_tiles
        d_pix = np.sign(resid) / (npx * 3 * n_tiles)
        d_dense = tile_backward(rec, t, d_pix, scene.n_gaussians)
        d_cgs[rows] += d_dense[gs]
        if decoupled and lambda_spec != 0.0:
            cs = cache.cspec[rows]
            loss += lambda_spec * float((cs**2).sum(axis=1).mean()) / n_tiles
            d_cspec[rows] += (2.0 * lambda_spec / (gs.size * n_tiles)) * cs

    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss over {n_tiles} tiles")

    grads, d_f = appearance_backward(model.mlp, cache, d_cgs, None, d_cspec)
    d_f_uniq = np.zeros_like(f_uniq)
    np.add.at(d_f_uniq, inv, d_f)
    grads["tables"] = hash_encode_backward(footprint, d_f_uniq, model.grid)
    return float(loss), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @staticmethod
    def like(arrays: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: dict[str, float] | float,
) -> None:
    """Bias-corrected Adam step, applied in place to the parameter arrays."""
    state.t += 1
    b1t = 1.0 - ADAM_BETA1**state.t
    b2t = 1.0 - ADAM_BETA2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        step_lr = lr[name] if isinstance(lr, dict) else lr
        p -= step_lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)


@dataclass
class Checkpoint:
    model: ModelParams
    config: dict
    rng_seed: int
    steps: int
    opt_state: Optional[AdamState] = None


def train(
    scene: Scene,
    config: TrainConfig,
    index: Optional[BlendIndex] = None,
    progress: Optional[Callable[[int, float], None]] = None,
) -> Checkpoint:
    """Full stage-1 run; deterministic given config.rng_seed."""
    view_ids = config.train_views if config.train_views is not None else list(
        range(len(scene.views))
    )
    if config.multiview and len(view_ids) < 2:
        raise ConfigError("multi-view training needs at least two views")
    if index is None:
        index = build_blend_index(scene, view_ids)

    rng = np.random.default_rng(config.rng_seed)
    model = ModelParams.create(
        rng,
        decoupled=config.mode == "decoupled",
        seg_uses_hidden=config.seg_uses_hidden,
    )
    arrays = dict(model.named_arrays())
    lrs = {
        name: config.lr_tables if name == "tables" else config.lr_mlp
        for name in arrays
    }
    state = AdamState.like(arrays)

    step = 0
    for step in range(config.steps):
        if config.multiview:
            batch = [
                build_minibatch(scene, index, rng, config)
                for _ in range(config.minibatches_per_batch)
            ]
        else:
            batch = mono_view_tiles(index, rng, config)
        lam = lambda_schedule(step, config)
        try:
            loss, grads = training_step(model, batch, scene, index, lam, config)
        except NumericError:
            break  # keep the last good parameters
        adam_update(arrays, grads, state, lrs)
        if progress is not None:
            progress(step, loss)

    return Checkpoint(
        model=model,
        config=asdict(config),
        rng_seed=config.rng_seed,
        steps=step + 1,
        opt_state=state,
    )


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_MAGIC = b"VGCK"
_VERSION = 1
_MLP_SECTIONS = (("MLPD", "diffuse"), ("MLPS", "specular"), ("MLPG", "seg"), ("VANL", "vanilla"))


def _write_section(fh, tag: str, payload: bytes) -> None:
    fh.write(tag.encode("ascii"))
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _layer_blob(layers) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(layers)))
    for layer in layers:
        out_dim, in_dim = layer.w.shape
        buf.write(struct.pack("<II", out_dim, in_dim))
        buf.write(layer.w.astype("<f4").tobytes())
        buf.write(layer.b.astype("<f4").tobytes())
    return buf.getvalue()


def _read_layers(payload: bytes):
    from .appearance import Affine

    buf = io.BytesIO(payload)
    (count,) = struct.unpack("<I", buf.read(4))
    layers = []
    for _ in range(count):
        out_dim, in_dim = struct.unpack("<II", buf.read(8))
        w = np.frombuffer(buf.read(out_dim * in_dim * 4), dtype="<f4")
        b = np.frombuffer(buf.read(out_dim * 4), dtype="<f4")
        layers.append(
            Affine(w=w.reshape(out_dim, in_dim).astype(np.float64), b=b.astype(np.float64))
        )
    return layers


def serialize_checkpoint(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<I", _VERSION))
    conf = dict(ckpt.config)
    conf.update(
        rng_seed=ckpt.rng_seed,
        steps_done=ckpt.steps,
        decoupled=ckpt.model.decoupled,
        seg_uses_hidden=ckpt.model.mlp.seg_uses_hidden,
    )
    _write_section(out, "CONF", json.dumps(conf, sort_keys=True).encode())
    grid = ckpt.model.grid
    head = struct.pack(
        "<IIIId", grid.levels, grid.table_size, grid.features_per_level,
        grid.base_resolution, grid.growth,
    )
    _write_section(out, "HASH", head + grid.tables.astype("<f4").tobytes())
    for tag, group in _MLP_SECTIONS:
        _write_section(out, tag, _layer_blob(getattr(ckpt.model.mlp, group)))
    if ckpt.opt_state is not None:
        buf = io.BytesIO()
        buf.write(struct.pack("<Q", ckpt.opt_state.t))
        names = sorted(ckpt.opt_state.m)
        buf.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode()
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
            for blob in (ckpt.opt_state.m[name], ckpt.opt_state.v[name]):
                flat = blob.astype("<f4").ravel()
                buf.write(struct.pack("<Q", flat.size))
                buf.write(flat.tobytes())
        _write_section(out, "OPTS", buf.getvalue())
    return out.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(serialize_checkpoint(ckpt))


def checkpoint_hash(ckpt: Checkpoint) -> str:
    """Digest of the parameter sections only (optimizer state excluded)."""
    import hashlib

    h = hashlib.sha256()
    h.update(ckpt.model.grid.tables.astype("<f4").tobytes())
    for _, group in _MLP_SECTIONS:
        h.update(_layer_blob(getattr(ckpt.model.mlp, group)))
    return h.hexdigest()


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ConfigError(f"not a checkpoint file: {path}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != _VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    pos = 8
    sections = {}
    while pos < len(data):
        tag = data[pos : pos + 4].decode("ascii")
        (length,) = struct.unpack("<Q", data[pos + 4 : pos + 12])
        sections[tag] = data[pos + 12 : pos + 12 + length]
        pos += 12 + length
    conf = json.loads(sections["CONF"].decode())
    head = sections["HASH"]
    levels, table_size, feats, base_res, growth = struct.unpack("<IIIId", head[:24])
    tables = (
        np.frombuffer(head[24:], dtype="<f4")
        .reshape(levels, table_size, feats)
        .astype(np.float64)
    )
    grid = HashGridParams(
        levels=levels, table_size=table_size, features_per_level=feats,
        base_resolution=base_res, growth=growth, tables=tables,
    )
    from .appearance import MLPParams

    groups = {group: _read_layers(sections[tag]) for tag, group in _MLP_SECTIONS}
    mlp = MLPParams(
        diffuse=groups["diffuse"],
        specular=groups["specular"],
        seg=groups["seg"],
        vanilla=groups["vanilla"],
        feature_dim=grid.feature_dim,
        seg_uses_hidden=bool(conf.get("seg_uses_hidden", True)),
    )
    model = ModelParams(grid=grid, mlp=mlp, decoupled=bool(conf.get("decoupled", True)))
    opt_state = None
    if "OPTS" in sections:
        buf = io.BytesIO(sections["OPTS"])
        (t,) = struct.unpack("<Q", buf.read(8))
        (count,) = struct.unpack("<I", buf.read(4))
        shapes = dict(model.named_arrays())
        m, v = {}, {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", buf.read(4))
            name = buf.read(nlen).decode()
            blobs = []
            for _ in range(2):
                (size,) = struct.unpack("<Q", buf.read(8))
                blobs.append(
                    np.frombuffer(buf.read(size * 4), dtype="<f4").astype(np.float64)
                )
            m[name] = blobs[0].reshape(shapes[name].shape)
            v[name] = blobs[1].reshape(shapes[name].shape)
        opt_state = AdamState(m=m, v=v, t=t)
    return Checkpoint(
        model=model,
        config=conf,
        rng_seed=int(conf.get("rng_seed", 0)),
        steps=int(conf.get("steps_done", 0)),
        opt_state=opt_state,
    )
