"""Instant recoloring: clone the diffuse output layer, learn a soft 3D
segmentation, and fine-tune both against one (or a few) edited views.

The default trainable set is narrow: only the cloned output head and the
segmentation head move, so the base checkpoint, the diffuse trunk, and the
specular branch stay bit-identical. A `wide_finetune` escape hatch trains
a session-local copy of the full color model instead (the base checkpoint
is still never touched).
"""

from __future__ import annotations

import json
import struct
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .appearance import (
    Affine,
    appearance_backward,
    appearance_forward,
    sigmoid,
)
from .errors import ConfigError, NumericError
from .pipeline import (
    ModelParams,
    direction_encoding,
    gaussian_features,
)
from .rasterizer import (
    BlendRecord,
    blend_for_camera,
    composite_backward,
    composite_forward,
    pose_hash,
    render_alpha,
)
from .scene import Camera, Scene, decode_png, encode_png
from .training import AdamState, Checkpoint, adam_update, checkpoint_hash

DEFAULT_FINETUNE_STEPS = 300
DEFAULT_FINETUNE_LR = 5e-3
PLATEAU_WINDOW = 25
PLATEAU_RELTOL = 1e-4
SEG_INIT_BIAS = -2.0


@dataclass
class EditSession:
    """One user edit: edited image(s), a trainable edit head, and a seg head."""

    session_id: str
    base: Checkpoint
    scene: Scene
    edit_views: list[tuple[int, np.ndarray]]
    edit_head: Affine
    seg: list[Affine]
    seg_uses_hidden: bool
    status: str = "created"
    steps_done: int = 0
    last_loss: float = float("nan")
    specular_scale: float = 1.0
    wide: bool = False
    wide_model: Optional[ModelParams] = None
    rng_seed: int = 0
    base_hash: str = ""
    opt: Optional[AdamState] = None

    # lazily built per-session caches (never serialized)
    _features: Optional[np.ndarray] = field(default=None, repr=False)
    _footprint: Optional[object] = field(default=None, repr=False)
    _base_forward: dict = field(default_factory=dict, repr=False)
    _blend_cache: dict = field(default_factory=dict, repr=False)

    def features(self) -> np.ndarray:
        if self._features is None:
            self._features, self._footprint = gaussian_features(
                self.model().grid, self.scene.packed().means
            )
        return self._features

    def model(self) -> ModelParams:
        return self.wide_model if self.wide else self.base.model

    def invalidate_forward_caches(self) -> None:
        self._features = None
        self._footprint = None
        self._base_forward.clear()

    def base_forward(self, camera: Camera):
        """(h_ref, cdiff, cspec) of the frozen model for one camera pose."""
        key = pose_hash(camera, 16)
        got = self._base_forward.get(key)
        if got is None:
            f = self.features()
            means = self.scene.packed().means
            cache = appearance_forward(
                self.model().mlp, f, direction_encoding(means, camera),
                decoupled=self.model().decoupled,
            )
            hidden = cache.h2 if self.model().decoupled else cache.v2
            cdiff = cache.cdiff if self.model().decoupled else None
            got = (hidden, cdiff, cache.cspec, cache)
            self._base_forward[key] = got
        return got

    def blend_for(self, camera: Camera) -> BlendRecord:
        key = pose_hash(camera, 16)
        rec = self._blend_cache.get(key)
        if rec is None:
            for v in self.scene.views:
                if pose_hash(v.camera, 16) == key:
                    from .rasterizer import precompute_blend

                    rec = precompute_blend(self.scene, v.view_id)
                    break
            if rec is None:
                p = self.scene.packed()
                rec = blend_for_camera(p.means, p.quats, p.scales, p.opacities, camera)
            self._blend_cache[key] = rec
        return rec

    def trainable_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            "edit_head.w": self.edit_head.w,
            "edit_head.b": self.edit_head.b,
            "seg.0.w": self.seg[0].w,
            "seg.0.b": self.seg[0].b,
            "seg.1.w": self.seg[1].w,
            "seg.1.b": self.seg[1].b,
        }
        if self.wide:
            for name, layer in self.wide_model.mlp.named_layers():
                if name.startswith("seg") or name.startswith("vanilla"):
                    continue
                arrays[f"{name}.w"] = layer.w
                arrays[f"{name}.b"] = layer.b
        return arrays


def create_session(
    checkpoint: Checkpoint,
    scene: Scene,
    view_id: int,
    edit_image: np.ndarray,
    rng_seed: int = 0,
    wide_finetune: bool = False,
    seg_uses_hidden: Optional[bool] = None,
    session_id: Optional[str] = None,
) -> EditSession:
    """Start an edit: clone the output head, re-initialize the seg head."""
    if not 0 <= view_id < len(scene.views):
        raise ConfigError(f"unknown view {view_id}")
    cam = scene.views[view_id].camera
    edit_image = np.asarray(edit_image, dtype=np.float64)
    if edit_image.shape != (cam.height, cam.width, 3):
        raise ConfigError("edit image dimensions must match the view camera")
    if wide_finetune and not checkpoint.model.decoupled:
        raise ConfigError("wide fine-tuning needs a decoupled base model")

    if seg_uses_hidden is None:
        seg_uses_hidden = checkpoint.model.mlp.seg_uses_hidden
    rng = np.random.default_rng(rng_seed)
    hidden = checkpoint.model.mlp.diffuse[1].b.shape[0]
    seg_hidden = checkpoint.model.mlp.seg[0].b.shape[0]
    feature_dim = checkpoint.model.mlp.feature_dim
    seg_in = feature_dim + hidden if seg_uses_hidden else feature_dim
    head_src = (
        checkpoint.model.mlp.diffuse[2]
        if checkpoint.model.decoupled
        else checkpoint.model.mlp.vanilla[2]
    )
    session = EditSession(
        session_id=session_id or uuid.uuid4().hex[:12],
        base=checkpoint,
        scene=scene,
        edit_views=[(view_id, edit_image)],
        edit_head=head_src.copy(),
        seg=[
            Affine.create(rng, seg_in, seg_hidden),
            Affine.create(rng, seg_hidden, 1, bias=SEG_INIT_BIAS),
        ],
        seg_uses_hidden=seg_uses_hidden,
        wide=wide_finetune,
        wide_model=checkpoint.model.copy() if wide_finetune else None,
        rng_seed=rng_seed,
        base_hash=checkpoint_hash(checkpoint),
    )
    session.opt = AdamState.like(session.trainable_arrays())
    return session


def add_edit_view(session: EditSession, view_id: int, edit_image: np.ndarray) -> EditSession:
    """Attach another edited (or deliberately unedited) view to the loss."""
    if any(v == view_id for v, _ in session.edit_views):
        raise ConfigError(f"view {view_id} is already part of this session")
    if not 0 <= view_id < len(session.scene.views):
        raise ConfigError(f"unknown view {view_id}")
    cam = session.scene.views[view_id].camera
    edit_image = np.asarray(edit_image, dtype=np.float64)
    if edit_image.shape != (cam.height, cam.width, 3):
        raise ConfigError("edit image dimensions must match the view camera")
    session.edit_views.append((view_id, edit_image))
    return session


def _alpha_from(
    features: np.ndarray, seg: list[Affine], seg_uses_hidden: bool, hidden: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    xg = np.concatenate([features, hidden], axis=1) if seg_uses_hidden else features
    g1 = np.maximum(xg @ seg[0].w.T + seg[0].b, 0.0)
    alpha = sigmoid(g1 @ seg[1].w.T + seg[1].b)[:, 0]
    return alpha, g1


def _session_alpha(session: EditSession, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _alpha_from(session.features(), session.seg, session.seg_uses_hidden, hidden)


def edit_colors(
    session: EditSession, camera: Camera, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """(Cgs' per gaussian, alpha per gaussian) for one camera pose."""
    hidden, cdiff, cspec, _ = session.base_forward(camera)
    alpha, _ = _session_alpha(session, hidden)
    c_edit = hidden @ session.edit_head.w.T + session.edit_head.b
    if session.model().decoupled:
        # written as cdiff + a*(c' - cdiff): bit-identical to the base
        # render when the clone still equals the base head or alpha is 0
        blended = cdiff + alpha[:, None] * (c_edit - cdiff)
        return sigmoid(blended + scale * cspec), alpha
    # entangled baseline: blend after the sigmoid, per the last-layer recipe
    base_cgs = session.base_forward(camera)[3].cgs
    edited = sigmoid(c_edit)
    return alpha[:, None] * edited + (1.0 - alpha[:, None]) * base_cgs, alpha


def edit_forward(
    session: EditSession,
    f: np.ndarray,
    dir_enc: np.ndarray,
    scale: float = 1.0,
) -> np.ndarray:
    """Spec-level forward on explicit features/directions (decoupled model)."""
    model = session.model()
    cache = appearance_forward(model.mlp, f, dir_enc, decoupled=model.decoupled)
    hidden = cache.h2 if model.decoupled else cache.v2
    xg = np.concatenate([f, hidden], axis=1) if session.seg_uses_hidden else f
    g1 = np.maximum(xg @ session.seg[0].w.T + session.seg[0].b, 0.0)
    alpha = sigmoid(g1 @ session.seg[1].w.T + session.seg[1].b)[:, 0]
    c_edit = hidden @ session.edit_head.w.T + session.edit_head.b
    if model.decoupled:
        blended = cache.cdiff + alpha[:, None] * (c_edit - cache.cdiff)
        return sigmoid(blended + scale * cache.cspec)
    return alpha[:, None] * sigmoid(c_edit) + (1.0 - alpha[:, None]) * cache.cgs


def edit_loss_and_grads(
    session: EditSession,
    head: Affine,
    seg: list[Affine],
    wide_mlp,
    views: list[tuple],
    total_px: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """Full-frame L1 loss over the edit views and exact gradients for the
    given trainable (head, seg[, wide mlp]) parameters."""
    scene = session.scene
    n = scene.n_gaussians
    means = scene.packed().means
    features = session.features()
    arrays = {
        "edit_head.w": head.w, "edit_head.b": head.b,
        "seg.0.w": seg[0].w, "seg.0.b": seg[0].b,
        "seg.1.w": seg[1].w, "seg.1.b": seg[1].b,
    }
    if session.wide:
        for name, layer in wide_mlp.named_layers():
            if name.startswith("seg") or name.startswith("vanilla"):
                continue
            arrays[f"{name}.w"] = layer.w
            arrays[f"{name}.b"] = layer.b
    decoupled = session.model().decoupled
    loss = 0.0
    grads = {k: np.zeros_like(a) for k, a in arrays.items()}
    wgrads = None
    for cam, target, blend in views:
        if session.wide:
            cache = appearance_forward(
                wide_mlp, features, direction_encoding(means, cam), decoupled=True
            )
            hidden, cdiff, cspec = cache.h2, cache.cdiff, cache.cspec
        else:
            hidden, cdiff, cspec, base_cache = session.base_forward(cam)
        alpha, g1 = _alpha_from(features, seg, session.seg_uses_hidden, hidden)
        c_edit = hidden @ head.w.T + head.b
        if decoupled:
            blended = cdiff + alpha[:, None] * (c_edit - cdiff)
            cgs = sigmoid(blended + cspec)
        else:
            e = sigmoid(c_edit)
            cgs = alpha[:, None] * e + (1.0 - alpha[:, None]) * base_cache.cgs
        img = composite_forward(blend, cgs, scene.background)
        resid = img - target
        loss += float(np.abs(resid).sum()) / total_px
        d_pix = np.sign(resid) / total_px
        d_cgs = composite_backward(blend, d_pix, n)

        if decoupled:
            dz = d_cgs * cgs * (1.0 - cgs)
            d_head = dz * alpha[:, None]
            d_alpha = ((c_edit - cdiff) * dz).sum(axis=1)
        else:
            d_alpha = ((e - base_cache.cgs) * d_cgs).sum(axis=1)
            d_head = (d_cgs * alpha[:, None]) * e * (1.0 - e)
        grads["edit_head.w"] += d_head.T @ hidden
        grads["edit_head.b"] += d_head.sum(axis=0)
        dlogit = (d_alpha * alpha * (1.0 - alpha))[:, None]
        grads["seg.1.w"] += dlogit.T @ g1
        grads["seg.1.b"] += dlogit.sum(axis=0)
        dg1 = (dlogit @ seg[1].w) * (g1 > 0)
        xg = (
            np.concatenate([features, hidden], axis=1)
            if session.seg_uses_hidden
            else features
        )
        grads["seg.0.w"] += dg1.T @ xg
        grads["seg.0.b"] += dg1.sum(axis=0)
        if session.wide:
            # unfrozen trunk: route the blend, head, and seg-tap gradients
            # back through the full color model
            d_hidden = d_head @ head.w
            if session.seg_uses_hidden:
                d_hidden = d_hidden + (dg1 @ seg[0].w)[
                    :, session.base.model.mlp.feature_dim :
                ]
            wgrads, _ = appearance_backward(
                wide_mlp, cache, None,
                d_cspec=dz, d_cdiff=dz * (1.0 - alpha[:, None]),
                d_hidden=d_hidden, grads=wgrads,
            )
    if session.wide and wgrads is not None:
        for k in arrays:
            if k in wgrads:
                grads[k] += wgrads[k]
    return loss, grads


def finetune(
    session: EditSession,
    steps: int = DEFAULT_FINETUNE_STEPS,
    lr: float = DEFAULT_FINETUNE_LR,
    time_budget_s: Optional[float] = None,
    progress=None,
) -> EditSession:
    """Fit the edit heads to the edited views with a full-frame L1 loss."""
    if session.status == "running":
        raise ConfigError("a fine-tune is already running for this session")
    session.status = "running"
    t_start = time.monotonic()
    scene = session.scene
    views = [
        (
            scene.views[v].camera,
            img,
            session.blend_for(scene.views[v].camera),
        )
        for v, img in session.edit_views
    ]
    total_px = sum(img.size for _, img, _ in views)

    # work on local copies; concurrent readers see the session's published
    # (head, seg) pair, swapped atomically after each optimizer step
    head = session.edit_head.copy()
    seg = [layer.copy() for layer in session.seg]
    wide_mlp = session.wide_model.mlp if session.wide else None
    arrays = {
        "edit_head.w": head.w, "edit_head.b": head.b,
        "seg.0.w": seg[0].w, "seg.0.b": seg[0].b,
        "seg.1.w": seg[1].w, "seg.1.b": seg[1].b,
    }
    if session.wide:
        for name, layer in wide_mlp.named_layers():
            if name.startswith("seg") or name.startswith("vanilla"):
                continue
            arrays[f"{name}.w"] = layer.w
            arrays[f"{name}.b"] = layer.b
    history: list[float] = []
    try:
        for _ in range(steps):
            loss, grads = edit_loss_and_grads(
                session, head, seg, wide_mlp, views, total_px
            )
            if not np.isfinite(loss):
                raise NumericError("non-finite edit loss")
            adam_update(arrays, grads, session.opt, lr)
            session.edit_head = head.copy()
            session.seg = [layer.copy() for layer in seg]
            if session.wide:
                session.wide_model = ModelParams(
                    grid=session.wide_model.grid, mlp=wide_mlp.copy(), decoupled=True
                )
                session._base_forward.clear()
            session.steps_done += 1
            session.last_loss = loss
            history.append(loss)
            if progress is not None:
                progress(session.steps_done, loss)
            if (
                len(history) > PLATEAU_WINDOW
                and history[-PLATEAU_WINDOW - 1] - loss
                < PLATEAU_RELTOL * max(abs(history[-PLATEAU_WINDOW - 1]), 1e-12)
            ):
                break
            if time_budget_s is not None and time.monotonic() - t_start > time_budget_s:
                break
    except NumericError:
        session.status = "failed"
        raise
    session.status = "done"
    return session


def render_edited(
    session: EditSession, camera: Camera, scale: Optional[float] = None
) -> np.ndarray:
    """Composite the edited colors for any camera (novel poses get cached blends)."""
    s = session.specular_scale if scale is None else scale
    if s < 0:
        raise ConfigError("specular scale must be >= 0")
    colors, _ = edit_colors(session, camera, s)
    blend = session.blend_for(camera)
    return np.clip(composite_forward(blend, colors, session.scene.background), 0.0, 1.0)


def render_mask(session: EditSession, camera: Camera) -> np.ndarray:
    """Soft segmentation rendered as a grayscale image."""
    hidden, _, _, _ = session.base_forward(camera)
    alpha, _ = _session_alpha(session, hidden)
    return np.clip(render_alpha(session.blend_for(camera), alpha), 0.0, 1.0)


# ---------------------------------------------------------------------------
# session persistence
# ---------------------------------------------------------------------------

_MAGIC = b"VGSE"
_VERSION = 1


def save_session(session: EditSession, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        meta = {
            "session_id": session.session_id,
            "base_hash": session.base_hash,
            "status": session.status,
            "steps_done": session.steps_done,
            "last_loss": session.last_loss,
            "specular_scale": session.specular_scale,
            "seg_uses_hidden": session.seg_uses_hidden,
            "wide": session.wide,
            "rng_seed": session.rng_seed,
            "view_ids": [v for v, _ in session.edit_views],
        }
        raw = json.dumps(meta, sort_keys=True).encode()
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for layer in (session.edit_head, *session.seg):
            out_dim, in_dim = layer.w.shape
            fh.write(struct.pack("<II", out_dim, in_dim))
            fh.write(layer.w.astype("<f4").tobytes())
            fh.write(layer.b.astype("<f4").tobytes())
        for _, img in session.edit_views:
            png = encode_png(img)
            fh.write(struct.pack("<Q", len(png)))
            fh.write(png)


def load_session(path: str | Path, checkpoint: Checkpoint, scene: Scene) -> EditSession:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"not a session file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigError(f"unsupported session version {version}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(mlen).decode())
        if meta["base_hash"] != checkpoint_hash(checkpoint):
            raise ConfigError("session was built on a different base checkpoint")
        layers = []
        for _ in range(3):
            out_dim, in_dim = struct.unpack("<II", fh.read(8))
            w = np.frombuffer(fh.read(out_dim * in_dim * 4), dtype="<f4")
            b = np.frombuffer(fh.read(out_dim * 4), dtype="<f4")
            layers.append(
                Affine(
                    w=w.reshape(out_dim, in_dim).astype(np.float64),
                    b=b.astype(np.float64),
                )
            )
        views = []
        for vid in meta["view_ids"]:
            (plen,) = struct.unpack("<Q", fh.read(8))
            views.append((vid, decode_png(fh.read(plen))))
    session = EditSession(
        session_id=meta["session_id"],
        base=checkpoint,
        scene=scene,
        edit_views=views,
        edit_head=layers[0],
        seg=layers[1:],
        seg_uses_hidden=bool(meta["seg_uses_hidden"]),
        status=meta["status"],
        steps_done=int(meta["steps_done"]),
        last_loss=float(meta["last_loss"]),
        specular_scale=float(meta["specular_scale"]),
        wide=bool(meta["wide"]),
        wide_model=checkpoint.model.copy() if meta["wide"] else None,
        rng_seed=int(meta["rng_seed"]),
        base_hash=meta["base_hash"],
    )
    session.opt = AdamState.like(session.trainable_arrays())
    return session
