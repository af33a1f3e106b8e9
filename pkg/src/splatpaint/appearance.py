"""The dual-MLP color model and its exact reverse-mode gradients.

A diffuse net sees only positional features; a specular net additionally
sees the view direction plus one-way residual taps of the diffuse hiddens
(layer-1 hidden joins its second layer, layer-2 hidden its third).
Gradients never flow from the specular net back through those taps, so
the specular loss can never train the diffuse weights.

Colors combine as sigmoid(Cdiff + s * Cspec); s is a render-time knob
(0 kills highlights, >1 amplifies them). A small segmentation head maps
(features, final diffuse hidden) to a per-gaussian alpha in (0,1), and a
single entangled net of the same depth serves as the non-decoupled
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

HIDDEN = 64
SEG_HIDDEN = 32


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class Affine:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @staticmethod
    def create(rng: np.random.Generator, n_in: int, n_out: int, bias: float = 0.0):
        bound = np.sqrt(6.0 / n_in)
        return Affine(
            w=rng.uniform(-bound, bound, size=(n_out, n_in)),
            b=np.full(n_out, bias, dtype=np.float64),
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.w.T + self.b

    def copy(self) -> "Affine":
        return Affine(w=self.w.copy(), b=self.b.copy())


@dataclass
class MLPParams:
    """All appearance nets. seg_uses_hidden toggles the diffuse-hidden tap
    into the segmentation head (the DS ablation switch)."""

    diffuse: list[Affine]
    specular: list[Affine]
    seg: list[Affine]
    vanilla: list[Affine]
    feature_dim: int = 16
    dir_dim: int = 16
    seg_uses_hidden: bool = True

    @staticmethod
    def create(
        rng: np.random.Generator,
        feature_dim: int = 16,
        dir_dim: int = 16,
        seg_uses_hidden: bool = True,
    ) -> "MLPParams":
        fd, dd, h = feature_dim, dir_dim, HIDDEN
        seg_in = fd + h if seg_uses_hidden else fd
        return MLPParams(
            diffuse=[
                Affine.create(rng, fd, h),
                Affine.create(rng, h, h),
                Affine.create(rng, h, 3),
            ],
            specular=[
                Affine.create(rng, fd + dd, h),
                Affine.create(rng, h + h, h),
                Affine.create(rng, h + h, 3),
            ],
            seg=[
                Affine.create(rng, seg_in, SEG_HIDDEN),
                Affine.create(rng, SEG_HIDDEN, 1, bias=-2.0),
            ],
            vanilla=[
                Affine.create(rng, fd + dd, h),
                Affine.create(rng, h, h),
                Affine.create(rng, h, 3),
            ],
            feature_dim=feature_dim,
            dir_dim=dir_dim,
            seg_uses_hidden=seg_uses_hidden,
        )

    def named_layers(self):
        for group in ("diffuse", "specular", "seg", "vanilla"):
            for i, layer in enumerate(getattr(self, group)):
                yield f"{group}.{i}", layer

    def copy(self) -> "MLPParams":
        return MLPParams(
            diffuse=[a.copy() for a in self.diffuse],
            specular=[a.copy() for a in self.specular],
            seg=[a.copy() for a in self.seg],
            vanilla=[a.copy() for a in self.vanilla],
            feature_dim=self.feature_dim,
            dir_dim=self.dir_dim,
            seg_uses_hidden=self.seg_uses_hidden,
        )


@dataclass
class ColorSample:
    """Per-gaussian appearance record for one view."""

    Cdiff: np.ndarray  # (3,) pre-sigmoid
    Cspec: np.ndarray  # (3,) pre-sigmoid
    Cgs: np.ndarray  # (3,) in (0,1)
    h_diff: np.ndarray  # (HIDDEN,) final diffuse hidden
    alpha: Optional[float] = None


@dataclass
class AppearanceCache:
    """Forward activations retained for the exact backward pass."""

    f: np.ndarray
    dirs: Optional[np.ndarray]
    scale: float
    h1: Optional[np.ndarray] = None
    h2: Optional[np.ndarray] = None
    cdiff: Optional[np.ndarray] = None
    s1: Optional[np.ndarray] = None
    s2: Optional[np.ndarray] = None
    cspec: Optional[np.ndarray] = None
    cgs: Optional[np.ndarray] = None
    g1: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    v1: Optional[np.ndarray] = None
    v2: Optional[np.ndarray] = None


def diffuse_forward(f: np.ndarray, params: MLPParams):
    """(Cdiff, h1, h2); the hiddens feed the specular taps and the seg head."""
    d1, d2, d3 = params.diffuse
    h1 = relu(d1(f))
    h2 = relu(d2(h1))
    return d3(h2), h1, h2


def specular_forward(
    f: np.ndarray, dir_enc: np.ndarray, h1: np.ndarray, h2: np.ndarray,
    params: MLPParams,
):
    """(Cspec, s1, s2). h1/h2 must come from the same features f."""
    s1l, s2l, s3l = params.specular
    s1 = relu(s1l(np.concatenate([f, dir_enc], axis=1)))
    s2 = relu(s2l(np.concatenate([s1, h1], axis=1)))
    cspec = s3l(np.concatenate([s2, h2], axis=1))
    return cspec, s1, s2


def combine(cdiff: np.ndarray, cspec: np.ndarray, scale: float) -> np.ndarray:
    """Cgs = sigmoid(Cdiff + s * Cspec), elementwise."""
    return sigmoid(cdiff + scale * cspec)


def seg_forward(f: np.ndarray, h_diff: np.ndarray, params: MLPParams):
    """(alpha (E,), g1). Drops h_diff from the input when DS is off."""
    g1l, g2l = params.seg
    xg = np.concatenate([f, h_diff], axis=1) if params.seg_uses_hidden else f
    g1 = relu(g1l(xg))
    return sigmoid(g2l(g1))[:, 0], g1


def vanilla_forward(f: np.ndarray, dir_enc: np.ndarray, params: MLPParams):
    """Entangled single-net baseline: (Cgs, v1, v2)."""
    v1l, v2l, v3l = params.vanilla
    v1 = relu(v1l(np.concatenate([f, dir_enc], axis=1)))
    v2 = relu(v2l(v1))
    return sigmoid(v3l(v2)), v1, v2


def appearance_forward(
    params: MLPParams,
    f: np.ndarray,
    dirs: Optional[np.ndarray],
    scale: float = 1.0,
    decoupled: bool = True,
    want_alpha: bool = False,
) -> AppearanceCache:
    cache = AppearanceCache(f=f, dirs=dirs, scale=scale)
    if decoupled:
        cache.cdiff, cache.h1, cache.h2 = diffuse_forward(f, params)
        cache.cspec, cache.s1, cache.s2 = specular_forward(
            f, dirs, cache.h1, cache.h2, params
        )
        cache.cgs = combine(cache.cdiff, cache.cspec, scale)
        if want_alpha:
            cache.alpha, cache.g1 = seg_forward(f, cache.h2, params)
    else:
        cache.cgs, cache.v1, cache.v2 = vanilla_forward(f, dirs, params)
        if want_alpha:
            # the entangled baseline has no diffuse net; its own final
            # hidden plays the role of the seg head's hidden tap
            cache.alpha, cache.g1 = seg_forward(f, cache.v2, params)
    return cache


def color_sample(
    params: MLPParams, f: np.ndarray, direction_enc: np.ndarray, scale: float = 1.0
) -> ColorSample:
    cache = appearance_forward(
        params, np.atleast_2d(f), np.atleast_2d(direction_enc), scale, want_alpha=True
    )
    return ColorSample(
        Cdiff=cache.cdiff[0],
        Cspec=cache.cspec[0],
        Cgs=cache.cgs[0],
        h_diff=cache.h2[0],
        alpha=float(cache.alpha[0]),
    )


def zero_grads(params: MLPParams) -> dict[str, np.ndarray]:
    grads = {}
    for name, layer in params.named_layers():
        grads[f"{name}.w"] = np.zeros_like(layer.w)
        grads[f"{name}.b"] = np.zeros_like(layer.b)
    return grads


def _layer_backward(name, grads, d_out, x):
    grads[f"{name}.w"] += d_out.T @ x
    grads[f"{name}.b"] += d_out.sum(axis=0)


def appearance_backward(
    params: MLPParams,
    cache: AppearanceCache,
    d_cgs: Optional[np.ndarray],
    d_alpha: Optional[np.ndarray] = None,
    d_cspec: Optional[np.ndarray] = None,
    d_cdiff: Optional[np.ndarray] = None,
    d_hidden: Optional[np.ndarray] = None,
    grads: Optional[dict[str, np.ndarray]] = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact adjoint of appearance_forward.

    d_cspec/d_cdiff/d_hidden inject direct gradients on the pre-sigmoid
    outputs and on the final diffuse hidden (the smoothness penalty and
    the edit fine-tune use these). Gradients reaching the diffuse hiddens
    through the specular taps are dropped; everything else is the true
    reverse-mode chain. Returns (param grads, d_f).
    """
    if grads is None:
        grads = zero_grads(params)
    f = cache.f
    e = f.shape[0]
    d_f = np.zeros_like(f)

    if cache.v1 is not None:  # vanilla path
        if d_cgs is not None:
            dpre = d_cgs * cache.cgs * (1.0 - cache.cgs)
            _layer_backward("vanilla.2", grads, dpre, cache.v2)
            dv2 = (dpre @ params.vanilla[2].w) * (cache.v2 > 0)
            _layer_backward("vanilla.1", grads, dv2, cache.v1)
            dv1 = (dv2 @ params.vanilla[1].w) * (cache.v1 > 0)
            xv = np.concatenate([f, cache.dirs], axis=1)
            _layer_backward("vanilla.0", grads, dv1, xv)
            d_f += (dv1 @ params.vanilla[0].w)[:, : params.feature_dim]
        dh2_extra = np.zeros((e, HIDDEN))
        if d_alpha is not None:
            dh2_extra = _seg_backward(params, cache, d_alpha, grads, d_f, cache.v2)
            # seg reads the vanilla hidden here; route its gradient back
            dv2 = dh2_extra * (cache.v2 > 0)
            _layer_backward("vanilla.1", grads, dv2, cache.v1)
            dv1 = (dv2 @ params.vanilla[1].w) * (cache.v1 > 0)
            xv = np.concatenate([f, cache.dirs], axis=1)
            _layer_backward("vanilla.0", grads, dv1, xv)
            d_f += (dv1 @ params.vanilla[0].w)[:, : params.feature_dim]
        return grads, d_f

    dcdiff = np.zeros((e, 3))
    dcspec_total = np.zeros((e, 3))
    if d_cgs is not None:
        dz = d_cgs * cache.cgs * (1.0 - cache.cgs)
        dcdiff += dz
        dcspec_total += cache.scale * dz
    if d_cspec is not None:
        dcspec_total += d_cspec
    if d_cdiff is not None:
        dcdiff += d_cdiff

    # specular chain; taps into h1/h2 are one-way, their gradients stop here
    x3 = np.concatenate([cache.s2, cache.h2], axis=1)
    _layer_backward("specular.2", grads, dcspec_total, x3)
    ds2 = (dcspec_total @ params.specular[2].w)[:, :HIDDEN] * (cache.s2 > 0)
    x2 = np.concatenate([cache.s1, cache.h1], axis=1)
    _layer_backward("specular.1", grads, ds2, x2)
    ds1 = (ds2 @ params.specular[1].w)[:, :HIDDEN] * (cache.s1 > 0)
    x1 = np.concatenate([f, cache.dirs], axis=1)
    _layer_backward("specular.0", grads, ds1, x1)
    d_f += (ds1 @ params.specular[0].w)[:, : params.feature_dim]

    dh2_extra = np.zeros((e, HIDDEN))
    if d_alpha is not None:
        dh2_extra = _seg_backward(params, cache, d_alpha, grads, d_f, cache.h2)

    # diffuse chain
    if d_hidden is not None:
        dh2_extra = dh2_extra + d_hidden
    _layer_backward("diffuse.2", grads, dcdiff, cache.h2)
    dh2 = (dcdiff @ params.diffuse[2].w + dh2_extra) * (cache.h2 > 0)
    _layer_backward("diffuse.1", grads, dh2, cache.h1)
    dh1 = (dh2 @ params.diffuse[1].w) * (cache.h1 > 0)
    _layer_backward("diffuse.0", grads, dh1, f)
    d_f += dh1 @ params.diffuse[0].w
    return grads, d_f


def _seg_backward(params, cache, d_alpha, grads, d_f, hidden):
    """Backward through the seg head; returns the gradient on the hidden tap."""
    dlogit = (d_alpha * cache.alpha * (1.0 - cache.alpha))[:, None]
    _layer_backward("seg.1", grads, dlogit, cache.g1)
    dg1 = (dlogit @ params.seg[1].w) * (cache.g1 > 0)
    xg = (
        np.concatenate([cache.f, hidden], axis=1)
        if params.seg_uses_hidden
        else cache.f
    )
    _layer_backward("seg.0", grads, dg1, xg)
    dxg = dg1 @ params.seg[0].w
    d_f += dxg[:, : params.feature_dim]
    if params.seg_uses_hidden:
        return dxg[:, params.feature_dim :]
    return np.zeros((cache.f.shape[0], HIDDEN))
