"""Shared forward helpers: features -> colors -> composite.

Every consumer (trainer, editor, CLI, HTTP service) renders through these
functions, which is what makes bit-identical parity across entry points a
structural property rather than a test-time coincidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .appearance import MLPParams, appearance_forward, sigmoid
from .encoding import (
    HashFootprint,
    HashGridParams,
    encode_directions,
    hash_encode,
    normalize_positions,
)
from .errors import ConfigError
from .rasterizer import BlendRecord, composite_forward
from .scene import Camera, Scene

COMPONENTS = ("full", "diffuse", "specular")


@dataclass
class ModelParams:
    """Everything the optimizer touches: hash tables plus all MLP weights."""

    grid: HashGridParams
    mlp: MLPParams
    decoupled: bool = True

    @staticmethod
    def create(
        rng: np.random.Generator, decoupled: bool = True, seg_uses_hidden: bool = True,
        **grid_kwargs,
    ) -> "ModelParams":
        grid = HashGridParams.create(rng, **grid_kwargs)
        mlp = MLPParams.create(
            rng, feature_dim=grid.feature_dim, seg_uses_hidden=seg_uses_hidden
        )
        return ModelParams(grid=grid, mlp=mlp, decoupled=decoupled)

    def named_arrays(self):
        yield "tables", self.grid.tables
        for name, layer in self.mlp.named_layers():
            yield f"{name}.w", layer.w
            yield f"{name}.b", layer.b

    def copy(self) -> "ModelParams":
        return ModelParams(
            grid=HashGridParams(
                levels=self.grid.levels,
                table_size=self.grid.table_size,
                features_per_level=self.grid.features_per_level,
                base_resolution=self.grid.base_resolution,
                growth=self.grid.growth,
                tables=self.grid.tables.copy(),
            ),
            mlp=self.mlp.copy(),
            decoupled=self.decoupled,
        )


def gaussian_features(
    grid: HashGridParams, means: np.ndarray
) -> tuple[np.ndarray, HashFootprint]:
    """Hash features of gaussian centers, after contraction into the unit cube."""
    return hash_encode(normalize_positions(means), grid)


def view_directions(means: np.ndarray, camera: Camera) -> np.ndarray:
    """Unit directions camera-center -> gaussian, the per-gaussian theta."""
    d = means - camera.center[None, :]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def direction_encoding(means: np.ndarray, camera: Camera) -> np.ndarray:
    return encode_directions(view_directions(means, camera))


def eval_colors(
    model: ModelParams,
    f: np.ndarray,
    dir_enc: np.ndarray,
    scale: float = 1.0,
    component: str = "full",
) -> np.ndarray:
    """Per-gaussian colors (E, 3) for one view's worth of evaluations."""
    if component not in COMPONENTS:
        raise ConfigError(f"unknown render component {component!r}")
    if not model.decoupled:
        if component != "full":
            raise ConfigError("component renders need the decoupled model")
        cache = appearance_forward(model.mlp, f, dir_enc, decoupled=False)
        return cache.cgs
    cache = appearance_forward(model.mlp, f, dir_enc, scale=scale)
    if component == "diffuse":
        return sigmoid(cache.cdiff)
    if component == "specular":
        return sigmoid(scale * cache.cspec)
    return cache.cgs


def render_view(
    model: ModelParams,
    scene: Scene,
    camera: Camera,
    blend: BlendRecord,
    scale: float = 1.0,
    component: str = "full",
    features: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Render one camera through precomputed blend weights; (H, W, 3) in [0,1]."""
    means = scene.packed().means
    if features is None:
        features, _ = gaussian_features(model.grid, means)
    colors = eval_colors(
        model, features, direction_encoding(means, camera), scale, component
    )
    img = composite_forward(blend, colors, scene.background)
    return np.clip(img, 0.0, 1.0)
