import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatpaint.scene import MaterialSpec, SceneSpec, ShapeGeom, synth_scene


def small_scene_spec(seed=7, image_size=64, n_views=6, counts=(220, 160)):
    """Two-sphere Phong scene: one glossy red, one bluish low-gloss."""
    return SceneSpec(
        shapes=[
            ShapeGeom("sphere", [0.0, 0.0, 0.0], [1.0]),
            ShapeGeom("sphere", [2.2, 0.0, 0.3], [0.8]),
        ],
        counts=list(counts),
        materials=[
            MaterialSpec([0.85, 0.2, 0.15], specular_strength=0.5, shininess=32),
            MaterialSpec([0.1, 0.25, 0.8], specular_strength=0.25, shininess=16),
        ],
        n_views=n_views,
        image_size=image_size,
        rng_seed=seed,
        opacity=0.95,
    )


@pytest.fixture(scope="session")
def small_scene():
    return synth_scene(small_scene_spec())


@pytest.fixture(scope="session")
def tiny_scene():
    """One Lambertian sphere, 3 views at 32px; quick unit-test fodder."""
    return synth_scene(
        SceneSpec(
            shapes=[ShapeGeom("sphere", [0.0, 0.0, 0.0], [1.0])],
            counts=[120],
            materials=[MaterialSpec([0.8, 0.3, 0.2])],
            n_views=3,
            image_size=32,
            rng_seed=5,
            opacity=0.95,
        )
    )


def reference_scene_spec(seed=7):
    """The desk-scale reference: 16 views at 128px, ~850 gaussians.

    Sphere A is glossy (the recolor target and the specular-scale probe);
    sphere B is strictly Lambertian so specular-free pixels exist.
    """
    return SceneSpec(
        shapes=[
            ShapeGeom("sphere", [0.0, 0.0, 0.0], [1.0]),
            ShapeGeom("sphere", [2.2, 0.0, 0.3], [0.8]),
        ],
        counts=[500, 350],
        materials=[
            MaterialSpec([0.85, 0.2, 0.15], specular_strength=0.5, shininess=32),
            MaterialSpec([0.1, 0.25, 0.8], specular_strength=0.0, shininess=16),
        ],
        n_views=16,
        image_size=128,
        rng_seed=seed,
        opacity=0.95,
    )


@pytest.fixture(scope="session")
def reference_scene():
    return synth_scene(reference_scene_spec())


@pytest.fixture(scope="session")
def reference_split():
    train = list(range(0, 16, 2))
    holdout = list(range(1, 16, 2))
    return train, holdout


@pytest.fixture(scope="session")
def reference_checkpoint(reference_scene, reference_split):
    """Full-length multi-view training on the reference scene (shared)."""
    from splatpaint.training import TrainConfig, train

    train_views, _ = reference_split
    config = TrainConfig(
        steps=2000,
        minibatches_per_batch=24,
        rng_seed=3,
        train_views=train_views,
    )
    return train(reference_scene, config)


@pytest.fixture(scope="session")
def small_checkpoint(small_scene):
    """Short multi-view training on the small scene for editing tests."""
    from splatpaint.training import TrainConfig, train

    config = TrainConfig(steps=300, minibatches_per_batch=16, rng_seed=3)
    return train(small_scene, config)


@pytest.fixture(scope="session")
def recolored_small_scene(small_scene):
    from splatpaint.scene import recolor_oracle

    return recolor_oracle(small_scene, 0, np.array([0.15, 0.8, 0.2]))
