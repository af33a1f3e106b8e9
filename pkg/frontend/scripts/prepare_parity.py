"""Prepare a scene and trained checkpoint for the UI parity run."""

import argparse
import json
from pathlib import Path

from splatpaint.scene import (
    MaterialSpec,
    SceneSpec,
    ShapeGeom,
    save_scene,
    synth_scene,
)
from splatpaint.training import TrainConfig, save_checkpoint, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--steps", type=int, default=1200)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = SceneSpec(
        shapes=[
            ShapeGeom("sphere", [0.0, 0.0, 0.0], [1.0]),
            ShapeGeom("sphere", [2.2, 0.0, 0.3], [0.8]),
        ],
        counts=[400, 280],
        materials=[
            MaterialSpec([0.85, 0.2, 0.15], specular_strength=0.5, shininess=32),
            MaterialSpec([0.1, 0.25, 0.8], specular_strength=0.0, shininess=16),
        ],
        n_views=12,
        image_size=96,
        rng_seed=7,
        opacity=0.95,
    )
    scene = synth_scene(spec)
    save_scene(scene, out / "scene.vgsc")
    ckpt = train(
        scene,
        TrainConfig(steps=args.steps, minibatches_per_batch=20, rng_seed=3),
    )
    save_checkpoint(ckpt, out / "model.vgck")
    (out / "meta.json").write_text(json.dumps({"steps": ckpt.steps}))
    print(f"prepared scene + checkpoint in {out}")


if __name__ == "__main__":
    main()
