"""Batch entry points: synth, train, render, edit, eval, serve, ablate.

Exit codes: 1 configuration error, 2 numeric error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatpaint")
    p.add_argument("--threads", type=int, default=None, help="cap numba thread count")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="synthesize an oracle scene")
    sp.add_argument("--spec", required=True, help="scene spec JSON")
    sp.add_argument("--out", required=True, help="output .vgsc path")
    sp.add_argument("--seed", type=int, default=None, help="override spec rng_seed")

    tp = sub.add_parser("train", help="stage-1 appearance training")
    tp.add_argument("--scene", required=True)
    tp.add_argument("--out", required=True, help="output checkpoint path")
    tp.add_argument("--steps", type=int, default=2000)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--minibatches", type=int, default=64)
    tp.add_argument("--lr-tables", type=float, default=1e-2)
    tp.add_argument("--lr-mlp", type=float, default=2e-3)
    tp.add_argument("--mono-view", action="store_true", help="disable multi-view batches")
    tp.add_argument("--vanilla", action="store_true", help="single entangled color MLP")
    tp.add_argument("--no-ds", action="store_true", help="drop the diffuse-hidden seg input")
    tp.add_argument("--train-views", type=str, default=None, help="comma list, default all")
    tp.add_argument("--cache-dir", type=str, default=None,
                    help="directory for per-view blend-record cache blobs")

    rp = sub.add_parser("render", help="render a view or explicit pose")
    rp.add_argument("--scene", required=True)
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--view", type=int, default=None)
    rp.add_argument("--pose", type=str, default=None, help="12 comma floats, row-major 3x4")
    rp.add_argument("--s", type=float, default=1.0, help="specular scale")
    rp.add_argument("--component", choices=["full", "diffuse", "specular"], default="full")
    rp.add_argument("--session", type=str, default=None, help="session file to render")
    rp.add_argument("--mask", action="store_true", help="render the session's soft mask")

    ep = sub.add_parser("edit", help="fine-tune a recolor session")
    ep.add_argument("--scene", required=True)
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--view", type=int, required=True)
    ep.add_argument("--image", required=True, help="edited view PNG")
    ep.add_argument("--add", action="append", default=[], metavar="VIEW:PNG",
                    help="extra edit views (repeatable)")
    ep.add_argument("--steps", type=int, default=300)
    ep.add_argument("--lr", type=float, default=5e-3)
    ep.add_argument("--seed", type=int, default=0)
    ep.add_argument("--wide", action="store_true", help="also fine-tune the color MLPs")
    ep.add_argument("--out", required=True, help="output session file")

    vp = sub.add_parser("eval", help="recolor evaluation vs oracle GT")
    vp.add_argument("--scene", required=True)
    vp.add_argument("--checkpoint", required=True)
    vp.add_argument("--gt", required=True, help="oracle-recolored scene file")
    vp.add_argument("--session", type=str, default=None)
    vp.add_argument("--holdout", type=str, required=True, help="comma view list")
    vp.add_argument("--out", type=str, default=None, help="JSON report path")

    svp = sub.add_parser("serve", help="run the HTTP editing service")
    svp.add_argument("--scene", required=True)
    svp.add_argument("--checkpoint", required=True)
    svp.add_argument("--host", default=None, help="default SPLATPAINT_HOST or 127.0.0.1")
    svp.add_argument("--port", type=int, default=8000)
    svp.add_argument("--ui", type=str, default=None, help="static UI directory to mount")

    ap = sub.add_parser("ablate", help="run the 6-row DC/MV/DS toggle grid")
    ap.add_argument("--spec", required=True, help="scene spec JSON")
    ap.add_argument("--out", type=str, default=None, help="JSON output path")
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--minibatches", type=int, default=16)
    ap.add_argument("--edit-steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    return p


def cmd_synth(args) -> int:
    from .scene import SceneSpec, save_scene, synth_scene

    spec = SceneSpec.from_json(args.spec)
    if args.seed is not None:
        spec.rng_seed = args.seed
    scene = synth_scene(spec)
    save_scene(scene, args.out)
    print(f"wrote {args.out}: {scene.n_gaussians} gaussians, {len(scene.views)} views")
    return 0


def cmd_train(args) -> int:
    from .scene import load_scene
    from .training import TrainConfig, save_checkpoint, train

    scene = load_scene(args.scene)
    config = TrainConfig(
        steps=args.steps,
        minibatches_per_batch=args.minibatches,
        lr_tables=args.lr_tables,
        lr_mlp=args.lr_mlp,
        rng_seed=args.seed,
        mode="vanilla" if args.vanilla else "decoupled",
        multiview=not args.mono_view,
        seg_uses_hidden=not args.no_ds,
        train_views=_parse_int_list(args.train_views) if args.train_views else None,
    )
    every = max(1, args.steps // 20)

    def progress(step, loss):
        if step % every == 0 or step == args.steps - 1:
            print(f"step {step:6d}  loss {loss:.5f}")

    index = None
    if args.cache_dir is not None:
        from .training import build_blend_index

        index = build_blend_index(
            scene,
            config.train_views if config.train_views is not None else list(range(len(scene.views))),
            records=_cached_blends(scene, args.cache_dir),
        )
    ckpt = train(scene, config, index=index, progress=progress)
    save_checkpoint(ckpt, args.out)
    print(f"wrote {args.out} after {ckpt.steps} steps")
    return 0


def _cached_blends(scene, cache_dir):
    """Load/store per-view blend records keyed by (scene hash, view, tile)."""
    from .rasterizer import TILE_SIZE, blend_cache_key, load_blend, precompute_blend, save_blend

    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    records = {}
    digest = scene.scene_hash()
    for v in range(len(scene.views)):
        path = cache / f"{blend_cache_key(digest, v, TILE_SIZE)}.blend"
        if path.exists():
            records[v] = load_blend(path)
        else:
            records[v] = precompute_blend(scene, v)
            save_blend(records[v], path)
    return records


def _camera_from_args(args, scene):
    from .scene import camera_from_flat_pose

    if (args.view is None) == (args.pose is None):
        raise ConfigError("render needs exactly one of --view or --pose")
    if args.view is not None:
        if not 0 <= args.view < len(scene.views):
            raise ConfigError(f"unknown view {args.view}")
        return scene.views[args.view].camera
    try:
        vals = [float(x) for x in args.pose.split(",")]
        return camera_from_flat_pose(vals, scene.views[0].camera)
    except ValueError as exc:
        raise ConfigError(str(exc))


def cmd_render(args) -> int:
    from .pipeline import render_view
    from .rasterizer import blend_for_camera
    from .scene import encode_png, load_scene
    from .training import load_checkpoint

    scene = load_scene(args.scene)
    ckpt = load_checkpoint(args.checkpoint)
    cam = _camera_from_args(args, scene)
    if args.session is not None:
        from .editing import load_session, render_edited, render_mask

        session = load_session(args.session, ckpt, scene)
        img = render_mask(session, cam) if args.mask else render_edited(session, cam, args.s)
    else:
        if args.mask:
            raise ConfigError("--mask requires --session")
        p = scene.packed()
        blend = blend_for_camera(p.means, p.quats, p.scales, p.opacities, cam)
        img = render_view(ckpt.model, scene, cam, blend, scale=args.s, component=args.component)
    Path(args.out).write_bytes(encode_png(img))
    print(f"wrote {args.out}")
    return 0


def cmd_edit(args) -> int:
    from .editing import add_edit_view, create_session, finetune, save_session
    from .scene import decode_png, load_scene
    from .training import load_checkpoint

    scene = load_scene(args.scene)
    ckpt = load_checkpoint(args.checkpoint)
    image = decode_png(Path(args.image).read_bytes())[:, :, :3]
    session = create_session(
        ckpt, scene, args.view, image, rng_seed=args.seed, wide_finetune=args.wide
    )
    for extra in args.add:
        vid, _, path = extra.partition(":")
        add_edit_view(session, int(vid), decode_png(Path(path).read_bytes())[:, :, :3])
    finetune(session, steps=args.steps, lr=args.lr)
    save_session(session, args.out)
    print(
        f"wrote {args.out}: {session.steps_done} steps, final loss {session.last_loss:.5f}"
    )
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate_recolor
    from .scene import load_scene
    from .training import load_checkpoint

    scene = load_scene(args.scene)
    gt_scene = load_scene(args.gt)
    ckpt = load_checkpoint(args.checkpoint)
    session = None
    if args.session is not None:
        from .editing import load_session

        session = load_session(args.session, ckpt, scene)
    report = evaluate_recolor(
        ckpt, session, scene, gt_scene, _parse_int_list(args.holdout)
    )
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import os

    import uvicorn

    from .scene import load_scene
    from .service import create_app
    from .training import load_checkpoint

    scene = load_scene(args.scene)
    ckpt = load_checkpoint(args.checkpoint)
    app = create_app(scene, ckpt, ui_dir=args.ui)
    host = args.host or os.environ.get("SPLATPAINT_HOST", "127.0.0.1")
    uvicorn.run(app, host=host, port=args.port)
    return 0


ABLATION_GRID = (
    (False, False, False),
    (False, True, False),
    (False, True, True),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)


def run_ablation(
    spec_path: str | Path,
    steps: int = 600,
    minibatches: int = 16,
    edit_steps: int = 200,
    seed: int = 0,
) -> list[dict]:
    """Train/edit/eval each DC x MV x DS toggle row on the synthetic suite.

    Rows sharing a (DC, MV) training reuse its checkpoint; DS only changes
    the edit session's segmentation input.
    """
    from .editing import create_session, finetune
    from .metrics import evaluate_recolor
    from .scene import SceneSpec, recolor_oracle, synth_scene
    from .training import TrainConfig, train

    spec = SceneSpec.from_json(spec_path) if not isinstance(spec_path, SceneSpec) else spec_path
    scene = synth_scene(spec)
    n_views = len(scene.views)
    train_views = [v for v in range(n_views) if v % 2 == 0]
    holdout = [v for v in range(n_views) if v % 2 == 1]
    edit_view = train_views[0]
    gt = recolor_oracle(scene, 0, np.array([0.15, 0.8, 0.2]))

    ckpts = {}
    for dc, mv in {(dc, mv) for dc, mv, _ in ABLATION_GRID}:
        config = TrainConfig(
            steps=steps,
            minibatches_per_batch=minibatches,
            rng_seed=seed,
            mode="decoupled" if dc else "vanilla",
            multiview=mv,
            train_views=train_views,
        )
        ckpts[(dc, mv)] = train(scene, config)

    rows = []
    for dc, mv, ds in ABLATION_GRID:
        ckpt = ckpts[(dc, mv)]
        session = create_session(
            ckpt, scene, edit_view, gt.views[edit_view].pixels,
            rng_seed=seed, seg_uses_hidden=ds,
        )
        finetune(session, steps=edit_steps)
        report = evaluate_recolor(ckpt, session, scene, gt, holdout)
        rows.append(
            {
                "DC": dc, "MV": mv, "DS": ds,
                "psnr": report.mean_psnr,
                "ssim": report.mean_ssim,
                "masked_psnr": report.mean_masked_psnr,
            }
        )
    return rows


def format_ablation(rows: list[dict]) -> str:
    mark = lambda b: "x" if b else "-"
    lines = [f"{'DC':>3} {'MV':>3} {'DS':>3} {'PSNR':>8} {'SSIM':>8} {'mPSNR':>8}"]
    for r in rows:
        lines.append(
            f"{mark(r['DC']):>3} {mark(r['MV']):>3} {mark(r['DS']):>3} "
            f"{r['psnr']:>8.2f} {r['ssim']:>8.4f} {r['masked_psnr']:>8.2f}"
        )
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    rows = run_ablation(
        args.spec, steps=args.steps, minibatches=args.minibatches,
        edit_steps=args.edit_steps, seed=args.seed,
    )
    print(format_ablation(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "render": cmd_render,
    "edit": cmd_edit,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        try:
            import numba

            numba.set_num_threads(max(1, args.threads))
        except ImportError:
            pass
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
