"""HTTP session service exposing rendering and editing to the browser UI.

Renders go through the same pipeline functions as the CLI, with no
server-side resampling, so server and offline outputs are bit-identical.
Fine-tunes run on one worker thread per session; renders read a
(head, seg) snapshot that the worker swaps atomically after each step.
"""

from __future__ import annotations

import base64
import threading
import time
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pathlib import Path

from . import editing
from .errors import ConfigError
from .pipeline import render_view
from .rasterizer import BlendRecord, blend_for_camera, pose_hash, precompute_blend
from .scene import Camera, Scene, camera_from_flat_pose, decode_png, encode_png
from .training import Checkpoint


class ServiceState:
    """Loaded checkpoint + scene, session table, and the pose-keyed blend cache."""

    def __init__(self, scene: Scene, checkpoint: Checkpoint):
        self.scene = scene
        self.checkpoint = checkpoint
        self.sessions: dict[str, editing.EditSession] = {}
        self.workers: dict[str, threading.Thread] = {}
        self.running: set[str] = set()
        self.blend_cache: dict[str, BlendRecord] = {}
        self.lock = threading.Lock()

    def blend_for(self, cam: Camera) -> tuple[BlendRecord, bool]:
        """(record, cache_hit); quantized-pose keys make orbit reuse observable."""
        key = pose_hash(cam, 16)
        with self.lock:
            rec = self.blend_cache.get(key)
        if rec is not None:
            return rec, True
        for v in self.scene.views:
            if pose_hash(v.camera, 16) == key:
                rec = precompute_blend(self.scene, v.view_id)
                break
        if rec is None:
            p = self.scene.packed()
            rec = blend_for_camera(p.means, p.quats, p.scales, p.opacities, cam)
        with self.lock:
            self.blend_cache[key] = rec
        return rec, False


def _parse_pose(pose: str, w: int, h: int, scene: Scene) -> Camera:
    try:
        vals = [float(x) for x in pose.split(",")]
    except ValueError:
        raise HTTPException(400, "pose must be 12 comma-separated numbers")
    try:
        return camera_from_flat_pose(vals, scene.views[0].camera, w, h)
    except ValueError as exc:
        raise HTTPException(400, str(exc))


def _png_response(pixels: np.ndarray, headers: Optional[dict] = None) -> Response:
    return Response(content=encode_png(pixels), media_type="image/png", headers=headers)


def create_app(
    scene: Scene, checkpoint: Checkpoint, ui_dir: Optional[str] = None
) -> FastAPI:
    app = FastAPI(title="splatpaint service", version="0.1.0")
    state = ServiceState(scene, checkpoint)
    app.state.engine = state

    @app.get("/views")
    def list_views():
        out = []
        for v in scene.views:
            cam = v.camera
            out.append(
                {
                    "view_id": v.view_id,
                    "camera": {
                        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                        "width": cam.width, "height": cam.height,
                        "pose": [float(x) for x in cam.world_to_camera.ravel()],
                    },
                    "thumbnail_url": f"/views/{v.view_id}/image",
                }
            )
        return out

    @app.get("/views/{view_id}/image")
    def view_image(view_id: int):
        if not 0 <= view_id < len(scene.views):
            raise HTTPException(404, f"unknown view {view_id}")
        return _png_response(scene.views[view_id].pixels)

    @app.get("/render")
    def render(
        pose: str,
        w: Optional[int] = None,
        h: Optional[int] = None,
        s: float = Query(default=1.0, ge=0.0),
        session: Optional[str] = None,
        component: str = "full",
    ):
        if not scene.views:
            raise HTTPException(503, "no views loaded")
        t0 = time.perf_counter()
        ref = scene.views[0].camera
        cam = _parse_pose(pose, w or ref.width, h or ref.height, scene)
        blend, cache_hit = state.blend_for(cam)
        if session is None:
            try:
                img = render_view(
                    checkpoint.model, scene, cam, blend, scale=s, component=component
                )
            except ConfigError as exc:
                raise HTTPException(400, str(exc))
        else:
            sess = state.sessions.get(session)
            if sess is None:
                raise HTTPException(404, f"unknown session {session}")
            if component != "full":
                raise HTTPException(400, "component renders are base-model only")
            sess._blend_cache[pose_hash(cam, 16)] = blend
            img = editing.render_edited(sess, cam, s)
        return _png_response(
            img,
            headers={
                "x-render-ms": f"{(time.perf_counter() - t0) * 1e3:.2f}",
                "x-blend-cache": "hit" if cache_hit else "miss",
            },
        )

    @app.post("/sessions")
    def create_session_ep(payload: dict = Body(...)):
        view_id = payload.get("view_id")
        image_b64 = payload.get("image")
        if view_id is None or image_b64 is None:
            raise HTTPException(400, "need view_id and base64 PNG image")
        try:
            pixels = decode_png(base64.b64decode(image_b64))
            if pixels.ndim == 3 and pixels.shape[2] == 4:
                pixels = pixels[:, :, :3]
            sess = editing.create_session(
                checkpoint, scene, int(view_id), pixels,
                rng_seed=int(payload.get("seed", 0)),
                wide_finetune=bool(payload.get("wide_finetune", False)),
            )
        except ConfigError as exc:
            raise HTTPException(400, str(exc))
        with state.lock:
            state.sessions[sess.session_id] = sess
        return {"session_id": sess.session_id, "status": sess.status}

    def _get_session(session_id: str) -> editing.EditSession:
        sess = state.sessions.get(session_id)
        if sess is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return sess

    @app.post("/sessions/{session_id}/edits")
    def add_edit(session_id: str, payload: dict = Body(...)):
        sess = _get_session(session_id)
        if session_id in state.running:
            raise HTTPException(409, "fine-tune in progress")
        try:
            pixels = decode_png(base64.b64decode(payload["image"]))
            if pixels.ndim == 3 and pixels.shape[2] == 4:
                pixels = pixels[:, :, :3]
            editing.add_edit_view(sess, int(payload["view_id"]), pixels)
        except ConfigError as exc:
            raise HTTPException(400, str(exc))
        return {"session_id": session_id, "edit_views": [v for v, _ in sess.edit_views]}

    @app.post("/sessions/{session_id}/finetune")
    def start_finetune(session_id: str, payload: Optional[dict] = Body(default=None)):
        sess = _get_session(session_id)
        with state.lock:
            if session_id in state.running:
                raise HTTPException(409, "fine-tune already running")
            state.running.add(session_id)
        payload = payload or {}
        steps = int(payload.get("steps", editing.DEFAULT_FINETUNE_STEPS))
        lr = float(payload.get("lr", editing.DEFAULT_FINETUNE_LR))

        def work():
            try:
                editing.finetune(sess, steps=steps, lr=lr)
            except Exception:
                sess.status = "failed"
            finally:
                with state.lock:
                    state.running.discard(session_id)

        worker = threading.Thread(target=work, daemon=True)
        state.workers[session_id] = worker
        worker.start()
        return {"session_id": session_id, "status": "running", "steps": steps}

    @app.get("/sessions/{session_id}/status")
    def session_status(session_id: str):
        sess = _get_session(session_id)
        loss = sess.last_loss
        status = "running" if session_id in state.running else sess.status
        return {
            "session_id": session_id,
            "status": status,
            "steps_done": sess.steps_done,
            "loss": None if loss != loss else loss,
        }

    @app.get("/sessions/{session_id}/mask")
    def session_mask(session_id: str, pose: str, w: Optional[int] = None, h: Optional[int] = None):
        sess = _get_session(session_id)
        if not scene.views:
            raise HTTPException(503, "no views loaded")
        ref = scene.views[0].camera
        cam = _parse_pose(pose, w or ref.width, h or ref.height, scene)
        return _png_response(editing.render_mask(sess, cam))

    @app.get("/spec")
    def openapi_spec():
        return app.openapi()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
