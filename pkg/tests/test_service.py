import base64
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from splatpaint.pipeline import render_view
from splatpaint.rasterizer import precompute_blend
from splatpaint.scene import decode_png, encode_png
from splatpaint.service import create_app


@pytest.fixture(scope="module")
def client(small_scene, small_checkpoint):
    app = create_app(small_scene, small_checkpoint)
    with TestClient(app) as c:
        yield c


def pose_param(cam):
    return ",".join(str(float(x)) for x in cam.world_to_camera.ravel())


def test_views_listing(client, small_scene):
    got = client.get("/views").json()
    assert len(got) == len(small_scene.views)
    assert got[0]["view_id"] == 0
    assert len(got[0]["camera"]["pose"]) == 12
    thumb = client.get(got[2]["thumbnail_url"])
    assert thumb.status_code == 200
    pixels = decode_png(thumb.content)
    assert pixels.shape == (64, 64, 3)


def test_render_parity_with_offline_pipeline(client, small_scene, small_checkpoint):
    vid = 1
    cam = small_scene.views[vid].camera
    resp = client.get("/render", params={"pose": pose_param(cam), "s": 1.0})
    assert resp.status_code == 200
    offline = render_view(
        small_checkpoint.model, small_scene, cam, precompute_blend(small_scene, vid)
    )
    assert resp.content == encode_png(offline)


def test_render_specular_scale_changes_highlights_only(client, small_scene):
    cam = small_scene.views[0].camera
    img1 = decode_png(client.get("/render", params={"pose": pose_param(cam), "s": 1.0}).content)
    img0 = decode_png(client.get("/render", params={"pose": pose_param(cam), "s": 0.0}).content)
    diff = np.abs(img1 - img0).max(axis=2)
    assert diff.max() > 0  # some pixels carry specular
    assert (diff > 0).mean() < 0.9  # but not everywhere


def test_render_rejects_bad_requests(client):
    assert client.get("/render", params={"pose": "1,2,3"}).status_code == 400
    bad = ",".join(["1"] * 12)
    assert client.get("/render", params={"pose": bad}).status_code == 400
    good = "1,0,0,0,0,1,0,0,0,0,1,4"
    assert client.get("/render", params={"pose": good, "session": "nope"}).status_code == 404
    assert client.get("/render", params={"pose": good, "s": -1}).status_code == 422


def make_session(client, small_scene, pixels, view_id=0):
    payload = {
        "view_id": view_id,
        "image": base64.b64encode(encode_png(pixels)).decode(),
    }
    resp = client.post("/sessions", json=payload)
    assert resp.status_code == 200
    return resp.json()["session_id"]


def test_session_lifecycle(client, small_scene, recolored_small_scene):
    sid = make_session(client, small_scene, recolored_small_scene.views[0].pixels)
    status = client.get(f"/sessions/{sid}/status").json()
    assert status["status"] == "created"
    assert status["steps_done"] == 0

    resp = client.post(f"/sessions/{sid}/finetune", json={"steps": 120})
    assert resp.status_code == 200
    seen = [0]
    deadline = time.time() + 60
    while time.time() < deadline:
        st = client.get(f"/sessions/{sid}/status").json()
        seen.append(st["steps_done"])
        if st["status"] == "done":
            break
        time.sleep(0.02)
    assert st["status"] == "done"
    assert st["steps_done"] > 0 and st["loss"] is not None
    assert all(a <= b for a, b in zip(seen, seen[1:]))

    cam = small_scene.views[2].camera
    r = client.get("/render", params={"pose": pose_param(cam), "session": sid})
    assert r.status_code == 200
    m = client.get(f"/sessions/{sid}/mask", params={"pose": pose_param(cam)})
    assert m.status_code == 200
    mask = decode_png(m.content)
    assert mask.min() >= 0.0 and mask.max() <= 1.0


def test_double_finetune_conflicts(client, small_scene, recolored_small_scene):
    sid = make_session(client, small_scene, recolored_small_scene.views[0].pixels)
    assert client.post(f"/sessions/{sid}/finetune", json={"steps": 4000}).status_code == 200
    resp = client.post(f"/sessions/{sid}/finetune", json={"steps": 10})
    assert resp.status_code == 409
    deadline = time.time() + 120
    while time.time() < deadline:
        if client.get(f"/sessions/{sid}/status").json()["status"] == "done":
            break
        time.sleep(0.05)


def test_add_edit_view_endpoint(client, small_scene, recolored_small_scene):
    sid = make_session(client, small_scene, recolored_small_scene.views[0].pixels)
    payload = {
        "view_id": 3,
        "image": base64.b64encode(encode_png(recolored_small_scene.views[3].pixels)).decode(),
    }
    resp = client.post(f"/sessions/{sid}/edits", json=payload)
    assert resp.status_code == 200
    assert resp.json()["edit_views"] == [0, 3]
    # duplicate view rejected
    assert client.post(f"/sessions/{sid}/edits", json=payload).status_code == 400


def test_mask_black_when_alpha_forced_zero(client, small_scene, recolored_small_scene):
    sid = make_session(client, small_scene, recolored_small_scene.views[0].pixels)
    sess = client.app.state.engine.sessions[sid]
    sess.seg[1].w[:] = 0.0
    sess.seg[1].b[:] = -1000.0
    cam = small_scene.views[1].camera
    mask = decode_png(
        client.get(f"/sessions/{sid}/mask", params={"pose": pose_param(cam)}).content
    )
    assert mask.max() == 0.0


def test_openapi_spec_served(client):
    spec = client.get("/spec").json()
    assert "/render" in spec["paths"]
    assert "/sessions" in spec["paths"]


def test_empty_view_scene_lists_and_503(small_scene, small_checkpoint):
    from splatpaint.scene import Scene

    bare = Scene(
        gaussians=small_scene.gaussians,
        views=[],
        oracle=small_scene.oracle,
        normals=small_scene.normals,
        background=small_scene.background,
    )
    app = create_app(bare, small_checkpoint)
    with TestClient(app) as c:
        assert c.get("/views").json() == []
        good = "1,0,0,0,0,1,0,0,0,0,1,4"
        assert c.get("/render", params={"pose": good}).status_code == 503


def test_reads_are_untorn_during_finetune(client, small_scene, recolored_small_scene):
    sid = make_session(client, small_scene, recolored_small_scene.views[0].pixels)
    assert client.post(f"/sessions/{sid}/finetune", json={"steps": 1500}).status_code == 200
    cam = small_scene.views[2].camera
    # renders issued mid-finetune always decode and stay in range
    for _ in range(6):
        r = client.get("/render", params={"pose": pose_param(cam), "session": sid})
        assert r.status_code == 200
        img = decode_png(r.content)
        assert img.min() >= 0.0 and img.max() <= 1.0
    deadline = time.time() + 120
    while time.time() < deadline:
        if client.get(f"/sessions/{sid}/status").json()["status"] == "done":
            break
        time.sleep(0.05)


def test_repeated_pose_hits_the_blend_cache(client, small_scene):
    import numpy as np

    cam = small_scene.views[0].camera
    jitter = cam.translation + 1e-6  # within the quantization bucket
    pose = ",".join(
        str(float(x)) for x in np.hstack([cam.rotation, jitter[:, None]]).ravel()
    )
    first = client.get("/render", params={"pose": pose})
    again = client.get("/render", params={"pose": pose})
    assert again.headers["x-blend-cache"] == "hit"
    assert float(again.headers["x-render-ms"]) > 0
    assert again.content == first.content
