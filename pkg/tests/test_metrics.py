import json

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from splatpaint.errors import ConfigError
from splatpaint.metrics import EvalReport, evaluate_recolor, psnr, ssim
from splatpaint.pipeline import render_view
from splatpaint.rasterizer import precompute_blend


def test_psnr_trivials():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert psnr(a, a) == 100.0
    gray = np.full((8, 8, 3), 0.5)
    black = np.zeros((8, 8, 3))
    assert psnr(gray, black) == pytest.approx(6.0205999, abs=1e-6)
    # mse 0.01 -> 20 dB
    b = a.copy()
    b += 0.1
    assert psnr(np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.1)) == pytest.approx(20.0)


def test_psnr_masked_and_errors():
    a = np.zeros((8, 8, 3))
    b = np.zeros((8, 8, 3))
    b[:4] = 0.5
    mask = np.zeros((8, 8), dtype=bool)
    mask[4:] = True
    assert psnr(a, b, mask) == 100.0  # untouched half
    with pytest.raises(ValueError):
        psnr(a, b, np.zeros((8, 8), dtype=bool))
    with pytest.raises(ValueError):
        psnr(a, np.zeros((4, 4, 3)))


def test_psnr_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identical_and_anticorrelated():
    rng = np.random.default_rng(2)
    a = rng.random((32, 32, 3))
    assert ssim(a, a) == pytest.approx(1.0)
    binary = (rng.random((32, 32)) > 0.5).astype(np.float64)
    assert ssim(binary, 1.0 - binary) < 0.0


def test_ssim_symmetry_and_window_guard():
    rng = np.random.default_rng(3)
    a, b = rng.random((24, 24, 3)), rng.random((24, 24, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_matches_independent_reference():
    rng = np.random.default_rng(4)
    for _ in range(3):
        a = rng.random((40, 52, 3))
        b = np.clip(a + rng.normal(0, 0.08, a.shape), 0, 1)
        ref = structural_similarity(
            a, b, win_size=11, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False, data_range=1.0, channel_axis=2,
        )
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_eval_report_serialization():
    report = EvalReport(
        view_ids=[1, 3], psnr_per_view=[30.0, 32.0],
        ssim_per_view=[0.9, 0.95], masked_psnr_per_view=[25.0, 27.0],
    )
    blob = json.loads(report.to_json())
    assert blob["mean_psnr"] == 31.0
    assert blob["lpips"] is None
    table = report.to_table()
    assert "mean" in table and "LPIPS" in table


def test_evaluate_base_against_unedited_gt_equals_stage1_psnr(
    small_checkpoint, small_scene
):
    report = evaluate_recolor(
        small_checkpoint, None, small_scene, small_scene, [1, 3]
    )
    for vid, p in zip(report.view_ids, report.psnr_per_view):
        cam = small_scene.views[vid].camera
        blend = precompute_blend(small_scene, vid)
        img = render_view(small_checkpoint.model, small_scene, cam, blend)
        assert p == pytest.approx(psnr(img, small_scene.views[vid].pixels))


def test_evaluate_rejects_overlapping_splits(
    small_checkpoint, small_scene, recolored_small_scene
):
    from splatpaint.editing import create_session

    sess = create_session(
        small_checkpoint, small_scene, 0, recolored_small_scene.views[0].pixels
    )
    with pytest.raises(ConfigError):
        evaluate_recolor(
            small_checkpoint, sess, small_scene, recolored_small_scene, [0, 1]
        )


def test_evaluate_recolor_reports_masked_gain(
    small_checkpoint, small_scene, recolored_small_scene
):
    from splatpaint.editing import create_session, finetune

    sess = create_session(
        small_checkpoint, small_scene, 0, recolored_small_scene.views[0].pixels,
        rng_seed=11,
    )
    finetune(sess, steps=150)
    base = evaluate_recolor(
        small_checkpoint, None, small_scene, recolored_small_scene, [1, 3, 5]
    )
    edited = evaluate_recolor(
        small_checkpoint, sess, small_scene, recolored_small_scene, [1, 3, 5]
    )
    assert edited.mean_masked_psnr > base.mean_masked_psnr + 5.0
