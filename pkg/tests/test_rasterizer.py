import numpy as np
import pytest

from splatpaint.projection import project_arrays
from splatpaint.rasterizer import (
    BlendRecord,
    blend_for_camera,
    composite_backward,
    composite_forward,
    load_blend,
    precompute_blend,
    render_alpha,
    save_blend,
)
from splatpaint.scene import Camera, Gaussian3D

from oracles import brute_force_blend, brute_force_composite

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def centered_camera(width=16, height=16, fx=60.0):
    # principal point on a pixel center so an on-axis gaussian peaks there
    return Camera(
        fx=fx, fy=fx, cx=width / 2 + 0.5, cy=height / 2 + 0.5,
        width=width, height=height, rotation=np.eye(3), translation=np.zeros(3),
    )


def random_gaussians(rng, n, z_range=(2.0, 6.0), spread=1.0):
    gaussians = []
    for _ in range(n):
        gaussians.append(
            Gaussian3D(
                mean=np.array(
                    [rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                     rng.uniform(*z_range)]
                ),
                rotation=IDENTITY_QUAT,
                scale=rng.uniform(0.02, 0.12, size=3),
                opacity=rng.uniform(0.3, 1.0),
            )
        )
    return gaussians


def pack(gaussians):
    return (
        np.array([g.mean for g in gaussians]),
        np.array([g.rotation for g in gaussians]),
        np.array([g.scale for g in gaussians]),
        np.array([g.opacity for g in gaussians]),
    )


def pixel_weights(record, ix, iy):
    p = np.nonzero(record.flat_index == iy * record.width + ix)[0][0]
    sl = slice(record.ptr[p], record.ptr[p + 1])
    return record.gauss[sl], record.weight[sl], record.t_bg[p]


def test_single_opaque_gaussian_hits_alpha_clamp():
    cam = centered_camera()
    means, quats, scales, opac = pack(
        [Gaussian3D(np.array([0.0, 0.0, 3.0]), IDENTITY_QUAT, np.full(3, 0.08), 1.0)]
    )
    rec = blend_for_camera(means, quats, scales, opac, cam)
    gauss, weight, t_bg = pixel_weights(rec, 8, 8)
    assert list(gauss) == [0]
    assert weight[0] == pytest.approx(0.99, abs=1e-12)
    assert t_bg == pytest.approx(0.01, abs=1e-12)


def test_two_half_opacity_gaussians_compose_front_to_back():
    cam = centered_camera()
    gs = [
        Gaussian3D(np.array([0.0, 0.0, 3.0]), IDENTITY_QUAT, np.full(3, 0.08), 0.5),
        Gaussian3D(np.array([0.0, 0.0, 5.0]), IDENTITY_QUAT, np.full(3, 0.08), 0.5),
    ]
    rec = blend_for_camera(*pack(gs), cam)
    gauss, weight, t_bg = pixel_weights(rec, 8, 8)
    assert list(gauss) == [0, 1]
    np.testing.assert_allclose(weight, [0.5, 0.25], atol=1e-12)
    assert t_bg == pytest.approx(0.25, abs=1e-12)


def test_blend_matches_brute_force_oracle_on_random_scenes():
    cam = centered_camera(16, 16)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        gaussians = random_gaussians(rng, 50)
        means, quats, scales, opac = pack(gaussians)
        rec = blend_for_camera(means, quats, scales, opac, cam)

        centers, cov_abc, depths, gidx = project_arrays(means, quats, scales, cam)
        cov2ds = np.array([[[a, b], [b, c]] for a, b, c in cov_abc])
        entries, t_bg = brute_force_blend(
            centers, cov2ds, depths, opac[gidx], gidx, 16, 16
        )
        for iy in range(16):
            for ix in range(16):
                gauss, weight, bg = pixel_weights(rec, ix, iy)
                want = entries[iy][ix]
                assert list(gauss) == [g for g, _ in want]
                np.testing.assert_allclose(
                    weight, [w for _, w in want], rtol=0, atol=1e-6
                )
                assert bg == pytest.approx(t_bg[iy, ix], abs=1e-6)
                assert weight.sum() + bg == pytest.approx(1.0, abs=1e-6)


def test_weight_partition_everywhere(small_scene):
    rec = precompute_blend(small_scene, 1)
    sums = np.zeros(rec.n_pixels)
    np.add.at(sums, np.repeat(np.arange(rec.n_pixels), np.diff(rec.ptr)), rec.weight)
    np.testing.assert_allclose(sums + rec.t_bg, 1.0, atol=1e-6)


def test_blend_is_deterministic_and_cache_roundtrips(tmp_path, small_scene):
    a = precompute_blend(small_scene, 0)
    b = precompute_blend(small_scene, 0)
    for field in ("ptr", "gauss", "weight", "t_bg", "flat_index"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    path = tmp_path / "view0.blend"
    save_blend(a, path)
    c = load_blend(path)
    for field in ("ptr", "gauss", "weight", "t_bg", "flat_index", "tile_pixel_ptr"):
        assert np.array_equal(getattr(a, field), getattr(c, field))
    assert (a.width, a.height, a.tile_size) == (c.width, c.height, c.tile_size)


def hand_record():
    """One-pixel record with two entries and leftover transmittance."""
    return BlendRecord(
        width=1, height=1, tile_size=16, ntx=1, nty=1,
        tile_pixel_ptr=np.array([0, 1]),
        flat_index=np.array([0]),
        ptr=np.array([0, 2]),
        gauss=np.array([0, 1], dtype=np.int32),
        weight=np.array([0.7, 0.2]),
        t_bg=np.array([0.1]),
    )


def test_composite_background_only_and_exact_pixel():
    rec = hand_record()
    colors = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    bg = np.array([0.0, 0.0, 1.0])
    img = composite_forward(rec, colors, bg)
    np.testing.assert_allclose(img[0, 0], [0.7, 0.2, 0.1], atol=1e-15)
    # all colors equal to the background -> constant background image
    same = composite_forward(rec, np.tile(bg, (2, 1)), bg)
    np.testing.assert_allclose(same[0, 0], bg, atol=1e-15)


def test_full_weight_pixel_reproduces_color_exactly():
    rec = hand_record()
    rec.weight = np.array([1.0, 0.0])
    rec.t_bg = np.array([0.0])
    c = np.array([[0.3, 0.6, 0.9], [0.5, 0.5, 0.5]])
    img = composite_forward(rec, c, np.zeros(3))
    np.testing.assert_array_equal(img[0, 0], c[0])


def test_composite_matches_brute_force(small_scene):
    rng = np.random.default_rng(2)
    cam = centered_camera(16, 16)
    gaussians = random_gaussians(rng, 50)
    means, quats, scales, opac = pack(gaussians)
    rec = blend_for_camera(means, quats, scales, opac, cam)
    colors = rng.random((50, 3))
    bg = rng.random(3)
    img = composite_forward(rec, colors, bg)

    centers, cov_abc, depths, gidx = project_arrays(means, quats, scales, cam)
    cov2ds = np.array([[[a, b], [b, c]] for a, b, c in cov_abc])
    entries, t_bg = brute_force_blend(centers, cov2ds, depths, opac[gidx], gidx, 16, 16)
    oracle = brute_force_composite(entries, t_bg, colors, bg)
    np.testing.assert_allclose(img, oracle, atol=1e-6)


def test_missing_color_index_raises():
    rec = hand_record()
    with pytest.raises(IndexError):
        composite_forward(rec, np.zeros((1, 3)), np.zeros(3))


def test_backward_zero_and_single_entry():
    rec = hand_record()
    assert np.all(composite_backward(rec, np.zeros((1, 1, 3)), 2) == 0.0)
    d = composite_backward(rec, np.array([[[1.0, 0.0, 0.0]]]), 2)
    np.testing.assert_allclose(d, [[0.7, 0.0, 0.0], [0.2, 0.0, 0.0]], atol=1e-15)


def test_backward_matches_finite_differences(small_scene):
    rec = precompute_blend(small_scene, 0)
    n = small_scene.n_gaussians
    rng = np.random.default_rng(9)
    colors = rng.random((n, 3))
    bg = np.zeros(3)
    w = rng.normal(size=(rec.height, rec.width, 3))

    def loss():
        return float((w * composite_forward(rec, colors, bg)).sum())

    grad = composite_backward(rec, w, n)
    h = 1e-6
    for _ in range(12):
        i, c = rng.integers(n), rng.integers(3)
        old = colors[i, c]
        colors[i, c] = old + h
        fp = loss()
        colors[i, c] = old - h
        fm = loss()
        colors[i, c] = old
        fd = (fp - fm) / (2 * h)
        assert abs(fd - grad[i, c]) <= 1e-6 * max(1.0, abs(fd))


def test_adjoint_identity(small_scene):
    # <backward(g), dc> == <g, forward(dc) - forward(0)> by linearity
    rec = precompute_blend(small_scene, 2)
    n = small_scene.n_gaussians
    rng = np.random.default_rng(10)
    g = rng.normal(size=(rec.height, rec.width, 3))
    dc = rng.normal(size=(n, 3))
    bg = np.array([0.3, 0.1, 0.2])
    lhs = float((composite_backward(rec, g, n) * dc).sum())
    delta = composite_forward(rec, dc, bg) - composite_forward(rec, np.zeros((n, 3)), bg)
    rhs = float((g * delta).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_render_alpha_extremes(small_scene):
    rec = precompute_blend(small_scene, 0)
    n = small_scene.n_gaussians
    ones = render_alpha(rec, np.ones(n))
    covered = rec.scatter_to_image(1.0 - rec.t_bg)
    np.testing.assert_allclose(ones, covered, atol=1e-12)
    assert np.all(render_alpha(rec, np.zeros(n)) == 0.0)
    with pytest.raises(ValueError):
        render_alpha(rec, np.full(n, 1.5))


def test_object_mask_render_matches_oracle(small_scene):
    rec = precompute_blend(small_scene, 0)
    mask_g = small_scene.object_mask(0)
    pred = render_alpha(rec, mask_g) >= 0.5

    packed = small_scene.packed()
    cam = small_scene.views[0].camera
    centers, cov_abc, depths, gidx = project_arrays(
        packed.means, packed.quats, packed.scales, cam
    )
    cov2ds = np.array([[[a, b], [b, c]] for a, b, c in cov_abc])
    entries, t_bg = brute_force_blend(
        centers, cov2ds, depths, packed.opacities[gidx], gidx, cam.width, cam.height
    )
    oracle = np.zeros((cam.height, cam.width))
    for iy in range(cam.height):
        for ix in range(cam.width):
            oracle[iy, ix] = sum(w for g, w in entries[iy][ix] if mask_g[g] > 0)
    want = oracle >= 0.5
    inter = (pred & want).sum()
    union = (pred | want).sum()
    assert union > 0 and inter / union >= 0.95
