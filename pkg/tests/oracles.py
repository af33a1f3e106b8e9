"""Independent reference implementations used as test oracles.

Everything here is deliberately written from first principles (per-pixel
loops, textbook formulas, finite differences) and shares no code with the
engine's tiled/vectorized paths.
"""

from __future__ import annotations

import numpy as np


def quat_rotation(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def phong_scalar(albedo, k_s, shininess, light, normal, view):
    """Textbook Lambert + Phong shading of one point, scalar math only."""
    ndl = normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]
    r = [2.0 * ndl * normal[i] - light[i] for i in range(3)]
    rdv = sum(r[i] * view[i] for i in range(3))
    out = []
    for c in range(3):
        val = albedo[c] * max(0.0, ndl) + k_s * max(0.0, rdv) ** shininess
        out.append(min(1.0, max(0.0, val)))
    return np.array(out)


def project_point(mean, cam):
    """World point -> (u, v) pixel coords, straight pinhole math."""
    p = cam.rotation @ mean + cam.translation
    return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])


def numeric_cov2d(gaussian, cam, h=1e-5, low_pass=0.3):
    """2D covariance via a finite-difference projection jacobian."""
    rot = quat_rotation(gaussian.rotation)
    m = rot * gaussian.scale[None, :]
    sigma_world = m @ m.T
    jac = np.zeros((2, 3))
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = h
        jac[:, k] = (
            project_point(gaussian.mean + dp, cam) - project_point(gaussian.mean - dp, cam)
        ) / (2 * h)
    return jac @ sigma_world @ jac.T + low_pass * np.eye(2)


def splat_alpha(px, py, center, cov2d, opacity, alpha_max=0.99):
    """Gaussian footprint alpha at one pixel center, direct 2x2 inverse."""
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    det = a * c - b * b
    dx = px - center[0]
    dy = py - center[1]
    q = (c * dx * dx - 2 * b * dx * dy + a * dy * dy) / det
    return min(alpha_max, opacity * np.exp(-0.5 * q))


def brute_force_blend(
    centers, cov2ds, depths, opacities, gidx, width, height,
    alpha_min=1.0 / 255.0, alpha_max=0.99, t_stop=1e-4,
):
    """Per-pixel exhaustive sort-and-composite blend weights.

    No tiles, no footprint culling: every splat is considered at every
    pixel, sorted by (depth, gaussian index). Returns per-pixel entry
    lists [(gaussian, weight), ...] and a T_bg image.
    """
    order = sorted(range(len(depths)), key=lambda i: (np.float32(depths[i]), gidx[i]))
    entries = [[[] for _ in range(width)] for _ in range(height)]
    t_bg = np.ones((height, width))
    for iy in range(height):
        for ix in range(width):
            px, py = ix + 0.5, iy + 0.5
            trans = 1.0
            for i in order:
                a = splat_alpha(px, py, centers[i], cov2ds[i], opacities[i], alpha_max)
                if a < alpha_min:
                    continue
                entries[iy][ix].append((int(gidx[i]), a * trans))
                trans *= 1.0 - a
                if trans < t_stop:
                    break
            t_bg[iy, ix] = trans
    return entries, t_bg


def brute_force_composite(entries, t_bg, colors, background):
    height, width = t_bg.shape
    img = np.zeros((height, width, 3))
    for iy in range(height):
        for ix in range(width):
            acc = t_bg[iy, ix] * np.asarray(background, dtype=np.float64)
            for g, w in entries[iy][ix]:
                acc = acc + w * colors[g]
            img[iy, ix] = acc
    return img


def central_difference(fn, arr, index, h):
    old = arr[index]
    arr[index] = old + h
    fp = fn()
    arr[index] = old - h
    fm = fn()
    arr[index] = old
    return (fp - fm) / (2.0 * h)


def directional_derivative(fn, arrays, direction, h):
    """Central difference of fn along a dict-of-arrays direction."""
    for k, arr in arrays.items():
        arr += h * direction[k]
    fp = fn()
    for k, arr in arrays.items():
        arr -= 2.0 * h * direction[k]
    fm = fn()
    for k, arr in arrays.items():
        arr += h * direction[k]
    return (fp - fm) / (2.0 * h)
