"""PSNR/SSIM and the recolor evaluation harness.

SSIM is the standard single-scale formulation: 11x11 Gaussian window with
sigma 1.5, K1=0.01, K2=0.03, unit dynamic range, per-channel then
averaged, with the half-window border cropped before the mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError
from .pipeline import render_view
from .rasterizer import precompute_blend, render_alpha
from .scene import Scene

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """10*log10(1/MSE) over masked pixels, capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr requires equal image shapes")
    sq = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("psnr mask selects no pixels")
        sq = sq[mask]
    mse = float(sq.mean())
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    half = kernel.size // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (half, half)
    padded = np.pad(img, pad, mode="symmetric")
    out = np.zeros_like(img)
    for i, kv in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def _blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return _filter_axis(_filter_axis(img, kernel, 0), kernel, 1)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity of two images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("ssim requires equal image shapes")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    half = SSIM_WINDOW // 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mu_x = _blur(x, kernel)
        mu_y = _blur(y, kernel)
        var_x = _blur(x * x, kernel) - mu_x**2
        var_y = _blur(y * y, kernel) - mu_y**2
        cov = _blur(x * y, kernel) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
            (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        )
        vals.append(s[half:-half, half:-half].mean())
    return float(np.mean(vals))


@dataclass
class EvalReport:
    view_ids: list[int]
    psnr_per_view: list[float]
    ssim_per_view: list[float]
    masked_psnr_per_view: list[float]
    mean_psnr: float = field(init=False)
    mean_ssim: float = field(init=False)
    mean_masked_psnr: float = field(init=False)
    lpips: None = None  # kept for Table-shaped reports; metric out of scope

    def __post_init__(self):
        self.mean_psnr = float(np.mean(self.psnr_per_view))
        self.mean_ssim = float(np.mean(self.ssim_per_view))
        self.mean_masked_psnr = float(np.mean(self.masked_psnr_per_view))

    def to_json(self) -> str:
        return json.dumps(
            {
                "view_ids": self.view_ids,
                "psnr": self.psnr_per_view,
                "ssim": self.ssim_per_view,
                "masked_psnr": self.masked_psnr_per_view,
                "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim,
                "mean_masked_psnr": self.mean_masked_psnr,
                "lpips": self.lpips,
            },
            indent=2,
        )

    def to_table(self) -> str:
        lines = [
            f"{'view':>6} {'PSNR':>8} {'SSIM':>8} {'mPSNR':>8} {'LPIPS':>8}",
        ]
        for v, p, s, mp in zip(
            self.view_ids, self.psnr_per_view, self.ssim_per_view,
            self.masked_psnr_per_view,
        ):
            lines.append(f"{v:>6d} {p:>8.2f} {s:>8.4f} {mp:>8.2f} {'-':>8}")
        lines.append(
            f"{'mean':>6} {self.mean_psnr:>8.2f} {self.mean_ssim:>8.4f} "
            f"{self.mean_masked_psnr:>8.2f} {'-':>8}"
        )
        return "\n".join(lines)


def changed_object_mask(scene: Scene, gt_scene: Scene) -> np.ndarray:
    """Per-gaussian indicator of the recolored object (where albedo changed)."""
    if scene.oracle is None or gt_scene.oracle is None:
        raise ConfigError("both scenes need oracle materials")
    diff = np.array(
        [
            float(np.any(a.albedo != b.albedo))
            for a, b in zip(scene.oracle, gt_scene.oracle)
        ]
    )
    if diff.sum() == 0:
        diff = np.ones(scene.n_gaussians)
    return diff


def evaluate_recolor(
    base_ckpt,
    session,
    scene: Scene,
    gt_scene: Scene,
    holdout_views: list[int],
) -> EvalReport:
    """Render on holdout poses and compare against the oracle-recolor GT.

    session=None evaluates the unedited base model against gt_scene; the
    masked metric uses the gaussians whose oracle albedo differs between
    the two scenes.
    """
    if session is not None:
        edited = {v for v, _ in session.edit_views}
        overlap = edited & set(holdout_views)
        if overlap:
            raise ConfigError(f"holdout views overlap edit views: {sorted(overlap)}")
    mask_g = changed_object_mask(scene, gt_scene)
    ps, ss, mps = [], [], []
    for v in holdout_views:
        cam = scene.views[v].camera
        blend = precompute_blend(scene, v)
        if session is None:
            img = render_view(base_ckpt.model, scene, cam, blend)
        else:
            from .editing import render_edited

            img = render_edited(session, cam)
        ref = gt_scene.views[v].pixels
        mask2d = render_alpha(blend, mask_g) >= 0.5
        ps.append(psnr(img, ref))
        ss.append(ssim(img, ref))
        mps.append(psnr(img, ref, mask2d) if mask2d.any() else psnr(img, ref))
    return EvalReport(
        view_ids=list(holdout_views),
        psnr_per_view=ps,
        ssim_per_view=ss,
        masked_psnr_per_view=mps,
    )
