"""Frozen splat scenes, posed views, and the synthetic ground-truth oracle.

Synthetic scenes place gaussians on analytic surfaces and shade them with
a Lambertian + Phong model under one directional light, then render the
view images through the engine's own compositor. Ground truth is therefore
exactly representable by the engine, which is what makes desk-scale
end-to-end thresholds meaningful.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConfigError
from .projection import TILE_SIZE
from .rasterizer import blend_for_camera, composite_forward

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


@dataclass
class Gaussian3D:
    """One frozen anisotropic gaussian (geometry and opacity only)."""

    mean: np.ndarray  # (3,)
    rotation: np.ndarray  # (4,) unit quaternion, (w, x, y, z)
    scale: np.ndarray  # (3,) per-axis std-dev, > 0
    opacity: float  # in (0, 1]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation quaternion must be unit length")
        if np.any(self.scale <= 0.0):
            raise ValueError("scale components must be positive")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError("opacity must lie in (0, 1]")


@dataclass
class Camera:
    """Pinhole camera with a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3, 3) orthonormal
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < TILE_SIZE or self.height < TILE_SIZE:
            raise ValueError(f"image dims must be at least the tile size ({TILE_SIZE})")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-6:
            raise ValueError("camera rotation must be orthonormal")

    @property
    def world_to_camera(self) -> np.ndarray:
        """Row-major 3x4 [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @staticmethod
    def look_at(
        position: np.ndarray,
        target: np.ndarray,
        up: np.ndarray,
        fx: float,
        fy: float,
        width: int,
        height: int,
    ) -> "Camera":
        """Camera at `position` looking toward `target` (+z forward, +y down)."""
        position = np.asarray(position, dtype=np.float64)
        fwd = _unit(np.asarray(target, dtype=np.float64) - position)
        right = _unit(np.cross(fwd, _unit(np.asarray(up, dtype=np.float64))))
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return Camera(
            fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
            width=width, height=height, rotation=rot, translation=-rot @ position,
        )


def camera_from_flat_pose(
    vals: list[float] | np.ndarray,
    ref: "Camera",
    width: Optional[int] = None,
    height: Optional[int] = None,
) -> "Camera":
    """Camera from a row-major 3x4 world-to-camera pose (12 numbers).

    Intrinsics are taken from `ref` and rescaled to the requested size;
    the rotation is projected back onto the orthonormal group so every
    consumer (CLI, HTTP service) builds the exact same camera from the
    same wire string.
    """
    vals = np.asarray(vals, dtype=np.float64)
    if vals.shape != (12,):
        raise ValueError("pose must have exactly 12 numbers (row-major 3x4)")
    mat = vals.reshape(3, 4)
    rot, tr = mat[:, :3], mat[:, 3]
    if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-4:
        raise ValueError("pose rotation is not orthonormal")
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    w = width or ref.width
    h = height or ref.height
    return Camera(
        fx=ref.fx * (w / ref.width), fy=ref.fy * (h / ref.height),
        cx=ref.cx * (w / ref.width), cy=ref.cy * (h / ref.height),
        width=w, height=h, rotation=rot, translation=tr,
    )


@dataclass
class ViewImage:
    camera: Camera
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    view_id: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError("pixel dims must match the camera")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")


@dataclass
class OracleMaterial:
    """Lambertian + Phong material used to synthesize view-dependent GT."""

    albedo: np.ndarray  # (3,) in [0, 1]
    specular_strength: float
    shininess: float
    light_dir: np.ndarray  # (3,) unit, shared per scene, points toward the light
    object_id: int

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64)
        if self.albedo.min() < 0.0 or self.albedo.max() > 1.0:
            raise ValueError("albedo must lie in [0,1]^3")
        if abs(np.linalg.norm(self.light_dir) - 1.0) > 1e-6:
            raise ValueError("light_dir must be unit length")
        if self.specular_strength < 0.0:
            raise ValueError("specular_strength must be >= 0")
        if self.shininess < 1.0:
            raise ValueError("shininess must be >= 1")


@dataclass
class PackedGaussians:
    means: np.ndarray
    quats: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray


@dataclass
class Scene:
    """Frozen geometry plus posed view images; immutable after construction."""

    gaussians: list[Gaussian3D]
    views: list[ViewImage]
    oracle: Optional[list[OracleMaterial]] = None
    normals: Optional[np.ndarray] = None  # (N, 3) analytic surface normals
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    _packed: Optional[PackedGaussians] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.gaussians:
            raise ValueError("scene requires at least one gaussian")
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.oracle is not None and len(self.oracle) != len(self.gaussians):
            raise ValueError("oracle must have one material per gaussian")

    def packed(self) -> PackedGaussians:
        if self._packed is None:
            self._packed = PackedGaussians(
                means=np.ascontiguousarray([g.mean for g in self.gaussians]),
                quats=np.ascontiguousarray([g.rotation for g in self.gaussians]),
                scales=np.ascontiguousarray([g.scale for g in self.gaussians]),
                opacities=np.ascontiguousarray([g.opacity for g in self.gaussians]),
            )
        return self._packed

    @property
    def n_gaussians(self) -> int:
        return len(self.gaussians)

    def scene_hash(self) -> str:
        """Digest of the frozen geometry, cameras, and background."""
        p = self.packed()
        h = hashlib.sha256()
        for arr in (p.means, p.quats, p.scales, p.opacities, self.background):
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        for v in self.views:
            cam = v.camera
            h.update(cam.rotation.tobytes())
            h.update(cam.translation.tobytes())
            h.update(
                struct.pack("<4d2i", cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height)
            )
        return h.hexdigest()

    def object_mask(self, object_id: int) -> np.ndarray:
        """Per-gaussian 0/1 indicator of one oracle object."""
        if self.oracle is None:
            raise ConfigError("scene has no oracle materials")
        return np.array(
            [1.0 if m.object_id == object_id else 0.0 for m in self.oracle]
        )


# ---------------------------------------------------------------------------
# shading oracle
# ---------------------------------------------------------------------------


def oracle_color(
    material: OracleMaterial, normal: np.ndarray, view_dir: np.ndarray
) -> np.ndarray:
    """Shade one point: clamp(albedo * max(0, n.l) + k_s * max(0, r.v)^p, 0, 1).

    view_dir points from the surface toward the viewer; r = reflect(l, n).
    """
    normal = np.asarray(normal, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    for v in (normal, view_dir):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError("oracle_color requires unit-normalized inputs")
    l = material.light_dir
    n_dot_l = float(normal @ l)
    r = 2.0 * n_dot_l * normal - l
    r_dot_v = max(0.0, float(r @ view_dir))
    rgb = material.albedo * max(0.0, n_dot_l) + material.specular_strength * (
        r_dot_v**material.shininess
    )
    return np.clip(rgb, 0.0, 1.0)


def oracle_diffuse(material: OracleMaterial, normal: np.ndarray) -> np.ndarray:
    """View-independent part of the oracle shading."""
    return np.clip(material.albedo * max(0.0, float(normal @ material.light_dir)), 0.0, 1.0)


def oracle_colors_for_view(scene: Scene, camera: Camera) -> np.ndarray:
    """Per-gaussian oracle colors (N, 3) as seen from one camera."""
    if scene.oracle is None or scene.normals is None:
        raise ConfigError("scene has no oracle materials")
    center = camera.center
    means = scene.packed().means
    view_dirs = center[None, :] - means
    view_dirs /= np.linalg.norm(view_dirs, axis=1, keepdims=True)
    return np.stack(
        [
            oracle_color(m, n, v)
            for m, n, v in zip(scene.oracle, scene.normals, view_dirs)
        ]
    )


def oracle_diffuse_colors(scene: Scene) -> np.ndarray:
    """Per-gaussian view-independent oracle shading (N, 3)."""
    if scene.oracle is None or scene.normals is None:
        raise ConfigError("scene has no oracle materials")
    return np.stack(
        [oracle_diffuse(m, n) for m, n in zip(scene.oracle, scene.normals)]
    )


# ---------------------------------------------------------------------------
# scene synthesis
# ---------------------------------------------------------------------------


@dataclass
class ShapeGeom:
    kind: str  # "sphere" or "box"
    center: np.ndarray
    size: np.ndarray  # sphere: (radius,); box: (hx, hy, hz)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        if self.kind not in ("sphere", "box"):
            raise ConfigError(f"unknown shape kind {self.kind!r}")


@dataclass
class MaterialSpec:
    albedo: np.ndarray
    specular_strength: float = 0.0
    shininess: float = 16.0

    def __post_init__(self):
        self.albedo = np.asarray(self.albedo, dtype=np.float64)


@dataclass
class SceneSpec:
    shapes: list[ShapeGeom]
    counts: list[int]
    materials: list[MaterialSpec]
    n_views: int = 8
    image_size: int = 128
    rng_seed: int = 0
    light_dir: np.ndarray = field(
        default_factory=lambda: _unit(np.array([0.4, 0.9, -0.3]))
    )
    orbit_radius: float = 0.0  # 0 -> auto from scene extent
    orbit_elevation_deg: float = 20.0
    fov_deg: float = 50.0
    opacity: float = 0.9
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cameras: Optional[list[Camera]] = None  # explicit poses override the orbit

    def __post_init__(self):
        self.light_dir = _unit(np.asarray(self.light_dir, dtype=np.float64))
        self.background = np.asarray(self.background, dtype=np.float64)

    @staticmethod
    def from_json(path: str | Path) -> "SceneSpec":
        with open(path) as fh:
            raw = json.load(fh)
        shapes = [
            ShapeGeom(s["kind"], np.array(s["center"]), np.array(s["size"]))
            for s in raw["shapes"]
        ]
        materials = [
            MaterialSpec(
                np.array(m["albedo"]),
                m.get("specular_strength", 0.0),
                m.get("shininess", 16.0),
            )
            for m in raw["materials"]
        ]
        kwargs = {
            k: raw[k]
            for k in (
                "n_views",
                "image_size",
                "rng_seed",
                "orbit_radius",
                "orbit_elevation_deg",
                "fov_deg",
                "opacity",
            )
            if k in raw
        }
        if "light_dir" in raw:
            kwargs["light_dir"] = np.array(raw["light_dir"])
        if "background" in raw:
            kwargs["background"] = np.array(raw["background"])
        return SceneSpec(shapes, raw["counts"], materials, **kwargs)


def _sphere_points(center, radius, count):
    i = np.arange(count)
    z = 1.0 - 2.0 * (i + 0.5) / count
    phi = i * _GOLDEN_ANGLE
    s = np.sqrt(1.0 - z * z)
    normals = np.stack([s * np.cos(phi), s * np.sin(phi), z], 1)
    spacing = np.sqrt(4.0 * np.pi * radius**2 / count)
    return center + radius * normals, normals, spacing


def _box_points(center, half, count, rng):
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    areas = np.repeat(areas, 2)  # -x,+x,-y,+y,-z,+z
    probs = areas / areas.sum()
    faces = rng.choice(6, size=count, p=probs)
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half[None, :]
    normals = np.zeros((count, 3))
    for f in range(6):
        axis, sign = f // 2, 1.0 if f % 2 else -1.0
        sel = faces == f
        pts[sel, axis] = sign * half[axis]
        normals[sel, axis] = sign
    spacing = np.sqrt(4.0 * areas.sum() / count)
    return center + pts, normals, spacing


def synth_scene(spec: SceneSpec) -> Scene:
    """Build a synthetic scene whose pixels are rendered by the engine itself."""
    if not spec.shapes or not spec.counts:
        raise ConfigError("scene spec needs at least one shape")
    if len(spec.shapes) != len(spec.counts) or len(spec.shapes) != len(spec.materials):
        raise ConfigError("shapes, counts, and materials must align")
    if any(c < 1 for c in spec.counts):
        raise ConfigError("shape counts must be >= 1")
    if spec.image_size < TILE_SIZE:
        raise ConfigError(f"image_size must be at least the tile size ({TILE_SIZE})")
    if spec.n_views < 1 and spec.cameras is None:
        raise ConfigError("need at least one view")

    rng = np.random.default_rng(spec.rng_seed)
    gaussians: list[Gaussian3D] = []
    materials: list[OracleMaterial] = []
    normal_rows = []
    for obj_id, (shape, count, mat) in enumerate(
        zip(spec.shapes, spec.counts, spec.materials)
    ):
        if shape.kind == "sphere":
            pts, normals, spacing = _sphere_points(shape.center, shape.size[0], count)
        else:
            pts, normals, spacing = _box_points(shape.center, shape.size, count, rng)
        sigma = 0.6 * spacing
        for p in pts:
            gaussians.append(
                Gaussian3D(
                    mean=p,
                    rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                    scale=np.full(3, sigma),
                    opacity=spec.opacity,
                )
            )
        normal_rows.append(normals)
        materials.extend(
            OracleMaterial(
                albedo=mat.albedo,
                specular_strength=mat.specular_strength,
                shininess=mat.shininess,
                light_dir=spec.light_dir,
                object_id=obj_id,
            )
            for _ in range(count)
        )
    normals = np.concatenate(normal_rows)

    if spec.cameras is not None:
        cams = spec.cameras
    else:
        centers = np.stack([s.center for s in spec.shapes])
        sizes = np.array([s.size.max() for s in spec.shapes])
        target = centers.mean(axis=0)
        extent = max(
            float(np.linalg.norm(centers - target, axis=1).max() + sizes.max()), 1e-6
        )
        radius = spec.orbit_radius if spec.orbit_radius > 0 else 3.2 * extent
        focal = 0.5 * spec.image_size / np.tan(0.5 * np.radians(spec.fov_deg))
        elev = np.radians(spec.orbit_elevation_deg)
        cams = []
        for k in range(spec.n_views):
            az = 2.0 * np.pi * k / spec.n_views
            pos = target + radius * np.array(
                [np.cos(az) * np.cos(elev), np.sin(elev), np.sin(az) * np.cos(elev)]
            )
            cams.append(
                Camera.look_at(
                    pos, target, np.array([0.0, 1.0, 0.0]),
                    fx=focal, fy=focal, width=spec.image_size, height=spec.image_size,
                )
            )

    scene = Scene(
        gaussians=gaussians,
        views=[],
        oracle=materials,
        normals=normals,
        background=spec.background,
    )
    scene.views.extend(_render_oracle_views(scene, cams))
    return scene


def _render_oracle_views(scene: Scene, cams: list[Camera]) -> list[ViewImage]:
    p = scene.packed()
    views = []
    for vid, cam in enumerate(cams):
        blend = blend_for_camera(p.means, p.quats, p.scales, p.opacities, cam)
        colors = oracle_colors_for_view(scene, cam)
        img = composite_forward(blend, colors, scene.background)
        views.append(ViewImage(camera=cam, pixels=np.clip(img, 0.0, 1.0), view_id=vid))
    return views


def recolor_oracle(scene: Scene, object_id: int, new_albedo: np.ndarray) -> Scene:
    """Ground-truth recolor: swap one object's albedo and re-render every view."""
    if scene.oracle is None:
        raise ConfigError("scene has no oracle materials")
    if not any(m.object_id == object_id for m in scene.oracle):
        raise ConfigError(f"unknown object_id {object_id}")
    new_albedo = np.asarray(new_albedo, dtype=np.float64)
    materials = [
        OracleMaterial(
            albedo=new_albedo if m.object_id == object_id else m.albedo,
            specular_strength=m.specular_strength,
            shininess=m.shininess,
            light_dir=m.light_dir,
            object_id=m.object_id,
        )
        for m in scene.oracle
    ]
    out = Scene(
        gaussians=scene.gaussians,
        views=[],
        oracle=materials,
        normals=scene.normals,
        background=scene.background,
    )
    out.views.extend(_render_oracle_views(out, [v.camera for v in scene.views]))
    return out


# ---------------------------------------------------------------------------
# VGSC container
# ---------------------------------------------------------------------------

_MAGIC = b"VGSC"
_VERSION = 1


def encode_png(pixels: np.ndarray) -> bytes:
    """uint8 PNG bytes from float pixels in [0, 1] (2D grayscale or HxWx3)."""
    arr = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(data)))
    return arr.astype(np.float64) / 255.0


def save_scene(scene: Scene, path: str | Path) -> None:
    p = scene.packed()
    n = scene.n_gaussians
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", n))
        gtable = np.hstack(
            [p.means, p.quats, p.scales, p.opacities[:, None]]
        ).astype("<f4")
        fh.write(gtable.tobytes())
        fh.write(struct.pack("<I", len(scene.views)))
        for v in scene.views:
            cam = v.camera
            fh.write(struct.pack("<4f2I", cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height))
            fh.write(cam.rotation.astype("<f4").tobytes())
            fh.write(cam.translation.astype("<f4").tobytes())
        for v in scene.views:
            png = encode_png(v.pixels)
            fh.write(struct.pack("<IQ", v.view_id, len(png)))
            fh.write(png)
        has_oracle = scene.oracle is not None and scene.normals is not None
        fh.write(struct.pack("<I", 1 if has_oracle else 0))
        if has_oracle:
            mat = np.zeros((n, 11), dtype="<f4")
            ids = np.zeros(n, dtype="<i4")
            for i, m in enumerate(scene.oracle):
                mat[i, 0:3] = m.albedo
                mat[i, 3] = m.specular_strength
                mat[i, 4] = m.shininess
                mat[i, 5:8] = m.light_dir
                mat[i, 8:11] = scene.normals[i]
                ids[i] = m.object_id
            fh.write(mat.tobytes())
            fh.write(ids.tobytes())
        fh.write(scene.background.astype("<f4").tobytes())


def load_scene(path: str | Path) -> Scene:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ConfigError(f"not a scene container: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ConfigError(f"unsupported scene container version {version}")
        (n,) = struct.unpack("<I", fh.read(4))
        gtable = np.frombuffer(fh.read(n * 11 * 4), dtype="<f4").reshape(n, 11)
        gaussians = []
        for row in gtable.astype(np.float64):
            quat = row[3:7]
            gaussians.append(
                Gaussian3D(
                    mean=row[0:3],
                    rotation=quat / np.linalg.norm(quat),
                    scale=row[7:10],
                    opacity=float(row[10]),
                )
            )
        (n_views,) = struct.unpack("<I", fh.read(4))
        cams = []
        for _ in range(n_views):
            fx, fy, cx, cy, w, h = struct.unpack("<4f2I", fh.read(24))
            rot = np.frombuffer(fh.read(36), dtype="<f4").reshape(3, 3).astype(np.float64)
            # re-orthonormalize after the f32 round trip
            u, _, vt = np.linalg.svd(rot)
            rot = u @ vt
            tr = np.frombuffer(fh.read(12), dtype="<f4").astype(np.float64)
            cams.append(Camera(fx, fy, cx, cy, w, h, rot, tr))
        views = []
        for _ in range(n_views):
            vid, png_len = struct.unpack("<IQ", fh.read(12))
            pixels = decode_png(fh.read(png_len))
            views.append(ViewImage(camera=cams[vid], pixels=pixels, view_id=vid))
        (has_oracle,) = struct.unpack("<I", fh.read(4))
        oracle = None
        normals = None
        if has_oracle:
            mat = np.frombuffer(fh.read(n * 11 * 4), dtype="<f4").reshape(n, 11).astype(np.float64)
            ids = np.frombuffer(fh.read(n * 4), dtype="<i4")
            oracle = []
            normals = np.zeros((n, 3))
            for i in range(n):
                light = mat[i, 5:8]
                oracle.append(
                    OracleMaterial(
                        albedo=np.clip(mat[i, 0:3], 0.0, 1.0),
                        specular_strength=float(mat[i, 3]),
                        shininess=float(mat[i, 4]),
                        light_dir=light / np.linalg.norm(light),
                        object_id=int(ids[i]),
                    )
                )
                normals[i] = mat[i, 8:11]
        background = np.frombuffer(fh.read(12), dtype="<f4").astype(np.float64)
    return Scene(
        gaussians=gaussians,
        views=views,
        oracle=oracle,
        normals=normals,
        background=background,
    )
