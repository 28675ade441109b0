"""Synthetic calibrated scenes with exact ground truth.

Each template is a list of bounded world planes. Rendering is analytic:
a pixel's depth is the nearest positive ray-plane intersection, its
intensity comes from a smooth value-noise texture evaluated in the
plane's own coordinate frame (or a constant for textureless regions),
and ground-truth depth/normal maps fall out exactly. Images are
quantized to 8 bits at synthesis time so an in-memory scene is
bit-identical to one written to disk and loaded back.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import mix64_array
from .fusion import PointCloud, write_ply
from .geometry import CameraModel, save_camera
from .imaging import (ScalarField, VectorField, save_image_gray,
                      write_scalar_field, write_vector_field)
from .scene import Scene, View

__all__ = [
    "TEMPLATES",
    "SynthSpec",
    "PlanePatch",
    "SynthScene",
    "template_planes",
    "synthesize",
    "ground_truth_cloud",
    "write_scene",
]

TEMPLATES = ("textured-plane", "two-plane-lowtex", "box-room")

TEXTURELESS_GRAY = 0.5

# Texture octaves: cell size in pixels at the scene's median depth, and
# amplitude. Cells are large enough that bilinear resampling of the
# rendered texture stays well under one 8-bit gray level of error at any
# output resolution.
_OCTAVES_PX = ((48.0, 0.24), (18.0, 0.16), (8.0, 0.10))
_BASE_GRAY = 0.5

_HX = np.uint64(0x9E3779B97F4A7C15)
_HY = np.uint64(0xC2B2AE3D27D4EB4F)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for one synthetic scene."""

    template: str = "textured-plane"
    n_views: int = 3
    width: int = 640
    height: int = 480
    seed: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(
                f"unknown template {self.template!r}; choose from {TEMPLATES}")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.width < 8 or self.height < 8:
            raise ValueError("image size too small")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass(frozen=True)
class PlanePatch:
    """A bounded textured plane in world space.

    Bounds are intervals on world x/y/z of the intersection point; None
    leaves that axis unbounded. `textured` False renders the constant
    gray used for low-texture regions.
    """

    point: tuple
    normal: tuple
    x_range: tuple = None
    y_range: tuple = None
    z_range: tuple = None
    textured: bool = True
    tex_seed: int = 0
    # Optional world-space (x0, x1, y0, y1) rectangle rendered without
    # texture even on an otherwise textured plane.
    lowtex_rect: tuple = None

    def unit_normal(self):
        n = np.asarray(self.normal, dtype=np.float64)
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class SynthScene:
    """A rendered scene plus its exact ground truth."""

    spec: SynthSpec
    scene: Scene
    gt_depth: list          # ScalarField per view (camera z-depth)
    gt_normal: list         # VectorField per view (camera frame, facing)
    lowtex_mask: list       # bool (H, W) per view: textureless surface
    planes: list


def template_planes(template: str, seed: int = 0) -> list:
    """World geometry for a template, with per-plane texture seeds."""
    if template == "textured-plane":
        return [
            PlanePatch(point=(0.0, 0.0, 3.0), normal=(0.3, 0.15, -1.0),
                       tex_seed=seed * 8 + 1),
        ]
    if template == "two-plane-lowtex":
        # A shallow vertical crease at x = 0. The low-texture rectangle
        # sits on the right plane, framed by textured bands that give the
        # planar prior credible anchors on the same surface.
        return [
            PlanePatch(point=(0.0, 0.0, 3.0), normal=(0.45, 0.0, -1.0),
                       x_range=(None, 0.0), tex_seed=seed * 8 + 1),
            PlanePatch(point=(0.0, 0.0, 3.0), normal=(-0.3, 0.0, -1.0),
                       x_range=(0.0, None), tex_seed=seed * 8 + 2,
                       lowtex_rect=(0.55, 2.5, -0.75, 0.75)),
        ]
    if template == "box-room":
        z0, hx, hy = 4.6, 1.5, 1.1
        zr = (0.4, z0)
        return [
            PlanePatch(point=(0.0, 0.0, z0), normal=(0.0, 0.0, -1.0),
                       x_range=(-hx, hx), y_range=(-hy, hy),
                       tex_seed=seed * 8 + 1),
            PlanePatch(point=(-hx, 0.0, 0.0), normal=(1.0, 0.0, 0.0),
                       y_range=(-hy, hy), z_range=zr, textured=False),
            PlanePatch(point=(hx, 0.0, 0.0), normal=(-1.0, 0.0, 0.0),
                       y_range=(-hy, hy), z_range=zr, tex_seed=seed * 8 + 3),
            PlanePatch(point=(0.0, hy, 0.0), normal=(0.0, -1.0, 0.0),
                       x_range=(-hx, hx), z_range=zr, tex_seed=seed * 8 + 4),
            PlanePatch(point=(0.0, -hy, 0.0), normal=(0.0, 1.0, 0.0),
                       x_range=(-hx, hx), z_range=zr, textured=False),
        ]
    raise ValueError(f"unknown template {template!r}")


def _lattice(ix, iy, seed):
    """Uniform [0,1) value per integer lattice corner."""
    h = (ix.astype(np.int64).astype(np.uint64) * _HX
         ^ iy.astype(np.int64).astype(np.uint64) * _HY
         ^ np.uint64(np.int64(seed)))
    return (mix64_array(h) >> np.uint64(11)).astype(np.float64) / 2.0 ** 53


def _value_noise(u, v, cell, seed):
    """Smoothstep-interpolated lattice noise in [0,1)."""
    gu, gv = u / cell, v / cell
    iu, iv = np.floor(gu), np.floor(gv)
    fu, fv = gu - iu, gv - iv
    su = fu * fu * (3.0 - 2.0 * fu)
    sv = fv * fv * (3.0 - 2.0 * fv)
    c00 = _lattice(iu, iv, seed)
    c10 = _lattice(iu + 1, iv, seed)
    c01 = _lattice(iu, iv + 1, seed)
    c11 = _lattice(iu + 1, iv + 1, seed)
    top = c00 * (1.0 - su) + c10 * su
    bot = c01 * (1.0 - su) + c11 * su
    return top * (1.0 - sv) + bot * sv


def _texture(u, v, cells, seed):
    out = np.full(u.shape, _BASE_GRAY)
    for k, (cell, (_, amp)) in enumerate(zip(cells, _OCTAVES_PX)):
        out += amp * (2.0 * _value_noise(u, v, cell, seed + 977 * k) - 1.0)
    return np.clip(out, 0.02, 0.98)


def _plane_basis(n):
    """Deterministic orthonormal in-plane axes for texture coordinates."""
    a = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e_u = np.cross(n, a)
    e_u /= np.linalg.norm(e_u)
    e_v = np.cross(n, e_u)
    return e_u, e_v


def _in_range(vals, rng):
    ok = np.ones(vals.shape, dtype=bool)
    if rng is None:
        return ok
    lo, hi = rng
    if lo is not None:
        ok &= vals >= lo
    if hi is not None:
        ok &= vals <= hi
    return ok


def _camera_rig(template, n_views, width, height, dmin, dmax):
    f = 0.8 * width
    K = np.array([[f, 0.0, (width - 1) / 2.0],
                  [0.0, f, (height - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    step = 0.33 if template != "box-room" else 0.12
    cams = []
    for i in range(n_views):
        # 0, -1, +1, -2, +2, ... baselines along x.
        k = (i + 1) // 2 * (-1 if i % 2 else 1)
        t = np.array([step * k, 0.0, 0.0])
        cams.append(CameraModel(intrinsics=K, rotation=np.eye(3),
                                translation=t, depth_range=(dmin, dmax),
                                width=width, height=height))
    return cams


def _render_view(camera, planes, noise_sigma, noise_key, cells=None):
    h, w = camera.height, camera.width
    Kinv = np.linalg.inv(camera.intrinsics)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    mx = Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2]
    my = Kinv[1, 1] * ys + Kinv[1, 2]
    dirs_cam = np.stack([mx, my, np.ones_like(mx)], axis=-1)
    dirs_world = dirs_cam @ camera.rotation  # row-vector form of R^T d
    C = camera.center

    t_buf = np.full((h, w), np.inf)
    which = np.full((h, w), -1, dtype=np.int64)
    for pi, p in enumerate(planes):
        n = p.unit_normal()
        denom = dirs_world @ n
        p0 = np.asarray(p.point, dtype=np.float64)
        num = float(n @ (p0 - C))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        hit = np.isfinite(t) & (t > 1e-9)
        X = C + t[..., None] * dirs_world
        hit &= _in_range(X[..., 0], p.x_range)
        hit &= _in_range(X[..., 1], p.y_range)
        hit &= _in_range(X[..., 2], p.z_range)
        hit &= t < t_buf
        t_buf[hit] = t[hit]
        which[hit] = pi

    valid = which >= 0
    depth = np.where(valid, t_buf, 0.0)
    image = np.full((h, w), TEXTURELESS_GRAY)
    normal_cam = np.zeros((h, w, 3))
    lowtex = np.zeros((h, w), dtype=bool)
    X = C + t_buf[..., None] * dirs_world
    for pi, p in enumerate(planes):
        sel = which == pi
        if not sel.any():
            continue
        n = p.unit_normal()
        textured = np.zeros((h, w), dtype=bool)
        if p.textured and cells is not None:
            e_u, e_v = _plane_basis(n)
            rel = X - np.asarray(p.point, dtype=np.float64)
            u, v = rel @ e_u, rel @ e_v
            tex = _texture(u[sel], v[sel], cells, p.tex_seed)
            textured[sel] = True
            if p.lowtex_rect is not None:
                x0, x1, y0, y1 = p.lowtex_rect
                rect = ((X[..., 0] >= x0) & (X[..., 0] <= x1)
                        & (X[..., 1] >= y0) & (X[..., 1] <= y1))
                textured &= ~rect
            image[sel & textured] = tex[(textured[sel])]
        lowtex |= sel & ~textured
        # Camera-facing orientation: the normal must point from the
        # plane toward the camera center.
        p0 = np.asarray(p.point, dtype=np.float64)
        n_face = n if float(n @ (C - p0)) > 0 else -n
        normal_cam[sel] = camera.rotation @ n_face
    if noise_sigma > 0:
        key = np.int64(noise_key).astype(np.uint64)
        flat = np.arange(h * w, dtype=np.uint64) + key * np.uint64(1 << 32)
        u1 = (mix64_array(flat * np.uint64(2)) >> np.uint64(11)) / 2.0 ** 53
        u2 = (mix64_array(flat * np.uint64(2) + np.uint64(1)) >> np.uint64(11)) / 2.0 ** 53
        g = np.sqrt(-2.0 * np.log(u1 + 1e-300)) * np.cos(2 * np.pi * u2)
        image = image + noise_sigma * g.reshape(h, w)
    image = np.clip(image, 0.0, 1.0)
    # Quantize exactly as an 8-bit file round-trip would.
    image = (np.round(image * 255.0).astype(np.float32)) / 255.0
    return image, depth, normal_cam, valid, lowtex


def synthesize(spec: SynthSpec) -> SynthScene:
    planes = template_planes(spec.template, spec.seed)
    probe = _camera_rig(spec.template, 1, spec.width, spec.height, 0.1, 100.0)[0]
    _, d0, _, v0, _ = _render_view(probe, planes, 0.0, 0)
    lo, hi = float(d0[v0].min()), float(d0[v0].max())
    dmin, dmax = max(0.05, 0.5 * lo), 1.6 * hi
    # Octave cell sizes in world units, chosen so the texture has the
    # same pixel-space frequency content at any output resolution.
    z_med = float(np.median(d0[v0]))
    focal = probe.intrinsics[0, 0]
    cells = tuple(px * z_med / focal for px, _ in _OCTAVES_PX)
    cams = _camera_rig(spec.template, spec.n_views, spec.width, spec.height,
                       dmin, dmax)
    views, depths, normals, masks = [], [], [], []
    for i, cam in enumerate(cams):
        img, depth, normal, valid, lowtex = _render_view(
            cam, planes, spec.noise, spec.seed * 64 + i, cells=cells)
        views.append(View(name=f"view{i:02d}", camera=cam,
                          image=img.astype(np.float32)))
        depths.append(ScalarField(values=depth, valid=valid))
        normals.append(VectorField(values=np.where(valid[..., None], normal,
                                                   [0.0, 0.0, -1.0]),
                                   valid=valid))
        masks.append(lowtex)
    return SynthScene(spec=spec, scene=Scene(views=tuple(views)),
                      gt_depth=depths, gt_normal=normals,
                      lowtex_mask=masks, planes=planes)


def ground_truth_cloud(result: SynthScene, stride: int = 2,
                       lowtex_only: bool = False) -> PointCloud:
    """World points and normals back-projected from every view's exact
    depth map."""
    pts, nrms = [], []
    for view, dep, nor, mask in zip(result.scene.views, result.gt_depth,
                                    result.gt_normal, result.lowtex_mask):
        cam = view.camera
        Kinv = np.linalg.inv(cam.intrinsics)
        ys, xs = np.mgrid[0:cam.height:stride, 0:cam.width:stride]
        sel = dep.valid[::stride, ::stride]
        if lowtex_only:
            sel = sel & mask[::stride, ::stride]
        if not sel.any():
            continue
        mxy = np.stack([Kinv[0, 0] * xs + Kinv[0, 2],
                        Kinv[1, 1] * ys + Kinv[1, 2],
                        np.ones_like(xs, dtype=np.float64)], axis=-1)
        X = mxy[sel] * dep.values[::stride, ::stride][sel][:, None]
        pts.append(cam.to_world(X))
        nrms.append(nor.values[::stride, ::stride][sel] @ cam.rotation)
    if not pts:
        return PointCloud(points=np.zeros((0, 3)), normals=np.zeros((0, 3)))
    return PointCloud(points=np.concatenate(pts),
                      normals=np.concatenate(nrms))


def write_scene(result: SynthScene, out_dir) -> None:
    """Scene directory layout: images/, cams/, gt/, and a manifest."""
    from pathlib import Path

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "cams").mkdir(exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    for view, dep, nor, mask in zip(result.scene.views, result.gt_depth,
                                    result.gt_normal, result.lowtex_mask):
        save_image_gray(out / "images" / f"{view.name}.png", view.image)
        save_camera(out / "cams" / f"cam_{view.name}.txt", view.camera)
        write_scalar_field(out / "gt" / f"depth_{view.name}.pfm", dep)
        write_vector_field(out / "gt" / f"normal_{view.name}.pfm", nor)
        save_image_gray(out / "gt" / f"mask_{view.name}.png",
                        mask.astype(np.float64))
    write_ply(out / "gt" / "cloud.ply", ground_truth_cloud(result))
    spec = result.spec
    lines = [f"template={spec.template}", f"n_views={spec.n_views}",
             f"width={spec.width}", f"height={spec.height}",
             f"seed={spec.seed}", f"noise={repr(float(spec.noise))}"]
    (out / "scene.txt").write_text("\n".join(lines) + "\n")
