"""Depth-map fusion into a point cloud, metrics, and PLY input/output.

Fusion walks every view's valid pixels in row-major order. A pixel seeds
a point when enough other views agree with it (forward-backward
reprojection, relative depth, and normal-angle checks); the emitted
point averages the seed with its supporters, and all consumed pixels are
marked visited so no observation is used twice. Agreement tests are
precomputed per view pair; the visited bookkeeping runs in a sequential
compiled loop, so results do not depend on thread count.
"""

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, FormatError
from .geometry import relative_pose
from .scene import Scene

__all__ = [
    "PointCloud",
    "FusionConfig",
    "fuse",
    "evaluate",
    "write_ply",
    "read_ply",
]


@dataclass(frozen=True)
class PointCloud:
    """World-frame points with unit normals and optional 8-bit colors."""

    points: np.ndarray            # (N, 3) float64
    normals: np.ndarray           # (N, 3) float64
    colors: np.ndarray = None     # (N, 3) uint8 or None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        if len(pts) != len(nrm):
            raise ValueError("points and normals must have equal length")
        if len(nrm) and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-4:
            raise ValueError("normals must be unit length")
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(col) != len(pts):
                raise ValueError("colors must match point count")
            object.__setattr__(self, "colors", col)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class FusionConfig:
    min_consistent: int = 2
    max_reproj: float = 2.0            # px
    max_rel_depth_diff: float = 0.01
    max_normal_angle: float = 30.0     # degrees

    def __post_init__(self):
        if self.min_consistent < 1:
            raise ValueError("min_consistent must be >= 1")
        if (self.max_reproj <= 0 or self.max_rel_depth_diff <= 0
                or self.max_normal_angle <= 0):
            raise ValueError("fusion thresholds must be positive")


def _pixel_rays(camera):
    Kinv = np.linalg.inv(camera.intrinsics)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    mx = Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2]
    my = Kinv[1, 1] * ys + Kinv[1, 2]
    return np.stack([mx, my, np.ones_like(mx)], axis=-1)


def _pair_agreement(scene, maps, world_pts, world_nrm, i, j, cfg):
    """Vectorized agreement of every pixel of view i against view j.

    Returns (agree, supporter_flat_index) over flattened view-i pixels.
    """
    cam_i, cam_j = scene[i].camera, scene[j].camera
    hw = cam_i.height * cam_i.width
    agree = np.zeros(hw, dtype=np.bool_)
    sup = np.zeros(hw, dtype=np.int64)
    mi = maps[i]
    mj = maps[j]
    ok = mi.valid.ravel().copy()
    if not ok.any():
        return agree, sup
    R_rel, t_rel = relative_pose(cam_i, cam_j)
    X = _pixel_rays(cam_i).reshape(-1, 3) * mi.depth.reshape(-1, 1)
    q = X @ R_rel.T + t_rel
    d_proj = q[:, 2]
    ok &= d_proj > 1e-9
    uv = (q @ cam_j.intrinsics.T)[:, :2] / np.where(ok, d_proj, 1.0)[:, None]
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    ok &= (u >= 0) & (u < cam_j.width) & (v >= 0) & (v < cam_j.height)
    u, v = np.where(ok, u, 0), np.where(ok, v, 0)
    flat_j = v * cam_j.width + u
    ok &= mj.valid.ravel()[flat_j]
    d_look = mj.depth.reshape(-1)[flat_j]
    ok &= np.abs(d_proj - d_look) <= cfg.max_rel_depth_diff * np.abs(d_look)
    # Forward-backward reprojection error against view j's surface.
    Xj = world_pts[j].reshape(-1, 3)[flat_j]
    back = cam_i.to_camera(Xj)
    bz = back[:, 2]
    ok &= bz > 1e-9
    buv = (back @ cam_i.intrinsics.T)[:, :2] / np.where(ok, bz, 1.0)[:, None]
    gy, gx = np.divmod(np.arange(hw), cam_i.width)
    err = np.hypot(buv[:, 0] - gx, buv[:, 1] - gy)
    ok &= err <= cfg.max_reproj
    cosang = (world_nrm[i].reshape(-1, 3)
              * world_nrm[j].reshape(-1, 3)[flat_j]).sum(axis=1)
    ok &= cosang >= math.cos(math.radians(cfg.max_normal_angle))
    agree[ok] = True
    sup[ok] = flat_j[ok]
    return agree, sup


@njit(cache=True)
def _consume(seed_ok, agree, supflat, supworld, supnormal, seed_world,
             seed_normal, visited, view_index, min_consistent,
             out_pts, out_nrm, out_src):
    """Row-major sequential seed scan with visited-marking; returns the
    number of emitted points."""
    hw = seed_ok.shape[0]
    npairs = agree.shape[0]
    nout = 0
    used_j = np.empty(npairs, np.int64)
    used_f = np.empty(npairs, np.int64)
    for s in range(hw):
        if not seed_ok[s] or visited[view_index, s]:
            continue
        count = 1
        px = seed_world[s, 0]
        py = seed_world[s, 1]
        pz = seed_world[s, 2]
        nx = seed_normal[s, 0]
        ny = seed_normal[s, 1]
        nz = seed_normal[s, 2]
        nused = 0
        for p in range(npairs):
            if not agree[p, s]:
                continue
            j = supflat[p, s, 0]
            f = supflat[p, s, 1]
            if visited[j, f]:
                continue
            count += 1
            px += supworld[p, s, 0]
            py += supworld[p, s, 1]
            pz += supworld[p, s, 2]
            nx += supnormal[p, s, 0]
            ny += supnormal[p, s, 1]
            nz += supnormal[p, s, 2]
            used_j[nused] = j
            used_f[nused] = f
            nused += 1
        if count < min_consistent:
            continue
        norm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if norm < 1e-12:
            continue
        out_pts[nout, 0] = px / count
        out_pts[nout, 1] = py / count
        out_pts[nout, 2] = pz / count
        out_nrm[nout, 0] = nx / norm
        out_nrm[nout, 1] = ny / norm
        out_nrm[nout, 2] = nz / norm
        out_src[nout] = s
        nout += 1
        visited[view_index, s] = True
        for k in range(nused):
            visited[used_j[k], used_f[k]] = True
    return nout


def fuse(scene: Scene, depth_maps, cfg: FusionConfig = None) -> PointCloud:
    """Fuse per-view depth/normal maps into a consistency-checked cloud."""
    if cfg is None:
        cfg = FusionConfig()
    nviews = len(scene)
    if len(depth_maps) != nviews:
        raise ValueError("need one depth map per view")
    world_pts = []
    world_nrm = []
    for v, m in zip(scene.views, depth_maps):
        X = _pixel_rays(v.camera) * m.depth[..., None]
        world_pts.append(v.camera.to_world(X.reshape(-1, 3)).reshape(X.shape))
        world_nrm.append(m.normal @ v.camera.rotation)
    hw_max = max(v.camera.height * v.camera.width for v in scene.views)
    visited = np.zeros((nviews, hw_max), dtype=np.bool_)
    pts_out, nrm_out, col_out = [], [], []
    for i in range(nviews):
        cam = scene[i].camera
        hw = cam.height * cam.width
        others = [j for j in range(nviews) if j != i]
        agree = np.zeros((len(others), hw), dtype=np.bool_)
        supflat = np.zeros((len(others), hw, 2), dtype=np.int64)
        supworld = np.zeros((len(others), hw, 3))
        supnormal = np.zeros((len(others), hw, 3))
        for p, j in enumerate(others):
            a, f = _pair_agreement(scene, depth_maps, world_pts, world_nrm,
                                   i, j, cfg)
            agree[p] = a
            supflat[p, :, 0] = j
            supflat[p, :, 1] = f
            supworld[p] = world_pts[j].reshape(-1, 3)[f]
            supnormal[p] = world_nrm[j].reshape(-1, 3)[f]
        out_pts = np.empty((hw, 3))
        out_nrm = np.empty((hw, 3))
        out_src = np.empty(hw, dtype=np.int64)
        n = _consume(depth_maps[i].valid.ravel(), agree, supflat, supworld,
                     supnormal, world_pts[i].reshape(-1, 3),
                     world_nrm[i].reshape(-1, 3), visited, i,
                     cfg.min_consistent, out_pts, out_nrm, out_src)
        pts_out.append(out_pts[:n].copy())
        nrm_out.append(out_nrm[:n].copy())
        gray = np.clip(scene[i].image.reshape(-1)[out_src[:n]] * 255.0,
                       0, 255).astype(np.uint8)
        col_out.append(np.repeat(gray[:, None], 3, axis=1))
    points = np.concatenate(pts_out) if pts_out else np.zeros((0, 3))
    normals = np.concatenate(nrm_out) if nrm_out else np.zeros((0, 3))
    colors = np.concatenate(col_out) if col_out else np.zeros((0, 3), np.uint8)
    return PointCloud(points=points, normals=normals, colors=colors)


def evaluate(reconstructed: PointCloud, ground_truth: PointCloud,
             thresholds) -> list:
    """Per-threshold (accuracy %, completeness %, F1 %) via exact
    nearest-neighbor distances."""
    if len(reconstructed) == 0:
        raise EmptyCloudError("reconstructed cloud is empty")
    if len(ground_truth) == 0:
        raise EmptyCloudError("ground-truth cloud is empty")
    d_rec, _ = cKDTree(ground_truth.points).query(reconstructed.points)
    d_gt, _ = cKDTree(reconstructed.points).query(ground_truth.points)
    rows = []
    for t in thresholds:
        acc = 100.0 * float((d_rec <= t).mean())
        comp = 100.0 * float((d_gt <= t).mean())
        f1 = 0.0 if acc + comp == 0 else 2.0 * acc * comp / (acc + comp)
        rows.append((acc, comp, f1))
    return rows


# ---------------------------------------------------------------------------
# PLY input/output


def write_ply(path, cloud: PointCloud, ascii_format: bool = False) -> None:
    """Vertices with positions and normals, plus colors when present.
    Binary little-endian by default; ASCII behind the flag for diffing."""
    path = Path(path)
    n = len(cloud)
    has_color = cloud.colors is not None
    fmt = "ascii" if ascii_format else "binary_little_endian"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property float {f}" for f in ("x", "y", "z", "nx", "ny", "nz")]
    if has_color:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header.append("end_header")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
              ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    if has_color:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.zeros(n, dtype=fields)
    for k, name in enumerate(("x", "y", "z")):
        rec[name] = cloud.points[:, k]
        rec["n" + name] = cloud.normals[:, k]
    if has_color:
        for k, name in enumerate(("red", "green", "blue")):
            rec[name] = cloud.colors[:, k]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if ascii_format:
            cols = [rec[name[0]] for name in fields]
            widths = ["%.9g"] * 6 + (["%d"] * 3 if has_color else [])
            body = "\n".join(
                " ".join(w % c[i] for w, c in zip(widths, cols))
                for i in range(n))
            fh.write((body + ("\n" if n else "")).encode("ascii"))
        else:
            fh.write(rec.tobytes())


_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8",
              "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4"}


def read_ply(path) -> PointCloud:
    """Read a vertex-only PLY (binary little-endian or ASCII)."""
    path = Path(path)
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(path, 1, "not a PLY file")
    header_lines = data[:end].decode("ascii", "replace").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt = None
    count = None
    props = []
    in_vertex = False
    for lineno, line in enumerate(header_lines, start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError(path, lineno, "list properties unsupported")
            if tok[1] not in _PLY_TYPES:
                raise FormatError(path, lineno, f"unsupported type {tok[1]}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt not in ("binary_little_endian", "ascii"):
        raise FormatError(path, 2, f"unsupported format {fmt}")
    if count is None:
        raise FormatError(path, 1, "no vertex element")
    names = [p[0] for p in props]
    for need in ("x", "y", "z", "nx", "ny", "nz"):
        if need not in names:
            raise FormatError(path, 1, f"missing vertex property {need}")
    if fmt == "binary_little_endian":
        rec = np.frombuffer(body, dtype=props, count=count)
    else:
        text = body.decode("ascii", "replace").split()
        ncol = len(props)
        if len(text) < count * ncol:
            raise FormatError(path, 1, "truncated ASCII vertex data")
        arr = np.array(text[: count * ncol], dtype=np.float64)
        arr = arr.reshape(count, ncol)
        rec = np.zeros(count, dtype=props)
        for k, (name, _) in enumerate(props):
            rec[name] = arr[:, k]
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    normals = np.column_stack([rec["nx"], rec["ny"], rec["nz"]]).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.column_stack([rec["red"], rec["green"],
                                  rec["blue"]]).astype(np.uint8)
    nn = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(nn > 0, nn, 1.0)[:, None]
    return PointCloud(points=points, normals=normals, colors=colors)
