"""Planar prior construction from credible hypotheses.

Low-cost pixels of a depth map are treated as trustworthy samples of the
scene's surfaces. Their pixel positions are Delaunay-triangulated; every
pixel inside a triangle inherits the least-norm plane through the
triangle's three lifted vertices, pixels outside the hull fall back to a
plane through nearby credible points (nearest-first, skipping collinear
triples), and all prior depths are filtered by the camera's working
depth range. The result biases later propagation toward the recovered
planes without ever overruling photometric evidence outright.
"""

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from . import _kernels
from .errors import DegenerateInputError, DegenerateSupportError
from .geometry import CameraModel, Hypothesis, PlaneParams
from .imaging import ScalarField, VectorField, save_image_gray, write_scalar_field, write_vector_field

__all__ = [
    "PROV_NONE",
    "PROV_TRIANGULATED",
    "PROV_KNN",
    "MIN_TRIANGLE_AREA",
    "PriorConfig",
    "CredibleSet",
    "PlanarPriorModel",
    "credible_points",
    "collect_credible",
    "triangulate",
    "heron_area",
    "knn_support",
    "fit_plane",
    "build_prior_model",
    "prior_assisted_cost",
    "dump_prior_model",
]

PROV_NONE = 0
PROV_TRIANGULATED = 1
PROV_KNN = 2

MIN_TRIANGLE_AREA = 0.5   # px^2: reject nearly collinear support triples
_SUBSAMPLE_LIMIT = 500_000
_RANK_EPS = 1e-9          # relative singular-value cutoff for plane fits
_DENOM_EPS = 1e-12


@dataclass(frozen=True)
class PriorConfig:
    """Credibility threshold, neighbor count, and the constants of the
    prior-assisted cost. Defaults follow the published {0.1, 6}."""

    tau_cred: float = 0.1
    k: int = 6
    eta: float = 0.2
    gamma: float = 0.1
    sigma_d: float = 0.02
    sigma_n: float = 0.25

    def __post_init__(self):
        if self.tau_cred <= 0:
            raise ValueError("tau_cred must be positive")
        if self.k < 3:
            raise ValueError("k must be >= 3")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.gamma <= 0 or self.sigma_d <= 0 or self.sigma_n <= 0:
            raise ValueError("gamma and sigmas must be positive")


@dataclass(frozen=True)
class CredibleSet:
    """Credible pixels in row-major order with their hypotheses."""

    pixels: np.ndarray    # (N, 2) int64, (x, y)
    depths: np.ndarray    # (N,)
    normals: np.ndarray   # (N, 3)

    def __len__(self):
        return len(self.pixels)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.pixels.astype(np.float64))


@dataclass
class PlanarPriorModel:
    """Per-pixel prior plane hypotheses with validity and provenance."""

    depth: np.ndarray        # (H, W)
    normal: np.ndarray       # (H, W, 3)
    valid: np.ndarray        # (H, W) bool
    provenance: np.ndarray   # (H, W) uint8

    @property
    def coverage(self) -> float:
        return float(self.valid.mean())

    @classmethod
    def empty(cls, shape) -> "PlanarPriorModel":
        h, w = shape
        return cls(depth=np.zeros((h, w)), normal=np.zeros((h, w, 3)),
                   valid=np.zeros((h, w), dtype=bool),
                   provenance=np.zeros((h, w), dtype=np.uint8))


def collect_credible(dnmap, cfg: PriorConfig) -> CredibleSet:
    """Pixels whose stored cost clears the credibility threshold, in
    row-major order."""
    mask = dnmap.valid & (dnmap.cost < cfg.tau_cred)
    ys, xs = np.nonzero(mask)
    pixels = np.column_stack([xs, ys]).astype(np.int64)
    return CredibleSet(pixels=pixels, depths=dnmap.depth[ys, xs].copy(),
                       normals=dnmap.normal[ys, xs].copy())


def credible_points(dnmap, cfg: PriorConfig) -> list:
    """As `collect_credible`, but as a list of ((x, y), Hypothesis)."""
    cred = collect_credible(dnmap, cfg)
    return [((int(x), int(y)),
             Hypothesis(depth=float(d), normal=n.copy()))
            for (x, y), d, n in zip(cred.pixels, cred.depths, cred.normals)]


def triangulate(points) -> np.ndarray:
    """Delaunay triangulation of 2D pixel positions; returns a (T, 3)
    array of vertex indices."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (N, 2)")
    if len(pts) < 3:
        raise DegenerateInputError(
            f"triangulation needs >= 3 points, got {len(pts)}")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateInputError(f"degenerate point set: {exc}") from exc
    if tri.simplices.size == 0:
        raise DegenerateInputError("all points collinear")
    return tri.simplices.copy()


def heron_area(p0, p1, p2) -> float:
    a = math.dist(p0, p1)
    b = math.dist(p1, p2)
    c = math.dist(p2, p0)
    s = (a + b + c) / 2.0
    return math.sqrt(max(s * (s - a) * (s - b) * (s - c), 0.0))


def _nearest_order(credible: CredibleSet, pixel, k: int) -> np.ndarray:
    """Indices of the k nearest credible points, distance ties broken by
    row-major position. Widens the KD query until the cut is tie-free."""
    n = len(credible)
    q = np.asarray(pixel, dtype=np.float64)
    kq = min(n, k + 8)
    while True:
        _, idx = credible.tree.query(q, k=kq)
        idx = np.atleast_1d(idx)
        diff = credible.pixels[idx] - np.asarray(pixel, dtype=np.int64)
        d2 = (diff * diff).sum(axis=1)
        order = np.lexsort((idx, d2))
        idx, d2 = idx[order], d2[order]
        if kq >= n or d2[min(k, kq) - 1] < d2[-1]:
            return idx[:k]
        kq = min(n, kq * 2)


def knn_support(pixel, credible: CredibleSet, k: int = 6):
    """First non-collinear triple among the k nearest credible points,
    scanning 3-combinations in distance order; indices into the set, or
    None when no triple clears the area guard."""
    if len(credible) < 3:
        return None
    order = _nearest_order(credible, pixel, k)
    pts = credible.pixels
    for i, j, l in itertools.combinations(order, 3):
        if heron_area(pts[i], pts[j], pts[l]) > MIN_TRIANGLE_AREA:
            return np.array([i, j, l])
    return None


def fit_plane(points3d) -> PlaneParams:
    """Least-norm plane through three camera-frame points: the unit
    4-vector minimizing |A z| over the homogeneous point matrix A,
    sign-fixed so the normal faces the camera."""
    P = np.asarray(points3d, dtype=np.float64).reshape(3, 3)
    A = np.hstack([P, np.ones((3, 1))])
    _, S, Vt = np.linalg.svd(A)
    if S[2] <= _RANK_EPS * S[0]:
        raise DegenerateSupportError("support points nearly collinear")
    z = Vt[-1]
    if np.linalg.norm(z[:3]) <= 1e-12:
        raise DegenerateSupportError("fit has no finite plane")
    if z[3] < 0:
        z = -z
    return PlaneParams(coeffs=z)


def _pixel_rays(camera: CameraModel):
    """Unit-depth ray directions (z = 1 convention) for every pixel."""
    Kinv = np.linalg.inv(camera.intrinsics)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    mx = Kinv[0, 0] * xs + Kinv[0, 1] * ys + Kinv[0, 2]
    my = Kinv[1, 1] * ys + Kinv[1, 2]
    return np.stack([mx, my, np.ones_like(mx)], axis=-1)


def _fit_planes_batched(A):
    """Vectorized `fit_plane` over a (T, 3, 4) stack; returns unit
    normals (T, 3), offsets (T,), and a validity mask."""
    _, S, Vt = np.linalg.svd(A)
    z = Vt[:, -1, :]
    nn = np.linalg.norm(z[:, :3], axis=1)
    ok = (S[:, 2] > _RANK_EPS * S[:, 0]) & (nn > 1e-12)
    nn_safe = np.where(nn > 1e-12, nn, 1.0)
    normals = z[:, :3] / nn_safe[:, None]
    offsets = z[:, 3] / nn_safe
    flip = offsets < 0
    normals[flip] = -normals[flip]
    offsets[flip] = -offsets[flip]
    return normals, offsets, ok


def build_prior_model(dnmap, camera: CameraModel,
                      cfg: PriorConfig) -> PlanarPriorModel:
    """Planar prior for one view: triangulated planes inside the credible
    hull, nearest-support planes outside it, depth-range filtered."""
    h, w = dnmap.cost.shape
    model = PlanarPriorModel.empty((h, w))
    cred = collect_credible(dnmap, cfg)
    if len(cred) < 3:
        return model
    if len(cred) > _SUBSAMPLE_LIMIT:
        keep = (cred.pixels[:, 0] % 2 == 0) & (cred.pixels[:, 1] % 2 == 0)
        cred = CredibleSet(pixels=cred.pixels[keep],
                           depths=cred.depths[keep],
                           normals=cred.normals[keep])
        if len(cred) < 3:
            return model

    rays = _pixel_rays(camera)
    lifted = (rays[cred.pixels[:, 1], cred.pixels[:, 0]]
              * cred.depths[:, None])
    dmin, dmax = camera.depth_range

    gy, gx = np.mgrid[0:h, 0:w]
    pix_all = np.column_stack([gx.ravel(), gy.ravel()]).astype(np.float64)
    simplex = np.full(h * w, -1, dtype=np.int64)
    delaunay = None
    try:
        pts_f = cred.pixels.astype(np.float64)
        delaunay = Delaunay(pts_f)
        if delaunay.simplices.size == 0:
            delaunay = None
    except QhullError:
        delaunay = None

    if delaunay is not None:
        simplex = delaunay.find_simplex(pix_all)
        tris = delaunay.simplices
        A = np.concatenate([lifted[tris],
                            np.ones((len(tris), 3, 1))], axis=2)
        tn, toff, tok = _fit_planes_batched(A)
        inside = simplex >= 0
        t = simplex[inside]
        n_pix = tn[t]
        d_pix = toff[t]
        m = rays.reshape(-1, 3)[inside]
        denom = (n_pix * m).sum(axis=1)
        safe = denom < -_DENOM_EPS
        z = np.where(safe, -d_pix / np.where(safe, denom, -1.0), np.nan)
        good = tok[t] & safe & np.isfinite(z) & (z >= dmin) & (z <= dmax)
        iy, ix = np.divmod(np.nonzero(inside)[0][good], w)
        model.depth[iy, ix] = z[good]
        model.normal[iy, ix] = n_pix[good]
        model.valid[iy, ix] = True
        model.provenance[iy, ix] = PROV_TRIANGULATED

    # Fallback for pixels outside every triangle: plane through nearby
    # credible points. Support triples repeat heavily, so cache the fits.
    outside = np.nonzero(simplex < 0)[0]
    cache = {}
    for flat in outside:
        y, x = divmod(int(flat), w)
        trip = knn_support((x, y), cred, cfg.k)
        if trip is None:
            continue
        key = tuple(sorted(int(i) for i in trip))
        if key not in cache:
            try:
                plane = fit_plane(lifted[list(key)])
            except DegenerateSupportError:
                plane = None
            cache[key] = plane
        plane = cache[key]
        if plane is None:
            continue
        m = rays[y, x]
        denom = float(plane.normal @ m)
        if denom >= -_DENOM_EPS:
            continue
        z = -plane.offset / denom
        if not (np.isfinite(z) and dmin <= z <= dmax):
            continue
        model.depth[y, x] = z
        model.normal[y, x] = plane.normal / np.linalg.norm(plane.normal)
        model.valid[y, x] = True
        model.provenance[y, x] = PROV_KNN
    return model


def prior_assisted_cost(c_photo: float, h: Hypothesis, prior,
                        cfg: PriorConfig) -> float:
    """Photometric cost plus the smoothed log-bonus of agreeing with the
    prior; an exact match (or no prior) leaves the cost unchanged."""
    if prior is None:
        return float(c_photo)
    return float(c_photo) + float(_kernels.prior_term(
        h.depth, h.normal[0], h.normal[1], h.normal[2],
        prior.depth, prior.normal[0], prior.normal[1], prior.normal[2],
        cfg.eta, cfg.gamma, cfg.sigma_d, cfg.sigma_n))


def dump_prior_model(model: PlanarPriorModel, directory) -> None:
    """Debug dump: prior depth and normal maps plus a provenance image
    (black none, gray triangulated, white nearest-support)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_scalar_field(directory / "prior_depth.pfm",
                       ScalarField(model.depth, model.valid))
    write_vector_field(directory / "prior_normal.pfm",
                       VectorField(model.normal, model.valid))
    shades = np.array([0.0, 0.5, 1.0])
    save_image_gray(directory / "prior_provenance.png",
                    shades[model.provenance])
