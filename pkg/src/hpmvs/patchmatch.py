"""PatchMatch MVS engine: non-local extensible checkerboard propagation.

The engine keeps per-pixel state (hypothesis, objective cost, photometric
per-view costs, view weights) in flat arrays and advances it through
colored passes compiled in `_kernels`. Red pixels are those with even
x+y. The stored cost is the value the current stage's objective assigned
when the hypothesis was committed; candidates must beat it, so the cost
field is non-increasing over passes within a stage. Stage transitions
(turning the planar prior or geometric consistency on or off) call
`rescore` to rebuild costs and weights under the new objective.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import config as nbconfig
from numba import set_num_threads

from . import _kernels
from ._rng import rand_uniform
from .errors import DegeneratePlaneError, InsufficientViewsError
from .geometry import (
    CameraModel,
    Hypothesis,
    homography,
    relative_pose,
    viewing_ray,
)
from .imaging import ScalarField, VectorField
from .scene import Scene, View

__all__ = [
    "MAX_COST",
    "RED",
    "BLACK",
    "BETA",
    "PATCH_SIGMA_SPATIAL",
    "PATCH_SIGMA_RANGE",
    "PropagationConfig",
    "ViewWeights",
    "DepthNormalMap",
    "PatchmatchState",
    "set_workers",
    "patch_taps",
    "extension_threshold",
    "matching_cost",
    "view_weights",
    "aggregate_cost",
    "random_init",
    "propagate",
    "refine",
    "refinement_ensemble",
    "geometric_consistency_cost",
]

MAX_COST = _kernels.MAX_COST
RED = 0
BLACK = 1

BETA = 0.3                 # view-weight falloff
PATCH_SIGMA_SPATIAL = 2.5  # px, bilateral patch weights
PATCH_SIGMA_RANGE = 0.1    # intensity, bilateral patch weights
DEFAULT_LAMBDA_GEOM = 0.2
DEFAULT_PSI = 3.0          # px, geometric error clamp


def set_workers(n: int) -> int:
    """Clamp and apply the worker count for compiled parallel passes.

    Results are bitwise-identical for any count; this only sizes the pool.
    """
    n = max(1, min(int(n), nbconfig.NUMBA_NUM_THREADS))
    set_num_threads(n)
    return n


@dataclass(frozen=True)
class PropagationConfig:
    """Knobs of the propagation engine. The first eight defaults follow
    the published parameter set {4, 3, 0.8, 1.2, 90, 1, 2, 4}."""

    k: int = 4
    n_ext: int = 3
    tau_good: float = 0.8
    tau_bad: float = 1.2
    alpha: float = 90.0
    n_good: int = 1
    n_bad: int = 2
    radius: float = 4.0
    iterations: int = 3
    patch_radius: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n_ext < 0:
            raise ValueError("n_ext must be >= 0")
        if not (self.tau_good < self.tau_bad):
            raise ValueError("tau_good must be < tau_bad")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1")
        if self.n_good < 0 or self.n_bad < 0:
            raise ValueError("vote counts must be >= 0")

    def without_nonlocal(self) -> "PropagationConfig":
        return replace(self, radius=0.0)

    def without_extension(self) -> "PropagationConfig":
        return replace(self, n_ext=0)


@dataclass(frozen=True)
class ViewWeights:
    """Per-source-view weights; zero weight means not selected."""

    weights: np.ndarray

    @property
    def selected(self) -> np.ndarray:
        return self.weights > 0


@dataclass
class DepthNormalMap:
    """Dense hypothesis field with per-pixel cost, the unit of exchange
    between pipeline stages."""

    depth: np.ndarray
    normal: np.ndarray
    cost: np.ndarray
    valid: np.ndarray

    def depth_field(self) -> ScalarField:
        return ScalarField(np.where(self.valid, self.depth, 0.0), self.valid)

    def normal_field(self) -> VectorField:
        vals = np.where(self.valid[..., None], self.normal, 0.0)
        return VectorField(vals, self.valid)

    def cost_field(self) -> ScalarField:
        return ScalarField(np.where(self.valid, self.cost, 0.0), self.valid)


def patch_taps(patch_radius: int):
    """Every-other-pixel tap grid and its spatial Gaussian weights."""
    axis = range(-patch_radius, patch_radius + 1, 2)
    taps = np.array([(dx, dy) for dy in axis for dx in axis], dtype=np.int32)
    dist2 = (taps.astype(np.float64) ** 2).sum(axis=1)
    spatial = np.exp(-dist2 / (2.0 * PATCH_SIGMA_SPATIAL**2))
    return taps, spatial


def extension_threshold(cfg: PropagationConfig, t_iter: int, t_ext: int) -> float:
    """Good-cost threshold for the extension vote; tightens with the
    iteration count and relaxes as a region reaches full extension."""
    if not (0 <= t_ext <= cfg.n_ext):
        raise ValueError("t_ext out of range")
    if t_iter < 0:
        raise ValueError("t_iter must be >= 0")
    return cfg.tau_good * math.exp(
        -(t_iter * t_iter) * (cfg.n_ext - t_ext) / cfg.alpha)


def matching_cost(ref: View, src: View, pixel, h: Hypothesis,
                  patch_radius: int = 5) -> float:
    """Bilaterally weighted 1-NCC of one hypothesis against one source
    view. Degenerate planes, flat patches, and mostly-out-of-view warps
    all return MAX_COST."""
    x, y = int(round(pixel[0])), int(round(pixel[1]))
    if not (0 <= x < ref.camera.width and 0 <= y < ref.camera.height):
        raise ValueError("pixel outside the reference image")
    try:
        H = homography(ref.camera, src.camera, (float(x), float(y)), h)
    except DegeneratePlaneError:
        return MAX_COST
    taps, spatial = patch_taps(patch_radius)
    vals = np.empty(len(taps))
    wts = np.empty(len(taps))
    ref_img = np.ascontiguousarray(ref.image, dtype=np.float32)
    src_img = np.ascontiguousarray(src.image, dtype=np.float32)
    _kernels.ref_patch(ref_img, x, y, taps, spatial, PATCH_SIGMA_RANGE,
                       vals, wts)
    return float(_kernels.warp_ncc(
        src_img, src.camera.height, src.camera.width, x, y,
        H[0, 0], H[0, 1], H[0, 2], H[1, 0], H[1, 1], H[1, 2],
        H[2, 0], H[2, 1], H[2, 2], taps, vals, wts))


def view_weights(M: np.ndarray, cfg: PropagationConfig) -> ViewWeights:
    """Column-voting view selection over an 8 x (N-1) cost matrix.

    A view qualifies with at least 2 column entries below tau_good and at
    most 3 above tau_bad; if none qualifies, the view with the smallest
    column minimum is kept alone. Weights fall off as
    exp(-c_min^2 / (2 beta^2)).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("cost matrix must be 2-d")
    w = np.empty(M.shape[1], dtype=np.float64)
    _kernels.column_weights(M, cfg.tau_good, cfg.tau_bad, BETA, w)
    return ViewWeights(weights=w)


def aggregate_cost(costs, w) -> float:
    """Weighted photometric aggregate; MAX_COST when nothing is selected."""
    weights = w.weights if isinstance(w, ViewWeights) else np.asarray(w, float)
    costs = np.asarray(costs, dtype=np.float64)
    if costs.shape != weights.shape:
        raise ValueError("costs and weights must have equal length")
    total = weights.sum()
    if total <= 0:
        return MAX_COST
    return float((weights * costs).sum() / total)


class PatchmatchState:
    """Packed per-view working state for one reference view."""

    def __init__(self, scene: Scene, ref_index: int, cfg: PropagationConfig):
        if len(scene) < 2:
            raise InsufficientViewsError(
                f"need at least 2 views, scene has {len(scene)}")
        from .sampling import build_region_table

        self.scene = scene
        self.ref_index = ref_index
        self.cfg = cfg
        ref = scene[ref_index]
        self.ref_view = ref
        self.src_indices = scene.source_indices(ref_index)
        srcs = [scene[i] for i in self.src_indices]
        J = len(srcs)
        h, w = ref.image.shape

        self.ref_img = np.ascontiguousarray(ref.image, dtype=np.float32)
        hmax = max(v.camera.height for v in srcs)
        wmax = max(v.camera.width for v in srcs)
        self.src_imgs = np.zeros((J, hmax, wmax), dtype=np.float32)
        self.src_dims = np.zeros((J, 2), dtype=np.int64)
        for j, v in enumerate(srcs):
            self.src_imgs[j, : v.camera.height, : v.camera.width] = v.image
            self.src_dims[j] = (v.camera.height, v.camera.width)

        Kref = ref.camera.intrinsics
        self.Kref = np.ascontiguousarray(Kref)
        self.Kinv = np.ascontiguousarray(np.linalg.inv(Kref))
        self.A = np.zeros((J, 3, 3))
        self.b = np.zeros((J, 3))
        self.Ksrc_inv = np.zeros((J, 3, 3))
        self.Rrel = np.zeros((J, 3, 3))
        self.trel = np.zeros((J, 3))
        for j, v in enumerate(srcs):
            R_rel, t_rel = relative_pose(ref.camera, v.camera)
            Ks = v.camera.intrinsics
            self.A[j] = Ks @ R_rel @ self.Kinv
            self.b[j] = Ks @ t_rel
            self.Ksrc_inv[j] = np.linalg.inv(Ks)
            self.Rrel[j] = R_rel
            self.trel[j] = t_rel

        self.dmin, self.dmax = ref.camera.depth_range
        self.taps, self.spatial_w = patch_taps(cfg.patch_radius)
        self.offsets, self.counts = build_region_table(cfg.radius, cfg.n_ext)

        self.depth = np.zeros((h, w))
        self.normal = np.zeros((h, w, 3))
        self.cost = np.full((h, w), MAX_COST)
        self.photo = np.full((h, w), MAX_COST)
        self.percost = np.full((h, w, J), MAX_COST)
        self.weights = np.zeros((h, w, J))
        # Pixels whose hypotheses were optimized under a credible planar
        # prior. Photometrically degenerate regions (flat walls) can never
        # push their matching cost below MAX_COST, yet a prior-conforming
        # hypothesis there is a real surface estimate; this mask keeps such
        # pixels visible to the consistency rounds and to fusion, where
        # cross-view agreement decides whether they survive.
        self.prior_backed = np.zeros((h, w), dtype=bool)
        self.epoch = 0

        # Stage mode: bare photometric by default.
        self._dummy_sf = np.zeros((1, 1))
        self._dummy_vf = np.zeros((1, 1, 3))
        self._dummy_mask = np.zeros((1, 1), dtype=np.bool_)
        self._dummy_depths = np.zeros((J, 1, 1))
        self.use_prior = False
        self.prior_depth = self._dummy_sf
        self.prior_normal = self._dummy_vf
        self.prior_valid = self._dummy_mask
        self.eta = 0.2
        self.gamma = 0.1
        self.sigma_d = 0.02
        self.sigma_n = 0.25
        self.use_gc = False
        self.src_depth = self._dummy_depths
        self.lambda_geom = DEFAULT_LAMBDA_GEOM
        self.psi = DEFAULT_PSI

    @property
    def shape(self):
        return self.depth.shape

    @property
    def n_sources(self):
        return len(self.src_indices)

    # -- stage switches ----------------------------------------------------

    def set_prior(self, prior_depth, prior_normal, prior_valid,
                  eta=0.2, gamma=0.1, sigma_d=0.02, sigma_n=0.25):
        self.use_prior = True
        self.prior_depth = np.ascontiguousarray(prior_depth, dtype=np.float64)
        self.prior_normal = np.ascontiguousarray(prior_normal, dtype=np.float64)
        self.prior_valid = np.ascontiguousarray(prior_valid, dtype=np.bool_)
        self.eta = float(eta)
        self.gamma = float(gamma)
        self.sigma_d = float(sigma_d)
        self.sigma_n = float(sigma_n)

    def clear_prior(self):
        self.use_prior = False
        self.prior_depth = self._dummy_sf
        self.prior_normal = self._dummy_vf
        self.prior_valid = self._dummy_mask

    def set_geometric(self, src_depth_maps, lambda_geom=DEFAULT_LAMBDA_GEOM,
                      psi=DEFAULT_PSI):
        """Install source-view depth maps (list in source order; NaN or
        nonpositive marks invalid) for geometric-consistency terms."""
        J = self.n_sources
        hmax = int(self.src_dims[:, 0].max())
        wmax = int(self.src_dims[:, 1].max())
        packed = np.full((J, hmax, wmax), np.nan)
        for j, dm in enumerate(src_depth_maps):
            hj, wj = self.src_dims[j]
            packed[j, :hj, :wj] = dm
        self.use_gc = True
        self.src_depth = packed
        self.lambda_geom = float(lambda_geom)
        self.psi = float(psi)

    def clear_geometric(self):
        self.use_gc = False
        self.src_depth = self._dummy_depths

    # -- passes --------------------------------------------------------------

    def rescore(self):
        """Recompute weights, photometric aggregates, and objective costs
        for the incumbent hypotheses under the current stage mode. Call at
        every stage transition so stored costs stay comparable."""
        _kernels.rescore_kernel(
            self.depth, self.normal, self.cost, self.photo, self.percost,
            self.weights, self.cfg.tau_good, self.cfg.tau_bad, BETA,
            self.use_prior, self.prior_depth, self.prior_normal,
            self.prior_valid, self.eta, self.gamma, self.sigma_d, self.sigma_n,
            self.use_gc, self.A, self.b, self.Ksrc_inv, self.Rrel, self.trel,
            self.Kref, self.Kinv, self.src_depth, self.src_dims,
            self.lambda_geom, self.psi)

    def snapshot(self) -> DepthNormalMap:
        valid = (self.cost < MAX_COST) | self.prior_backed
        return DepthNormalMap(depth=self.depth.copy(),
                              normal=self.normal.copy(),
                              cost=self.cost.copy(),
                              valid=valid)

    def geo_min(self) -> np.ndarray:
        """Per-pixel minimum geometric error against the installed source
        depth maps (psi where nothing checks out)."""
        if not self.use_gc:
            raise RuntimeError("no source depth maps installed")
        out = np.empty(self.shape)
        _kernels.geo_min_kernel(self.depth, self.A, self.b, self.Ksrc_inv,
                                self.Rrel, self.trel, self.Kref, self.Kinv,
                                self.src_depth, self.src_dims, self.psi, out)
        return out


def random_init(scene: Scene, ref_index: int, cfg: PropagationConfig) -> PatchmatchState:
    """Seeded per-pixel random hypotheses with top-k initial costs."""
    state = PatchmatchState(scene, ref_index, cfg)
    _kernels.init_kernel(
        state.ref_img, state.src_imgs, state.src_dims, state.A, state.b,
        state.Kinv, state.dmin, state.dmax, state.taps, state.spatial_w,
        PATCH_SIGMA_RANGE, cfg.seed, 0, cfg.k, cfg.tau_good, cfg.tau_bad,
        BETA, state.depth, state.normal, state.cost, state.photo,
        state.percost, state.weights)
    state.epoch = 1
    return state


def propagate(state: PatchmatchState, cfg: PropagationConfig, t_iter: int,
              color: int) -> None:
    """One colored propagation pass over the whole image."""
    if color not in (RED, BLACK):
        raise ValueError("color must be RED (0) or BLACK (1)")
    _kernels.propagate_kernel(
        state.ref_img, state.src_imgs, state.src_dims, state.A, state.b,
        state.Kinv, state.dmin, state.dmax, state.taps, state.spatial_w,
        PATCH_SIGMA_RANGE, state.offsets, state.counts, t_iter, cfg.n_ext,
        cfg.alpha, cfg.tau_good, cfg.tau_bad, cfg.n_good, cfg.n_bad, BETA,
        color, state.depth, state.normal, state.cost, state.photo,
        state.percost, state.weights,
        state.use_prior, state.prior_depth, state.prior_normal,
        state.prior_valid, state.eta, state.gamma, state.sigma_d,
        state.sigma_n, state.use_gc, state.Ksrc_inv, state.Rrel, state.trel,
        state.Kref, state.src_depth, state.lambda_geom, state.psi)
    state.epoch += 1


def refine_pass(state: PatchmatchState, cfg: PropagationConfig, t_iter: int,
                color: int) -> None:
    """One colored refinement pass (seven-hypothesis ensemble per pixel)."""
    if color not in (RED, BLACK):
        raise ValueError("color must be RED (0) or BLACK (1)")
    delta_d = 0.1 / 2.0 ** (t_iter - 1)
    delta_n = math.radians(10.0) / 2.0 ** (t_iter - 1)
    _kernels.refine_kernel(
        state.ref_img, state.src_imgs, state.src_dims, state.A, state.b,
        state.Kinv, state.dmin, state.dmax, state.taps, state.spatial_w,
        PATCH_SIGMA_RANGE, cfg.seed, state.epoch, delta_d, delta_n, color,
        state.depth, state.normal, state.cost, state.photo, state.percost,
        state.weights,
        state.use_prior, state.prior_depth, state.prior_normal,
        state.prior_valid, state.eta, state.gamma, state.sigma_d,
        state.sigma_n, state.use_gc, state.Ksrc_inv, state.Rrel, state.trel,
        state.Kref, state.src_depth, state.lambda_geom, state.psi)
    state.epoch += 1


def refinement_ensemble(state: PatchmatchState, pixel, t_iter: int):
    """The seven hypothesis combinations refine evaluates at one pixel:
    incumbent first, then the mixed perturbed/random members."""
    x, y = int(pixel[0]), int(pixel[1])
    h, w = state.shape
    cell = y * w + x
    seed = state.cfg.seed
    stream = state.epoch
    d = state.depth[y, x]
    n = state.normal[y, x].copy()
    mx = float(state.Kinv[0, 0] * x + state.Kinv[0, 1] * y + state.Kinv[0, 2])
    my = float(state.Kinv[1, 1] * y + state.Kinv[1, 2])
    mnorm = math.sqrt(mx * mx + my * my + 1.0)
    delta_d = 0.1 / 2.0 ** (t_iter - 1)
    delta_n = math.radians(10.0) / 2.0 ** (t_iter - 1)

    u = rand_uniform(seed, stream, cell, 0)
    dp = min(max(d * (1.0 - delta_d + 2.0 * delta_d * u), state.dmin), state.dmax)
    a0, a1, a2 = _kernels._sphere_point(rand_uniform(seed, stream, cell, 1),
                                        rand_uniform(seed, stream, cell, 2))
    ang = delta_n * rand_uniform(seed, stream, cell, 3)
    p0, p1, p2 = _kernels._rotate(n[0], n[1], n[2], a0, a1, a2, ang)
    pdot = p0 * mx + p1 * my + p2
    if pdot > 0.0:
        p0, p1, p2 = -p0, -p1, -p2
        pdot = -pdot
    if -pdot < 1e-12 * mnorm:
        npert = n.copy()
    else:
        npert = np.array([p0, p1, p2])
    ur = rand_uniform(seed, stream, cell, 4)
    dr = state.dmin + ur * (state.dmax - state.dmin)
    r0, r1, r2, _ = _kernels.random_facing_normal(seed, stream, cell, 5, mx, my)
    nrand = np.array([r0, r1, r2])

    return [
        (d, n),
        (d, npert),
        (d, nrand),
        (dr, n),
        (dr, nrand),
        (dp, n),
        (dp, npert),
    ]


def refine(state: PatchmatchState, cfg: PropagationConfig, pixel,
           t_iter: int = 1) -> Hypothesis:
    """Refine a single pixel in place and return its updated hypothesis.

    Uses the pixel's current view weights, evaluates the seven-member
    ensemble (the incumbent competes at its stored cost), and commits the
    argmin.
    """
    x, y = int(pixel[0]), int(pixel[1])
    members = refinement_ensemble(state, pixel, t_iter)
    wbuf = state.weights[y, x]
    vals = np.empty(len(state.taps))
    wts = np.empty(len(state.taps))
    _kernels.ref_patch(state.ref_img, x, y, state.taps, state.spatial_w,
                       PATCH_SIGMA_RANGE, vals, wts)
    best_obj = state.cost[y, x]
    best = None
    row = np.empty(state.n_sources)
    for d, n in members[1:]:
        _kernels.score_row(state.src_imgs, state.src_dims, state.A, state.b,
                           state.Kinv, x, y, d, n[0], n[1], n[2],
                           state.taps, vals, wts, row)
        c_photo = aggregate_cost(row, wbuf)
        obj = _objective_py(state, x, y, d, n, c_photo, wbuf)
        if obj < best_obj:
            best_obj = obj
            best = (d, n.copy(), c_photo, row.copy())
    if best is not None:
        d, n, c_photo, bestrow = best
        state.depth[y, x] = d
        state.normal[y, x] = n
        state.cost[y, x] = best_obj
        state.photo[y, x] = c_photo
        state.percost[y, x] = bestrow
    return Hypothesis(depth=float(state.depth[y, x]),
                      normal=state.normal[y, x].copy())


def _objective_py(state: PatchmatchState, x, y, d, n, c_photo, wbuf) -> float:
    obj = c_photo
    if state.use_prior and state.prior_valid[y, x]:
        obj += float(_kernels.prior_term(
            d, n[0], n[1], n[2], state.prior_depth[y, x],
            state.prior_normal[y, x, 0], state.prior_normal[y, x, 1],
            state.prior_normal[y, x, 2], state.eta, state.gamma,
            state.sigma_d, state.sigma_n))
    if state.use_gc:
        acc = 0.0
        tot = 0.0
        for j in range(state.n_sources):
            if wbuf[j] <= 0:
                continue
            e = _kernels.geo_error_one(
                x, y, d, j, state.A, state.b, state.Ksrc_inv, state.Rrel,
                state.trel, state.Kref, state.Kinv, state.src_depth,
                state.src_dims, state.psi)
            acc += wbuf[j] * e
            tot += wbuf[j]
        obj += state.lambda_geom * (acc / tot if tot > 0 else state.psi)
    return obj


def geometric_consistency_cost(ref: View, src: View, pixel, h: Hypothesis,
                               src_depthmap, psi: float = DEFAULT_PSI) -> float:
    """Forward-backward reprojection error of one hypothesis against a
    source depth map, clamped to psi. Invalid lookups cost the clamp."""
    x, y = float(pixel[0]), float(pixel[1])
    depth_arr = (src_depthmap.values if isinstance(src_depthmap, ScalarField)
                 else np.asarray(src_depthmap, dtype=np.float64))
    if isinstance(src_depthmap, ScalarField):
        depth_arr = np.where(src_depthmap.valid, depth_arr, np.nan)
    R_rel, t_rel = relative_pose(ref.camera, src.camera)
    point = viewing_ray(ref.camera, (x, y)) * h.depth
    q = src.camera.intrinsics @ (R_rel @ point + t_rel)
    if q[2] < 1e-9:
        return psi
    u, v = q[0] / q[2], q[1] / q[2]
    sh, sw = depth_arr.shape
    if not (0 <= u <= sw - 1 and 0 <= v <= sh - 1):
        return psi
    x0 = min(int(u), sw - 2)
    y0 = min(int(v), sh - 2)
    fx, fy = u - x0, v - y0
    dsum = wsum = 0.0
    for cy in range(2):
        for cx in range(2):
            dv = depth_arr[y0 + cy, x0 + cx]
            if np.isfinite(dv) and dv > 0:
                wgt = (fy if cy else 1 - fy) * (fx if cx else 1 - fx)
                dsum += wgt * dv
                wsum += wgt
    if wsum < 1e-12:
        return psi
    lifted = viewing_ray(src.camera, (u, v)) * (dsum / wsum)
    back = R_rel.T @ (lifted - t_rel)
    if back[2] < 1e-9:
        return psi
    uvw = ref.camera.intrinsics @ back
    err = math.hypot(uvw[0] / uvw[2] - x, uvw[1] / uvw[2] - y)
    return min(err, psi)


def run_iterations(state: PatchmatchState, cfg: PropagationConfig,
                   iterations: int | None = None,
                   on_pass=None) -> None:
    """The standard schedule: per iteration, red and black propagation
    then red and black refinement. `on_pass(state, label)` is called after
    every pass when given (used to record cost traces)."""
    total = cfg.iterations if iterations is None else iterations
    for t in range(1, total + 1):
        for color, name in ((RED, "red"), (BLACK, "black")):
            propagate(state, cfg, t, color)
            if on_pass is not None:
                on_pass(state, f"propagate-{name}-{t}")
        for color, name in ((RED, "red"), (BLACK, "black")):
            refine_pass(state, cfg, t, color)
            if on_pass is not None:
                on_pass(state, f"refine-{name}-{t}")
