"""Planar-prior tests.

Triangulation is validated with a brute-force empty-circumcircle check,
nearest-support selection against an exhaustive sorted scan, plane
fitting against a cross-product construction, and the prior-assisted
cost against a 50-digit mpmath evaluation of its formula.
"""

import itertools
import math

import mpmath
import numpy as np
import pytest
from scipy.spatial import ConvexHull

from hpmvs import prior as pr
from hpmvs.errors import DegenerateInputError, DegenerateSupportError
from hpmvs.geometry import CameraModel, Hypothesis
from hpmvs.patchmatch import MAX_COST, DepthNormalMap


def make_camera(width=60, height=50, f=55.0, dmin=0.5, dmax=10.0):
    K = np.array([[f, 0.0, (width - 1) / 2],
                  [0.0, f, (height - 1) / 2],
                  [0.0, 0.0, 1.0]])
    return CameraModel(intrinsics=K, rotation=np.eye(3),
                       translation=np.zeros(3), depth_range=(dmin, dmax),
                       width=width, height=height)


def pixel_rays(camera):
    Kinv = np.linalg.inv(camera.intrinsics)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    mx = Kinv[0, 0] * xs + Kinv[0, 2]
    my = Kinv[1, 1] * ys + Kinv[1, 2]
    return np.stack([mx, my, np.ones_like(mx)], axis=-1)


def plane_truth(camera, n, d):
    """Per-pixel depth and unit normal of plane n.X + d = 0."""
    n = np.asarray(n, dtype=np.float64)
    scale = np.linalg.norm(n)
    n_unit = n / scale
    rays = pixel_rays(camera)
    denom = rays @ n_unit
    depth = -(d / scale) / denom
    normal = np.broadcast_to(n_unit, rays.shape).copy()
    return depth, normal


def make_map(depth, normal, cost):
    return DepthNormalMap(depth=np.asarray(depth, float),
                          normal=np.asarray(normal, float),
                          cost=np.asarray(cost, float),
                          valid=np.ones(np.shape(cost), dtype=bool))


# ---------------------------------------------------------------------------
# credible point collection


def test_credible_points_all_below_threshold():
    cam = make_camera(width=8, height=6)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    m = make_map(depth, normal, np.full((6, 8), 0.05))
    pts = pr.credible_points(m, pr.PriorConfig())
    assert len(pts) == 48
    assert pts[0][0] == (0, 0)
    assert pts[1][0] == (1, 0)  # row-major order
    assert pts[0][1].depth == pytest.approx(depth[0, 0])


def test_credible_points_none():
    cam = make_camera(width=8, height=6)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    m = make_map(depth, normal, np.full((6, 8), MAX_COST))
    assert pr.credible_points(m, pr.PriorConfig()) == []


def test_credible_points_matches_filter_oracle():
    cam = make_camera(width=12, height=9)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    rng = np.random.default_rng(4)
    cost = rng.uniform(0.0, 0.3, size=(9, 12))
    m = make_map(depth, normal, cost)
    got = [p for p, _ in pr.credible_points(m, pr.PriorConfig())]
    want = [(x, y) for y in range(9) for x in range(12) if cost[y, x] < 0.1]
    assert got == want


# ---------------------------------------------------------------------------
# triangulation


def test_triangulate_single_triangle():
    tris = pr.triangulate([(0, 0), (4, 0), (0, 4)])
    assert tris.shape == (1, 3)
    assert set(tris[0]) == {0, 1, 2}


def test_triangulate_square_shares_diagonal():
    tris = pr.triangulate([(0, 0), (2, 0), (0, 2), (2, 2)])
    assert tris.shape == (2, 3)
    shared = set(tris[0]) & set(tris[1])
    assert len(shared) == 2
    pts = np.array([(0, 0), (2, 0), (0, 2), (2, 2)])
    a, b = (pts[i] for i in shared)
    assert ((a - b) ** 2).sum() == 8  # the shared edge is a diagonal


def test_triangulate_rejects_degenerate():
    with pytest.raises(DegenerateInputError):
        pr.triangulate([(0, 0), (1, 1)])
    with pytest.raises(DegenerateInputError):
        pr.triangulate([(0, 0), (1, 1), (2, 2), (3, 3)])


def circumcircle(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay)
          + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx)
          + (cx**2 + cy**2) * (bx - ax)) / d
    return np.array([ux, uy]), math.hypot(ax - ux, ay - uy)


def test_triangulate_empty_circumcircle_property():
    rng = np.random.default_rng(7)
    flat = rng.choice(1000 * 1000, size=200, replace=False)
    pts = np.column_stack(divmod(flat, 1000)).astype(float)
    tris = pr.triangulate(pts)
    for t in tris:
        center, radius = circumcircle(*pts[t])
        others = np.delete(np.arange(len(pts)), t)
        dist = np.linalg.norm(pts[others] - center, axis=1)
        assert (dist >= radius - 1e-9 * (1.0 + radius)).all()
    # The triangles tile the convex hull exactly.
    area = 0.0
    for t in tris:
        (x0, y0), (x1, y1), (x2, y2) = pts[t]
        area += abs(x0 * (y1 - y2) + x1 * (y2 - y0) + x2 * (y0 - y1)) / 2
    hull = ConvexHull(pts)
    assert area == pytest.approx(hull.volume, rel=1e-9)


# ---------------------------------------------------------------------------
# nearest support


def cred_from_pixels(pixels):
    pixels = np.asarray(pixels, dtype=np.int64)
    n = len(pixels)
    normals = np.tile([0.0, 0.0, -1.0], (n, 1))
    return pr.CredibleSet(pixels=pixels, depths=np.full(n, 2.0),
                          normals=normals)


def test_heron_area_examples():
    assert pr.heron_area((0, 0), (2, 0), (1, 1)) == pytest.approx(1.0)
    assert pr.heron_area((0, 0), (1, 1), (2, 2)) == pytest.approx(0.0, abs=1e-9)


def test_knn_support_skips_collinear_triple():
    cred = cred_from_pixels([(0, 0), (1, 1), (2, 2), (0, 3)])
    got = pr.knn_support((0, 0), cred, k=4)
    assert got.tolist() == [0, 1, 3]


def test_knn_support_tie_break_by_index():
    cred = cred_from_pixels([(0, 2), (2, 0), (2, 4), (4, 2)])
    got = pr.knn_support((2, 2), cred, k=3)
    assert got.tolist() == [0, 1, 2]


def test_knn_support_no_support():
    assert pr.knn_support((0, 0), cred_from_pixels([(0, 0), (5, 5)]), 6) is None
    collinear = cred_from_pixels([(i, i) for i in range(6)])
    assert pr.knn_support((0, 0), collinear, 6) is None


def shoelace(p0, p1, p2):
    return abs(p0[0] * (p1[1] - p2[1]) + p1[0] * (p2[1] - p0[1])
               + p2[0] * (p0[1] - p1[1])) / 2.0


def test_knn_support_matches_exhaustive_oracle():
    rng = np.random.default_rng(12)
    flat = rng.choice(64 * 64, size=50, replace=False)
    ys, xs = divmod(flat, 64)
    cred = cred_from_pixels(np.column_stack([xs, ys]))
    k = 6
    for _ in range(20):
        q = (int(rng.integers(0, 64)), int(rng.integers(0, 64)))
        d2 = ((cred.pixels - np.array(q)) ** 2).sum(axis=1)
        order = sorted(range(50), key=lambda i: (d2[i], i))[:k]
        want = None
        for combo in itertools.combinations(order, 3):
            if shoelace(*(cred.pixels[list(combo)])) > pr.MIN_TRIANGLE_AREA:
                want = list(combo)
                break
        got = pr.knn_support(q, cred, k)
        assert (got.tolist() if got is not None else None) == want


# ---------------------------------------------------------------------------
# plane fitting


def test_fit_plane_axis_aligned_examples():
    plane = pr.fit_plane([(0, 0, 1), (1, 0, 1), (0, 1, 1)])
    assert np.allclose(plane.coeffs, np.array([0, 0, -1, 1]) / math.sqrt(2),
                       atol=1e-12)
    plane = pr.fit_plane([(2, 0, 0), (2, 1, 0), (2, 0, 1)])
    assert np.allclose(plane.coeffs, np.array([-1, 0, 0, 2]) / math.sqrt(5),
                       atol=1e-12)


def test_fit_plane_matches_cross_product_oracle():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        d = rng.uniform(1.0, 3.0)
        basis = np.linalg.svd(n[None, :])[2][1:]  # span of the plane
        pts = [-d * n + basis.T @ rng.uniform(-2, 2, size=2)
               for _ in range(3)]
        if shoelace3d(*pts) < 0.3:
            continue
        plane = pr.fit_plane(pts)
        want = np.append(n, d)
        want /= np.linalg.norm(want)
        if want[3] < 0:
            want = -want
        assert np.allclose(plane.coeffs, want, atol=1e-9)


def shoelace3d(p0, p1, p2):
    return np.linalg.norm(np.cross(np.subtract(p1, p0),
                                   np.subtract(p2, p0))) / 2.0


def test_fit_plane_variational_minimum():
    rng = np.random.default_rng(8)
    pts = rng.uniform(0.5, 3.0, size=(3, 3))
    plane = pr.fit_plane(pts)
    A = np.hstack([pts, np.ones((3, 1))])
    best = np.linalg.norm(A @ plane.coeffs)
    for _ in range(100):
        z = rng.normal(size=4)
        z /= np.linalg.norm(z)
        assert best <= np.linalg.norm(A @ z) + 1e-12


def test_fit_plane_exact_residual():
    plane = pr.fit_plane([(0, 0, 2), (1, 0, 2.1), (0, 1, 2.3)])
    A = np.hstack([np.array([(0, 0, 2), (1, 0, 2.1), (0, 1, 2.3)], float),
                   np.ones((3, 1))])
    assert np.linalg.norm(A @ plane.coeffs) < 1e-6


def test_fit_plane_degenerate():
    with pytest.raises(DegenerateSupportError):
        pr.fit_plane([(0, 0, 1), (1, 1, 1), (2, 2, 1)])
    with pytest.raises(DegenerateSupportError):
        pr.fit_plane([(1, 1, 1), (1, 1, 1), (1, 1, 1)])


# ---------------------------------------------------------------------------
# model construction


def lattice_cost(shape, step, good=0.05, bad=1.0):
    cost = np.full(shape, bad)
    cost[::step, ::step] = good
    return cost


def test_build_prior_model_recovers_plane():
    cam = make_camera()
    n_gt = np.array([0.1, -0.05, -1.0])
    depth, normal = plane_truth(cam, n_gt, 2.5 * np.linalg.norm(n_gt))
    m = make_map(depth, normal, lattice_cost((50, 60), 5))
    model = pr.build_prior_model(m, cam, pr.PriorConfig())
    assert model.valid.all()
    rel = np.abs(model.depth - depth) / depth
    assert rel.max() < 0.005
    assert model.provenance[25, 30] == pr.PROV_TRIANGULATED
    assert model.provenance[49, 59] == pr.PROV_KNN
    n_unit = n_gt / np.linalg.norm(n_gt)
    dots = np.clip(model.normal @ n_unit, -1, 1)
    assert np.degrees(np.arccos(dots)).max() < 0.1


def test_build_prior_model_invariants():
    cam = make_camera()
    n_gt = np.array([0.1, -0.05, -1.0])
    depth, normal = plane_truth(cam, n_gt, 2.5 * np.linalg.norm(n_gt))
    rng = np.random.default_rng(5)
    cost = np.where(rng.uniform(size=(50, 60)) < 0.15, 0.05, 1.0)
    model = pr.build_prior_model(make_map(depth, normal, cost), cam,
                                 pr.PriorConfig())
    dmin, dmax = cam.depth_range
    assert (model.depth[model.valid] >= dmin).all()
    assert (model.depth[model.valid] <= dmax).all()
    norms = np.linalg.norm(model.normal[model.valid], axis=-1)
    assert np.allclose(norms, 1.0, atol=1e-12)
    rays = pixel_rays(cam)
    facing = (model.normal * rays).sum(axis=-1)
    assert (facing[model.valid] < 0).all()
    assert set(np.unique(model.provenance)) <= {pr.PROV_NONE,
                                                pr.PROV_TRIANGULATED,
                                                pr.PROV_KNN}
    assert (model.provenance[~model.valid] == pr.PROV_NONE).all()


def test_build_prior_model_range_filter():
    cam = make_camera()  # d_max = 10
    depth, normal = plane_truth(cam, [0, 0, -1.0], 12.0)
    m = make_map(depth, normal, lattice_cost((50, 60), 5))
    model = pr.build_prior_model(m, cam, pr.PriorConfig())
    assert not model.valid.any()
    assert (model.provenance == pr.PROV_NONE).all()


def test_build_prior_model_behind_camera_filter():
    # Credible points on the vertical plane x = 2 (parallel to the optical
    # axis): its prior depth is negative for the left half of the image.
    cam = make_camera()
    rays = pixel_rays(cam)
    depth = 2.0 / rays[..., 0]
    normal = np.zeros((50, 60, 3))
    normal[..., 0] = -1.0
    cost = np.full((50, 60), 1.0)
    sel = (depth > cam.depth_range[0]) & (depth < cam.depth_range[1])
    cost[sel & (np.arange(60) % 3 == 0)[None, :]
         & (np.arange(50) % 3 == 0)[:, None]] = 0.05
    model = pr.build_prior_model(make_map(depth, normal, cost), cam,
                                 pr.PriorConfig())
    assert model.valid.any()
    assert not model.valid[:, :20].any()  # negative prior depth masked


def test_build_prior_model_empty_and_tiny_credible_sets():
    cam = make_camera(width=16, height=12)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    m = make_map(depth, normal, np.full((12, 16), MAX_COST))
    model = pr.build_prior_model(m, cam, pr.PriorConfig())
    assert not model.valid.any()
    cost = np.full((12, 16), 1.0)
    cost[0, 0] = cost[5, 5] = 0.05
    model = pr.build_prior_model(make_map(depth, normal, cost), cam,
                                 pr.PriorConfig())
    assert not model.valid.any()


def test_build_prior_model_collinear_credible_uses_knn_nowhere():
    cam = make_camera(width=16, height=12)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    cost = np.full((12, 16), 1.0)
    cost[6, :] = 0.05  # one credible row: triangulation degenerate
    model = pr.build_prior_model(make_map(depth, normal, cost), cam,
                                 pr.PriorConfig())
    # All credible points are collinear, so no triangle and no valid
    # nearest-support triple exists anywhere.
    assert not model.valid.any()


# ---------------------------------------------------------------------------
# prior-assisted cost


def tilted(theta):
    return np.array([0.0, math.sin(theta), -math.cos(theta)])


def test_prior_assisted_cost_perfect_match():
    cfg = pr.PriorConfig()
    h = Hypothesis(depth=2.0, normal=np.array([0.0, 0.0, -1.0]))
    assert pr.prior_assisted_cost(0.4, h, h, cfg) == pytest.approx(0.4,
                                                                   abs=1e-12)


def test_prior_assisted_cost_invalid_prior():
    cfg = pr.PriorConfig()
    h = Hypothesis(depth=2.0, normal=np.array([0.0, 0.0, -1.0]))
    assert pr.prior_assisted_cost(0.4, h, None, cfg) == 0.4


def test_prior_assisted_cost_matches_mpmath():
    cfg = pr.PriorConfig()
    prior = Hypothesis(depth=2.0, normal=np.array([0.0, 0.0, -1.0]))
    mpmath.mp.dps = 50
    for dd in (0.0, 0.01, -0.03, 0.1):
        for theta in (0.0, 0.1, 0.3, 1.0):
            h = Hypothesis(depth=2.0 * (1.0 + dd), normal=tilted(theta))
            got = pr.prior_assisted_cost(0.5, h, prior, cfg)
            delta = mpmath.mpf(h.depth - prior.depth) / mpmath.mpf(prior.depth)
            dot = mpmath.mpf(float(h.normal @ prior.normal))
            ang = mpmath.acos(min(max(dot, mpmath.mpf(-1)), mpmath.mpf(1)))
            bonus = mpmath.e ** (-delta**2 / (2 * mpmath.mpf(cfg.sigma_d)**2)
                                 - ang**2 / (2 * mpmath.mpf(cfg.sigma_n)**2))
            want = (mpmath.mpf(0.5)
                    - cfg.eta * mpmath.log(cfg.gamma + bonus)
                    + cfg.eta * mpmath.log(cfg.gamma + 1))
            assert got == pytest.approx(float(want), abs=1e-10)


def test_prior_assisted_cost_monotone_with_minimum_at_match():
    cfg = pr.PriorConfig()
    prior = Hypothesis(depth=2.0, normal=np.array([0.0, 0.0, -1.0]))
    base = 0.3
    prev = -np.inf
    for dd in np.linspace(0.0, 0.2, 15):
        h = Hypothesis(depth=2.0 * (1.0 + dd), normal=prior.normal.copy())
        c = pr.prior_assisted_cost(base, h, prior, cfg)
        assert c >= prev - 1e-12
        assert c >= base - 1e-12
        prev = c
    prev = -np.inf
    for theta in np.linspace(0.0, 1.5, 15):
        h = Hypothesis(depth=2.0, normal=tilted(theta))
        c = pr.prior_assisted_cost(base, h, prior, cfg)
        assert c >= prev - 1e-12
        prev = c
    exact = pr.prior_assisted_cost(base, prior, prior, cfg)
    assert exact == pytest.approx(base, abs=1e-12)


def test_prior_config_validation():
    with pytest.raises(ValueError):
        pr.PriorConfig(tau_cred=0.0)
    with pytest.raises(ValueError):
        pr.PriorConfig(k=2)
    with pytest.raises(ValueError):
        pr.PriorConfig(gamma=0.0)
    with pytest.raises(ValueError):
        pr.PriorConfig(eta=-0.1)


def test_dump_prior_model(tmp_path):
    cam = make_camera(width=20, height=16)
    depth, normal = plane_truth(cam, [0, 0, -1.0], 2.0)
    m = make_map(depth, normal, lattice_cost((16, 20), 4))
    model = pr.build_prior_model(m, cam, pr.PriorConfig())
    pr.dump_prior_model(model, tmp_path)
    from hpmvs.imaging import read_scalar_field
    dumped = read_scalar_field(tmp_path / "prior_depth.pfm")
    assert np.allclose(dumped.values[model.valid],
                       model.depth[model.valid].astype(np.float32))
    assert (tmp_path / "prior_normal.pfm").exists()
    assert (tmp_path / "prior_provenance.png").exists()
