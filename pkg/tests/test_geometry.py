import numpy as np
import pytest

from hpmvs.errors import DegeneratePlaneError, FormatError
from hpmvs.geometry import (
    CameraModel,
    Hypothesis,
    PlaneParams,
    backproject,
    homography,
    hypothesis_from_plane,
    load_camera,
    orient_camera_facing,
    plane_from_hypothesis,
    project,
    relative_pose,
    save_camera,
    scale_camera,
    viewing_ray,
)


def simple_camera(f=600.0, cx=320.0, cy=240.0, R=None, t=None, size=(640, 480)):
    return CameraModel(
        intrinsics=np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]]),
        rotation=np.eye(3) if R is None else R,
        translation=np.zeros(3) if t is None else np.asarray(t, float),
        depth_range=(0.5, 20.0),
        width=size[0],
        height=size[1],
    )


def random_camera(rng, size=(640, 480)):
    # Random small rotation via axis-angle, random offset.
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = rng.uniform(-0.4, 0.4)
    K_cross = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    R = np.eye(3) + np.sin(ang) * K_cross + (1 - np.cos(ang)) * (K_cross @ K_cross)
    t = rng.normal(scale=0.5, size=3)
    f = rng.uniform(400, 900)
    return simple_camera(
        f=f,
        cx=size[0] / 2 + rng.uniform(-5, 5),
        cy=size[1] / 2 + rng.uniform(-5, 5),
        R=R,
        t=t,
        size=size,
    )


class TestCameraModel:
    def test_rejects_non_orthonormal_rotation(self):
        R = np.eye(3)
        R[0, 1] = 1e-3
        with pytest.raises(ValueError):
            simple_camera(R=R)

    def test_rejects_reflection(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            simple_camera(R=R)

    def test_rejects_bad_depth_range(self):
        with pytest.raises(ValueError):
            CameraModel(
                intrinsics=np.array([[600, 0, 320], [0, 600, 240], [0, 0, 1.0]]),
                rotation=np.eye(3),
                translation=np.zeros(3),
                depth_range=(2.0, 1.0),
                width=640,
                height=480,
            )

    def test_center_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            cam = random_camera(rng)
            c = cam.center
            assert np.allclose(cam.rotation @ c + cam.translation, 0, atol=1e-12)


class TestBackproject:
    def test_principal_ray(self):
        cam = simple_camera()
        p = backproject(cam, (320.0, 240.0), 2.0)
        assert np.allclose(p, [0.0, 0.0, 2.0], atol=1e-15)

    def test_tan_geometry(self):
        # 100 px off-axis with f = 100 means a 45 degree ray: X equals Z.
        cam = simple_camera(f=100.0, cx=50.0, cy=50.0, size=(100, 100))
        p = backproject(cam, (150.0, 50.0), 3.0)
        assert np.allclose(p, [3.0, 0.0, 3.0], atol=1e-12)

    def test_depth_is_z_not_ray_length(self):
        cam = simple_camera(f=100.0, cx=50.0, cy=50.0, size=(100, 100))
        p = backproject(cam, (150.0, 50.0), 3.0)
        assert p[2] == pytest.approx(3.0)
        assert np.linalg.norm(p) > 3.0

    def test_rejects_nonpositive_depth(self):
        cam = simple_camera()
        with pytest.raises(ValueError):
            backproject(cam, (320.0, 240.0), 0.0)
        with pytest.raises(ValueError):
            backproject(cam, (320.0, 240.0), -1.0)

    def test_project_inverts_backproject(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            cam = random_camera(rng)
            px = rng.uniform([0, 0], [cam.width - 1, cam.height - 1])
            depth = rng.uniform(0.6, 15.0)
            point = backproject(cam, px, depth)
            assert point[2] == pytest.approx(depth, abs=1e-12)
            assert np.allclose(project(cam, point), px, atol=1e-9)

    def test_skew_handled(self):
        K = np.array([[600, 2.5, 320], [0, 590, 240], [0, 0, 1.0]])
        cam = CameraModel(
            intrinsics=K,
            rotation=np.eye(3),
            translation=np.zeros(3),
            depth_range=(0.5, 20.0),
            width=640,
            height=480,
        )
        px = np.array([401.3, 77.2])
        assert np.allclose(project(cam, backproject(cam, px, 4.2)), px, atol=1e-9)


class TestHypothesisAndPlane:
    def test_normal_must_be_unit(self):
        with pytest.raises(ValueError):
            Hypothesis(depth=1.0, normal=np.array([0.0, 0.0, -2.0]))

    def test_plane_coeffs_unit(self):
        with pytest.raises(ValueError):
            PlaneParams(np.array([0.0, 0.0, -1.0, 3.0]))

    def test_fronto_parallel_plane(self):
        cam = simple_camera()
        h = Hypothesis(depth=2.0, normal=np.array([0.0, 0.0, -1.0]))
        plane = plane_from_hypothesis(cam, (320.0, 240.0), h)
        # -Z + 2 = 0 normalized to unit coefficients.
        expected = np.array([0.0, 0.0, -1.0, 2.0]) / np.sqrt(5.0)
        assert np.allclose(plane.coeffs, expected, atol=1e-12)

    def test_round_trip_through_plane(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            cam = random_camera(rng)
            px = rng.uniform([0, 0], [cam.width - 1, cam.height - 1])
            depth = rng.uniform(0.6, 15.0)
            ray = viewing_ray(cam, px)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            n = orient_camera_facing(n, ray)
            if abs(n @ ray) < 0.1 * np.linalg.norm(ray):
                continue  # skip grazing planes, covered separately
            h = Hypothesis(depth=depth, normal=n)
            back = hypothesis_from_plane(cam, px, plane_from_hypothesis(cam, px, h))
            assert back.depth == pytest.approx(depth, rel=1e-7)
            assert np.allclose(back.normal, n, atol=1e-7)

    def test_grazing_plane_raises(self):
        cam = simple_camera()
        # Plane parallel to the principal ray through the principal point.
        plane = PlaneParams(np.array([1.0, 0.0, 0.0, 0.5]) / np.linalg.norm([1, 0, 0, 0.5]))
        with pytest.raises(DegeneratePlaneError):
            hypothesis_from_plane(cam, (320.0, 240.0), plane)

    def test_orient_flips_away_facing(self):
        ray = np.array([0.1, -0.2, 1.0])
        n = np.array([0.0, 0.0, 1.0])
        out = orient_camera_facing(n, ray)
        assert out @ ray < 0
        assert np.allclose(out, [0, 0, -1])

    def test_orient_keeps_camera_facing(self):
        ray = np.array([0.0, 0.0, 1.0])
        n = np.array([0.3, 0.0, -1.0])
        n /= np.linalg.norm(n)
        assert np.allclose(orient_camera_facing(n, ray), n)


class TestHomography:
    def test_identity_when_same_camera(self):
        cam = simple_camera()
        rng = np.random.default_rng(5)
        for _ in range(50):
            px = rng.uniform([0, 0], [639, 479])
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            n = orient_camera_facing(n, viewing_ray(cam, px))
            if abs(n[2]) < 0.2:
                continue
            h = Hypothesis(depth=rng.uniform(1, 10), normal=n)
            H = homography(cam, cam, px, h)
            assert np.allclose(H, np.eye(3), atol=1e-12)

    def test_fronto_parallel_shift(self):
        # Stereo pair with baseline b along x and a fronto-parallel plane at
        # depth d maps every pixel by the classic disparity f*b/d.
        f, b, d = 600.0, 0.4, 3.0
        ref = simple_camera(f=f)
        src = simple_camera(f=f, t=[-b, 0.0, 0.0])
        h = Hypothesis(depth=d, normal=np.array([0.0, 0.0, -1.0]))
        H = homography(ref, src, (320.0, 240.0), h)
        pts = np.array([[320.0, 240.0, 1.0], [100.0, 50.0, 1.0], [600.0, 400.0, 1.0]])
        mapped = (H @ pts.T).T
        mapped = mapped[:, :2] / mapped[:, 2:]
        expected = pts[:, :2].copy()
        expected[:, 0] -= f * b / d
        assert np.allclose(mapped, expected, atol=1e-9)

    def test_matches_lift_transform_project(self):
        rng = np.random.default_rng(17)
        checked = 0
        while checked < 300:
            ref = random_camera(rng)
            src = random_camera(rng)
            px = rng.uniform([20, 20], [ref.width - 21, ref.height - 21])
            depth = rng.uniform(1.0, 10.0)
            ray = viewing_ray(ref, px)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            n = orient_camera_facing(n, ray)
            if abs(n @ ray) < 0.3 * np.linalg.norm(ray):
                continue
            h = Hypothesis(depth=depth, normal=n)
            plane = plane_from_hypothesis(ref, px, h)
            H = homography(ref, src, px, h)

            # Oracle: lift nearby pixels onto the plane, move them into the
            # source frame, project.
            for dx, dy in [(0, 0), (5, -3), (-7, 2), (11, 9)]:
                q = px + [dx, dy]
                ray_q = viewing_ray(ref, q)
                denom = plane.normal @ ray_q
                if abs(denom) < 1e-6:
                    continue
                depth_q = -plane.offset / denom
                if depth_q <= 0:
                    continue
                point_ref = ray_q * depth_q
                R_rel, t_rel = relative_pose(ref, src)
                point_src = R_rel @ point_ref + t_rel
                if point_src[2] < 0.05:
                    continue
                expected = project(src, point_src)
                uvw = H @ np.array([q[0], q[1], 1.0])
                got = uvw[:2] / uvw[2]
                assert np.allclose(got, expected, atol=1e-8), (got, expected)
            checked += 1

    def test_degenerate_plane_raises(self):
        ref = simple_camera()
        src = simple_camera(t=[-0.4, 0, 0])
        # A hypothesis plane through the origin: point at depth d with a
        # normal orthogonal to the position vector.
        px = (320.0, 240.0)
        point = backproject(ref, px, 2.0)
        n = np.array([1.0, 0.0, 0.0])
        assert abs(n @ point) < 1e-12
        h = Hypothesis(depth=2.0, normal=n)
        with pytest.raises(DegeneratePlaneError):
            homography(ref, src, px, h)


class TestRelativePose:
    def test_composition(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            ref = random_camera(rng)
            src = random_camera(rng)
            R_rel, t_rel = relative_pose(ref, src)
            point_w = rng.normal(size=3) + [0, 0, 5]
            p_ref = ref.rotation @ point_w + ref.translation
            p_src = src.rotation @ point_w + src.translation
            assert np.allclose(R_rel @ p_ref + t_rel, p_src, atol=1e-10)


class TestScaleCamera:
    def test_factor_one_is_identity(self):
        cam = simple_camera()
        assert scale_camera(cam, 1) is cam

    def test_block_center_alignment(self):
        cam = simple_camera(f=600.0, cx=319.5, cy=239.5)
        half = scale_camera(cam, 2)
        assert half.width == 320 and half.height == 240
        assert half.intrinsics[0, 0] == pytest.approx(300.0)
        # The center of the full-res image must stay the center at half res.
        assert half.intrinsics[0, 2] == pytest.approx((319.5 + 0.5) / 2 - 0.5)

    def test_ceil_dimensions(self):
        cam = simple_camera(size=(641, 481))
        half = scale_camera(cam, 2)
        assert (half.width, half.height) == (321, 241)

    def test_projection_consistency(self):
        # A world point projects to coordinates that scale with the grid.
        rng = np.random.default_rng(31)
        cam = random_camera(rng)
        coarse = scale_camera(cam, 4)
        point = backproject(cam, (412.7, 133.1), 5.0)
        px_full = project(cam, point)
        px_coarse = project(coarse, point)
        assert np.allclose(px_coarse, (px_full + 0.5) / 4 - 0.5, atol=1e-9)


class TestCameraIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(41)
        for i in range(10):
            cam = random_camera(rng)
            path = tmp_path / f"cam_{i}.txt"
            save_camera(path, cam)
            back = load_camera(path, cam.width, cam.height)
            assert np.array_equal(back.intrinsics, cam.intrinsics)
            assert np.array_equal(back.rotation, cam.rotation)
            assert np.array_equal(back.translation, cam.translation)
            assert back.depth_range == cam.depth_range

    def test_missing_header_names_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("extrinsics\n" + "1 0 0 0\n0 1 0 0\n0 0 1 0\n\nintrinsic\n"
                        "600 0 320\n0 600 240\n0 0 1\n\n0.5 20\n")
        with pytest.raises(FormatError) as err:
            load_camera(path, 640, 480)
        assert "bad.txt:1" in str(err.value)

    def test_bad_number_names_line(self, tmp_path):
        path = tmp_path / "bad2.txt"
        path.write_text("extrinsic\n1 0 0 0\n0 1 0 zero\n0 0 1 0\n\nintrinsic\n"
                        "600 0 320\n0 600 240\n0 0 1\n\n0.5 20\n")
        with pytest.raises(FormatError) as err:
            load_camera(path, 640, 480)
        assert "bad2.txt:3" in str(err.value)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("extrinsic\n1 0 0 0\n")
        with pytest.raises(FormatError):
            load_camera(path, 640, 480)

    def test_wrong_count_in_row(self, tmp_path):
        path = tmp_path / "bad3.txt"
        path.write_text("extrinsic\n1 0 0 0\n0 1 0 0\n0 0 1\n\nintrinsic\n"
                        "600 0 320\n0 600 240\n0 0 1\n\n0.5 20\n")
        with pytest.raises(FormatError) as err:
            load_camera(path, 640, 480)
        assert ":4:" in str(err.value)
