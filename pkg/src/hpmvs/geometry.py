"""Pinhole cameras, plane hypotheses, and plane-induced homographies.

All geometry runs in double precision. Depth is the z-coordinate of a
point in the camera frame (not the Euclidean ray length); normals are
unit vectors in the camera frame, oriented toward the camera.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegeneratePlaneError, FormatError

__all__ = [
    "CameraModel",
    "Hypothesis",
    "PlaneParams",
    "project",
    "backproject",
    "viewing_ray",
    "orient_camera_facing",
    "plane_from_hypothesis",
    "hypothesis_from_plane",
    "relative_pose",
    "homography",
    "load_camera",
    "save_camera",
    "scale_camera",
]


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera with pose and a working depth range.

    Attributes:
        intrinsics: 3x3 upper-triangular K, pixels.
        rotation: 3x3 world-to-camera rotation.
        translation: camera-frame translation (X_cam = R @ X_world + t).
        depth_range: (d_min, d_max), scene units, 0 < d_min < d_max.
        width, height: image size in pixels.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    depth_range: tuple[float, float]
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if K.shape != (3, 3) or abs(K[2, 2] - 1.0) > 1e-12:
            raise ValueError("intrinsics must be 3x3 with K[2,2] == 1")
        if abs(K[1, 0]) > 1e-12 or abs(K[2, 0]) > 1e-12 or abs(K[2, 1]) > 1e-12:
            raise ValueError("intrinsics must be upper triangular")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        d_min, d_max = self.depth_range
        if not (0 < d_min < d_max):
            raise ValueError(f"bad depth range [{d_min}, {d_max}]")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points_world: np.ndarray) -> np.ndarray:
        return points_world @ self.rotation.T + self.translation

    def to_world(self, points_cam: np.ndarray) -> np.ndarray:
        return (points_cam - self.translation) @ self.rotation


@dataclass(frozen=True)
class Hypothesis:
    """Per-pixel plane candidate: z-depth along the pixel ray plus a unit
    normal oriented toward the camera."""

    depth: float
    normal: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        object.__setattr__(self, "normal", n)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("hypothesis normal must be unit length")
        if self.depth <= 0:
            raise ValueError("hypothesis depth must be positive")


@dataclass(frozen=True)
class PlaneParams:
    """Homogeneous plane a*X + b*Y + c*Z + d = 0 with unit-norm coefficients,
    in reference-camera coordinates."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(4)
        object.__setattr__(self, "coeffs", c)
        if abs(np.linalg.norm(c) - 1.0) > 1e-9:
            raise ValueError("plane coefficients must be unit norm")

    @property
    def normal(self) -> np.ndarray:
        return self.coeffs[:3]

    @property
    def offset(self) -> float:
        return float(self.coeffs[3])


def project(camera: CameraModel, point_cam: np.ndarray) -> np.ndarray:
    """Perspective-project a camera-frame 3D point to pixel coordinates."""
    p = np.asarray(point_cam, dtype=np.float64)
    if p[2] <= 0:
        raise ValueError("point is behind the camera")
    uvw = camera.intrinsics @ p
    return uvw[:2] / uvw[2]


def backproject(camera: CameraModel, pixel, depth: float) -> np.ndarray:
    """Lift a pixel to the camera-frame 3D point at the given z-depth."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    x, y = float(pixel[0]), float(pixel[1])
    K = camera.intrinsics
    mx = (x - K[0, 2]) / K[0, 0] - K[0, 1] * (y - K[1, 2]) / (K[0, 0] * K[1, 1])
    my = (y - K[1, 2]) / K[1, 1]
    return np.array([depth * mx, depth * my, depth])


def viewing_ray(camera: CameraModel, pixel) -> np.ndarray:
    """Unnormalized ray direction through a pixel (z component = 1)."""
    return backproject(camera, pixel, 1.0)


def orient_camera_facing(normal: np.ndarray, ray: np.ndarray) -> np.ndarray:
    """Flip `normal` if needed so it faces the camera along `ray`.

    Falls back to the anti-ray direction when the normal is numerically
    orthogonal to the ray (a grazing plane carries no useful orientation).
    """
    n = np.asarray(normal, dtype=np.float64)
    d = float(n @ ray)
    if d > 0:
        n = -n
        d = -d
    if abs(d) < 1e-12 * np.linalg.norm(ray):
        r = np.asarray(ray, dtype=np.float64)
        n = -r / np.linalg.norm(r)
    return n


def plane_from_hypothesis(camera: CameraModel, pixel, h: Hypothesis) -> PlaneParams:
    """Plane through the hypothesis point with the hypothesis normal."""
    point = backproject(camera, pixel, h.depth)
    n = h.normal
    d = -float(n @ point)
    coeffs = np.array([n[0], n[1], n[2], d])
    return PlaneParams(coeffs / np.linalg.norm(coeffs))


def hypothesis_from_plane(camera: CameraModel, pixel, plane: PlaneParams) -> Hypothesis:
    """Intersect the pixel ray with a plane; inverse of plane_from_hypothesis."""
    ray = viewing_ray(camera, pixel)
    denom = float(plane.normal @ ray)
    if abs(denom) < 1e-15:
        raise DegeneratePlaneError("plane is parallel to the viewing ray")
    depth = -plane.offset / denom
    if depth <= 0:
        raise DegeneratePlaneError("plane intersects the ray behind the camera")
    normal = orient_camera_facing(plane.normal / np.linalg.norm(plane.normal), ray)
    return Hypothesis(depth=depth, normal=normal)


def relative_pose(ref: CameraModel, src: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Pose mapping reference-camera coordinates into the source camera."""
    R_rel = src.rotation @ ref.rotation.T
    t_rel = src.translation - R_rel @ ref.translation
    return R_rel, t_rel


def homography(ref: CameraModel, src: CameraModel, pixel, h: Hypothesis) -> np.ndarray:
    """Plane-induced homography mapping reference pixels to source pixels.

    The plane is taken from `h` at `pixel`. Raises DegeneratePlaneError when
    the plane passes through the reference camera center. The result is
    normalized so H[2,2] == 1 whenever that entry is nonzero.
    """
    plane = plane_from_hypothesis(ref, pixel, h)
    n = plane.normal
    d = plane.offset
    if abs(d) < 1e-12:
        raise DegeneratePlaneError("plane passes through the reference camera center")
    R_rel, t_rel = relative_pose(ref, src)
    H = src.intrinsics @ (R_rel - np.outer(t_rel, n) / d) @ np.linalg.inv(ref.intrinsics)
    if abs(H[2, 2]) > 1e-15:
        H = H / H[2, 2]
    return H


def scale_camera(camera: CameraModel, factor: int) -> CameraModel:
    """Camera for an image downsampled by an integer factor.

    Pixel centers map as x_coarse = (x + 0.5)/factor - 0.5, matching the
    block-center convention of the image pyramid.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return camera
    K = camera.intrinsics.copy()
    K[0, 0] /= factor
    K[1, 1] /= factor
    K[0, 1] /= factor
    K[0, 2] = (K[0, 2] + 0.5) / factor - 0.5
    K[1, 2] = (K[1, 2] + 0.5) / factor - 0.5
    return CameraModel(
        intrinsics=K,
        rotation=camera.rotation,
        translation=camera.translation,
        depth_range=camera.depth_range,
        width=-(-camera.width // factor),
        height=-(-camera.height // factor),
    )


def _parse_floats(path, lineno: int, line: str, count: int) -> list[float]:
    parts = line.split()
    if len(parts) != count:
        raise FormatError(path, lineno, f"expected {count} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise FormatError(path, lineno, f"bad number: {exc}") from None


def load_camera(path, width: int, height: int) -> CameraModel:
    """Read a camera text file.

    Layout: `extrinsic` header, 3 rows of [R|t], blank line, `intrinsic`
    header, 3 rows of K, blank line, then `d_min d_max`.
    """
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(path, 0, f"cannot read camera file: {exc}") from None
    # Tolerate extra blank lines but keep real line numbers for messages.
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip()]
    if len(lines) < 9:
        raise FormatError(path, len(raw), "truncated camera file")
    if lines[0][1].lower() != "extrinsic":
        raise FormatError(path, lines[0][0], "expected 'extrinsic' header")
    Rt = np.array([_parse_floats(path, lines[i][0], lines[i][1], 4) for i in (1, 2, 3)])
    if lines[4][1].lower() != "intrinsic":
        raise FormatError(path, lines[4][0], "expected 'intrinsic' header")
    K = np.array([_parse_floats(path, lines[i][0], lines[i][1], 3) for i in (5, 6, 7)])
    d_min, d_max = _parse_floats(path, lines[8][0], lines[8][1], 2)
    try:
        return CameraModel(
            intrinsics=K,
            rotation=Rt[:, :3],
            translation=Rt[:, 3],
            depth_range=(d_min, d_max),
            width=width,
            height=height,
        )
    except ValueError as exc:
        raise FormatError(path, lines[1][0], str(exc)) from None


def save_camera(path, camera: CameraModel) -> None:
    """Write a camera in the text format accepted by load_camera."""
    Rt = np.hstack([camera.rotation, camera.translation.reshape(3, 1)])
    rows_rt = "\n".join(" ".join(repr(float(v)) for v in row) for row in Rt)
    rows_k = "\n".join(" ".join(repr(float(v)) for v in row) for row in camera.intrinsics)
    d_min, d_max = camera.depth_range
    text = (
        f"extrinsic\n{rows_rt}\n\nintrinsic\n{rows_k}\n\n"
        f"{float(d_min)!r} {float(d_max)!r}\n"
    )
    Path(path).write_text(text)
