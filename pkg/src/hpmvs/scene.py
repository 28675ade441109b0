"""Calibrated scene container and directory ingestion.

A scene directory holds `images/` (8-bit PNG or PPM) and `cams/` with one
`cam_<name>.txt` per image in the camera text format. Views are ordered
by image file name.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraModel, load_camera
from .imaging import load_image_gray

__all__ = ["View", "Scene", "load_scene"]

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class View:
    """One calibrated image."""

    name: str
    camera: CameraModel
    image: np.ndarray  # float32 luma in [0,1], shape (height, width)

    def __post_init__(self):
        h, w = self.image.shape
        if (w, h) != (self.camera.width, self.camera.height):
            raise ValueError(
                f"view {self.name}: image is {w}x{h} but camera says "
                f"{self.camera.width}x{self.camera.height}"
            )


@dataclass(frozen=True)
class Scene:
    """An ordered collection of views sharing one world frame."""

    views: tuple

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        names = [v.name for v in self.views]
        if len(set(names)) != len(names):
            raise ValueError("duplicate view names")

    def __len__(self):
        return len(self.views)

    def __getitem__(self, i) -> View:
        return self.views[i]

    def source_indices(self, ref_index: int) -> list[int]:
        return [i for i in range(len(self.views)) if i != ref_index]


def load_scene(root) -> Scene:
    """Load all views from a scene directory."""
    root = Path(root)
    img_dir = root / "images"
    cam_dir = root / "cams"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"missing image directory: {img_dir}")
    if not cam_dir.is_dir():
        raise FileNotFoundError(f"missing camera directory: {cam_dir}")
    paths = sorted(p for p in img_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    views = []
    for path in paths:
        cam_path = cam_dir / f"cam_{path.stem}.txt"
        if not cam_path.is_file():
            raise FileNotFoundError(f"missing camera file: {cam_path}")
        image = load_image_gray(path)
        h, w = image.shape
        camera = load_camera(cam_path, w, h)
        views.append(View(name=path.stem, camera=camera, image=image))
    if not views:
        raise FormatError(img_dir, 0, "no images found")
    return Scene(views=tuple(views))
