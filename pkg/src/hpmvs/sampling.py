"""Checkerboard sampling regions for hypothesis propagation.

Eight regions per pixel: four axis-aligned strips and four V-shaped
polylines, one of each per direction. Every offset has odd coordinate
sum, so samples always land on the opposite checkerboard color. A
non-local radius R pushes each region outward along its axis until all
offsets clear the disk of radius R; each extension level doubles a
region's sample count by appending the region translated further out.
"""

import numpy as np

__all__ = [
    "STRIP_BASE",
    "POLYLINE_BASE",
    "REGION_NAMES",
    "region_offsets",
    "build_region_table",
]

# Level-0 templates for the "up" direction, before non-local masking.
STRIP_BASE = ((0, -1), (0, -3), (0, -5), (0, -7), (0, -9))
POLYLINE_BASE = (
    (0, -1), (1, -2), (-1, -2), (2, -3), (-2, -3), (3, -4), (-3, -4), (0, -3),
)

REGION_NAMES = (
    "strip_up", "strip_down", "strip_left", "strip_right",
    "poly_up", "poly_down", "poly_left", "poly_right",
)

# Outward axis per region, indexed like REGION_NAMES.
_AXES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, -1), (0, 1), (-1, 0), (1, 0))

# Sample spacing along the axis: strips are every other pixel, polylines
# are dense rows.
_STEPS = (2, 2, 2, 2, 1, 1, 1, 1)


def _orient(template, region_index):
    """Rotate an "up" template into the region's direction."""
    kind = region_index % 4
    if kind == 0:
        return [(dx, dy) for dx, dy in template]
    if kind == 1:
        return [(dx, -dy) for dx, dy in template]
    if kind == 2:
        return [(dy, dx) for dx, dy in template]
    return [(-dy, dx) for dx, dy in template]


def _mask_shift(offsets, axis, radius):
    """Smallest even outward shift putting every offset beyond `radius`."""
    ax, ay = axis
    shift = 0
    while True:
        if all((dx + shift * ax) ** 2 + (dy + shift * ay) ** 2 > radius * radius
               for dx, dy in offsets):
            return shift
        shift += 2
        if shift > 4 * (radius + 10):
            raise RuntimeError("non-local mask shift did not converge")


def region_offsets(region_index: int, radius: float, n_ext: int) -> list[list[tuple]]:
    """Offsets of one region at every extension level.

    Returns a list of n_ext+1 offset lists; level t has 2^t times the
    level-0 count. All offsets keep odd coordinate sum and, when
    radius > 0, Euclidean norm > radius.
    """
    if region_index not in range(8):
        raise ValueError("region index must be 0..7")
    if n_ext < 0:
        raise ValueError("n_ext must be >= 0")
    base = STRIP_BASE if region_index < 4 else POLYLINE_BASE
    axis = _AXES[region_index]
    step = _STEPS[region_index]
    offsets = _orient(base, region_index)
    shift = _mask_shift(offsets, axis, radius)
    offsets = [(dx + shift * axis[0], dy + shift * axis[1]) for dx, dy in offsets]

    levels = [list(offsets)]
    current = list(offsets)
    for _ in range(n_ext):
        axial = [dx * axis[0] + dy * axis[1] for dx, dy in current]
        extent = max(axial) - min(axial) + step
        appended = [(dx + extent * axis[0], dy + extent * axis[1])
                    for dx, dy in current]
        current = current + appended
        levels.append(list(current))
    return levels


def build_region_table(radius: float, n_ext: int):
    """Pack all 8 regions into dense arrays for the compiled kernels.

    Returns (offsets, counts): offsets is int32 (8, max_count, 2) holding
    (dx, dy) rows, counts is int32 (8, n_ext+1) giving how many leading
    rows are live at each extension level.
    """
    per_region = [region_offsets(i, radius, n_ext) for i in range(8)]
    max_count = max(len(levels[-1]) for levels in per_region)
    offsets = np.zeros((8, max_count, 2), dtype=np.int32)
    counts = np.zeros((8, n_ext + 1), dtype=np.int32)
    for i, levels in enumerate(per_region):
        full = levels[-1]
        offsets[i, : len(full)] = np.asarray(full, dtype=np.int32)
        for t, level in enumerate(levels):
            counts[i, t] = len(level)
    return offsets, counts
