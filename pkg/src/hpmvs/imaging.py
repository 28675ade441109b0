"""Image and map I/O, pyramid downsampling, joint bilateral upsampling.

Dense per-pixel maps come in two flavors: ScalarField (depth, cost) and
VectorField (normals), both carrying an explicit validity mask. Gray
images are plain float32 arrays in [0,1]. On disk, maps persist as PFM
(little-endian, bottom-up rows, scale -1.0) with NaN marking invalid
pixels; images are 8-bit PNG/PPM decoded to luma.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

__all__ = [
    "ScalarField",
    "VectorField",
    "load_image_gray",
    "save_image_gray",
    "read_pfm",
    "write_pfm",
    "read_scalar_field",
    "write_scalar_field",
    "read_vector_field",
    "write_vector_field",
    "downsample",
    "joint_bilateral_upsample",
]

LUMA = (0.299, 0.587, 0.114)


@dataclass
class ScalarField:
    """Dense per-pixel scalar map (depth or cost) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("scalar field needs matching 2-d values and mask")
        if not np.isfinite(self.values[self.valid]).all():
            raise ValueError("valid entries must be finite")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class VectorField:
    """Dense per-pixel unit-vector map (normals) with a validity mask."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("vector field values must be (H, W, 3)")
        if self.values.shape[:2] != self.valid.shape:
            raise ValueError("mask shape must match the field")
        norms = np.linalg.norm(self.values[self.valid], axis=-1)
        if norms.size and (np.abs(norms - 1.0) > 1e-5).any():
            raise ValueError("valid vectors must be unit length")

    @property
    def shape(self):
        return self.valid.shape


def load_image_gray(path) -> np.ndarray:
    """Decode an 8-bit image file to a float32 luma array in [0,1]."""
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
        else:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
            arr = (LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1]
                   + LUMA[2] * rgb[..., 2]) / 255.0
    return np.clip(arr, 0.0, 1.0)


def save_image_gray(path, values: np.ndarray) -> None:
    """Write a [0,1] float array as an 8-bit grayscale PNG/PPM."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data: np.ndarray) -> None:
    """Write a 1- or 3-channel float32 PFM, bottom-up, little-endian."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError(f"PFM supports 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())


def _read_pfm_token(f, path, what):
    token = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise FormatError(path, 0, f"unexpected end of file reading {what}")
        if ch in b" \t\r\n":
            if token:
                return token
            continue
        token += ch


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into float32 (H, W) or (H, W, 3), top-down rows."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_pfm_token(f, path, "magic")
        if magic == b"Pf":
            channels = 1
        elif magic == b"PF":
            channels = 3
        else:
            raise FormatError(path, 1, f"not a PFM file (magic {magic!r})")
        try:
            w = int(_read_pfm_token(f, path, "width"))
            h = int(_read_pfm_token(f, path, "height"))
            scale = float(_read_pfm_token(f, path, "scale"))
        except ValueError as exc:
            raise FormatError(path, 2, f"bad PFM header: {exc}") from None
        if w <= 0 or h <= 0:
            raise FormatError(path, 2, f"bad PFM dimensions {w}x{h}")
        if scale == 0:
            raise FormatError(path, 3, "PFM scale must be nonzero")
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise FormatError(path, 4, "truncated PFM payload")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return arr.reshape(shape)[::-1].copy()


def write_scalar_field(path, field: ScalarField) -> None:
    out = field.values.astype(np.float32)
    out = np.where(field.valid, out, np.float32(np.nan))
    write_pfm(path, out)


def read_scalar_field(path) -> ScalarField:
    arr = read_pfm(path)
    if arr.ndim != 2:
        raise FormatError(path, 1, "expected single-channel PFM")
    valid = np.isfinite(arr)
    return ScalarField(np.where(valid, arr, 0.0), valid)


def write_vector_field(path, field: VectorField) -> None:
    out = field.values.astype(np.float32)
    out = np.where(field.valid[..., None], out, np.float32(np.nan))
    write_pfm(path, out)


def read_vector_field(path) -> VectorField:
    arr = read_pfm(path)
    if arr.ndim != 3:
        raise FormatError(path, 1, "expected 3-channel PFM")
    valid = np.isfinite(arr).all(axis=-1)
    vals = np.where(valid[..., None], arr, 0.0).astype(np.float64)
    norms = np.linalg.norm(vals, axis=-1)
    ok = valid & (norms > 1e-12)
    vals[ok] /= norms[ok, None]
    vals[~ok] = 0.0
    return VectorField(vals, ok)


# ---------------------------------------------------------------------------
# Pyramid resampling


def _pad_blocks(arr: np.ndarray, factor: int, fill) -> np.ndarray:
    h, w = arr.shape[:2]
    ph = -h % factor
    pw = -w % factor
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, constant_values=fill)


def _block_view(arr: np.ndarray, factor: int) -> np.ndarray:
    """Reshape (H, W, ...) into (Hc, Wc, factor*factor, ...)."""
    h, w = arr.shape[:2]
    hc, wc = h // factor, w // factor
    tail = arr.shape[2:]
    out = arr.reshape(hc, factor, wc, factor, *tail)
    out = np.moveaxis(out, 2, 1)
    return out.reshape(hc, wc, factor * factor, *tail)


def _lower_median(blocks: np.ndarray, valid: np.ndarray):
    """Per-block lower median of valid entries: sorted[(n-1)//2]."""
    vals = np.where(valid, blocks, np.inf)
    vals = np.sort(vals, axis=-1)
    n = valid.sum(axis=-1)
    idx = np.maximum(n - 1, 0) // 2
    med = np.take_along_axis(vals, idx[..., None], axis=-1)[..., 0]
    ok = n > 0
    return np.where(ok, med, 0.0), ok


def downsample(item, factor: int):
    """Shrink an image or field by an integer factor (ceil-division dims).

    Images average over each block; scalar fields take the median of the
    valid entries (discontinuities must not invent intermediate depths);
    vector fields average and renormalize. Blocks with nothing valid come
    out masked.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    if isinstance(item, ScalarField):
        if factor == 1:
            return ScalarField(item.values.copy(), item.valid.copy())
        vals = _block_view(_pad_blocks(item.values, factor, 0.0), factor)
        mask = _block_view(_pad_blocks(item.valid, factor, False), factor)
        med, ok = _lower_median(vals, mask)
        return ScalarField(med, ok)
    if isinstance(item, VectorField):
        if factor == 1:
            return VectorField(item.values.copy(), item.valid.copy())
        vals = _block_view(_pad_blocks(item.values, factor, 0.0), factor)
        mask = _block_view(_pad_blocks(item.valid, factor, False), factor)
        summed = (vals * mask[..., None]).sum(axis=2)
        norms = np.linalg.norm(summed, axis=-1)
        ok = mask.any(axis=2) & (norms > 1e-12)
        out = np.zeros_like(summed)
        out[ok] = summed[ok] / norms[ok, None]
        return VectorField(out, ok)
    arr = np.asarray(item)
    if arr.ndim != 2:
        raise ValueError("images must be 2-d gray arrays")
    if factor == 1:
        return arr.copy()
    padded = _pad_blocks(arr.astype(np.float64), factor, np.nan)
    blocks = _block_view(padded, factor)
    with np.errstate(invalid="ignore"):
        out = np.nanmean(blocks, axis=-1)
    return out.astype(arr.dtype, copy=False)


def joint_bilateral_upsample(field, guide: np.ndarray, factor: int,
                             sigma_spatial: float | None = None,
                             sigma_range: float = 0.1):
    """Upsample a coarse field to guide resolution with bilateral weights.

    Spatial distances are measured on the coarse grid; sigma_spatial is
    given in full-resolution pixels and defaults to the upsample factor,
    so the default kernel reach is one coarse cell. Range differences are
    taken between the guide value at the output pixel and the guide at
    each coarse sample's full-resolution center. Output pixels whose
    accumulated weight over valid samples is below 1e-12 come out masked.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if sigma_spatial is None:
        sigma_spatial = float(factor)
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise ValueError("sigma values must be positive")
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim != 2:
        raise ValueError("guide must be a 2-d gray image")
    gh, gw = guide.shape
    is_vector = isinstance(field, VectorField)
    if not isinstance(field, (ScalarField, VectorField)):
        raise ValueError("field must be a ScalarField or VectorField")
    ch, cw = field.shape
    if abs(math.ceil(gh / factor) - ch) > 1 or abs(math.ceil(gw / factor) - cw) > 1:
        raise ValueError(
            f"coarse {cw}x{ch} does not match guide {gw}x{gh} at factor {factor}"
        )

    sigma_c = sigma_spatial / factor  # coarse-grid units
    radius = max(1, math.ceil(2.0 * sigma_c))
    inv2ss = 1.0 / (2.0 * sigma_c * sigma_c)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)

    ys, xs = np.mgrid[0:gh, 0:gw]
    cxf = (xs + 0.5) / factor - 0.5
    cyf = (ys + 0.5) / factor - 0.5
    bx = np.floor(cxf).astype(np.int64)
    by = np.floor(cyf).astype(np.int64)

    vals = field.values
    fvalid = field.valid
    acc_w = np.zeros((gh, gw))
    acc_v = np.zeros((gh, gw, 3) if is_vector else (gh, gw))

    for dj in range(-radius, radius + 1):
        cj = by + dj
        in_j = (cj >= 0) & (cj < ch)
        cjc = np.clip(cj, 0, ch - 1)
        for di in range(-radius, radius + 1):
            ci = bx + di
            in_i = (ci >= 0) & (ci < cw)
            cic = np.clip(ci, 0, cw - 1)
            ok = in_j & in_i & fvalid[cjc, cic]
            if not ok.any():
                continue
            dx = ci - cxf
            dy = cj - cyf
            # Guide intensity at each coarse sample's full-res center.
            sx = np.clip(np.round((ci + 0.5) * factor - 0.5).astype(np.int64), 0, gw - 1)
            sy = np.clip(np.round((cj + 0.5) * factor - 0.5).astype(np.int64), 0, gh - 1)
            d_int = guide - guide[sy, sx]
            w = np.exp(-(dx * dx + dy * dy) * inv2ss - d_int * d_int * inv2sr)
            w = np.where(ok, w, 0.0)
            acc_w += w
            if is_vector:
                acc_v += w[..., None] * vals[cjc, cic]
            else:
                acc_v += w * vals[cjc, cic]

    valid = acc_w >= 1e-12
    if is_vector:
        out = np.zeros_like(acc_v)
        np.divide(acc_v, acc_w[..., None], out=out, where=valid[..., None])
        norms = np.linalg.norm(out, axis=-1)
        valid = valid & (norms > 1e-12)
        out[valid] /= norms[valid, None]
        out[~valid] = 0.0
        return VectorField(out, valid)
    out = np.zeros_like(acc_v)
    np.divide(acc_v, acc_w, out=out, where=valid)
    return ScalarField(out, valid)
