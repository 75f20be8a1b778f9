"""Image containers, color-space conversion and raster I/O shared by the toolkit.

All pixel data is held as float64 numpy arrays of shape (height, width,
channels), row-major, top row first. Photographs are linearized on load
(sRGB decoded for PNG; PFM / Radiance-HDR are already linear).
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

# guard against absurd rasters before allocating (width * height * channels)
MAX_PIXELS = 1 << 28


class ColorSpace(enum.Enum):
    LINEAR_RGB = "linear_rgb"
    SRGB = "srgb"
    LAB = "lab"
    SCALAR = "scalar"  # non-colour data: masks, shadow, depth, normals


@dataclass(frozen=True)
class Image:
    """Immutable multi-channel float raster with a colour-space tag."""

    data: np.ndarray
    space: ColorSpace = ColorSpace.LINEAR_RGB

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (h, w, 1|3), got {arr.shape}")
        if arr.shape[0] * arr.shape[1] * arr.shape[2] > MAX_PIXELS:
            raise ValueError("image dimensions overflow the supported size")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self):
        """Check the per-space value invariants, raising on violation."""
        if not np.isfinite(self.data).all():
            raise ValueError("image contains non-finite values")
        if self.space in (ColorSpace.LINEAR_RGB, ColorSpace.SRGB):
            if self.data.min() < 0:
                raise ValueError(f"{self.space.value} image has negative values")
        return self

    def with_data(self, data) -> "Image":
        return Image(data, self.space)


@dataclass(frozen=True)
class Mask:
    """Binary per-pixel gate, same dimensions as the image it gates."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.dtype != bool:
            uniq = np.unique(arr)
            if not np.isin(uniq, (0, 1)).all():
                raise ValueError("mask values must be binary")
            arr = arr.astype(bool)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def count(self) -> int:
        return int(self.values.sum())

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        return cls(np.ones((height, width), dtype=bool))


# ---------------------------------------------------------------------------
# sRGB transfer function


def srgb_decode(v: np.ndarray) -> np.ndarray:
    """Display-referred sRGB -> linear light (the standard piecewise EOTF)."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_encode(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


# ---------------------------------------------------------------------------
# CIE L*a*b* (D65, 2 degree observer, sRGB primaries)

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_D65 = np.array([0.95047, 1.0, 1.08883])
_LAB_DELTA = 6.0 / 29.0


def _lab_f(t):
    d3 = _LAB_DELTA**3
    return np.where(t > d3, np.cbrt(t), t / (3 * _LAB_DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(u):
    return np.where(u > _LAB_DELTA, u**3, 3 * _LAB_DELTA**2 * (u - 4.0 / 29.0))


def rgb_to_lab(img: Image) -> Image:
    """Linear RGB -> CIE L*a*b*. Input values are clipped to [0,1] first."""
    if img.space is not ColorSpace.LINEAR_RGB:
        raise ValueError(f"rgb_to_lab expects linear RGB, got {img.space.value}")
    if img.channels != 3:
        raise ValueError("rgb_to_lab expects a 3-channel image")
    lab = lab_from_linear(img.data)
    return Image(lab, ColorSpace.LAB)


def lab_from_linear(rgb: np.ndarray) -> np.ndarray:
    """Array-level linear-RGB -> LAB on (..., 3) data."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    xyz = rgb @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _D65)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(img: Image) -> Image:
    if img.space is not ColorSpace.LAB:
        raise ValueError(f"lab_to_rgb expects LAB input, got {img.space.value}")
    lab = img.data
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _D65
    rgb = np.clip(xyz @ _XYZ_TO_RGB.T, 0.0, 1.0)
    return Image(rgb, ColorSpace.LINEAR_RGB)


def lab_jacobian(rgb: np.ndarray) -> np.ndarray:
    """d(Lab)/d(linear rgb) at each pixel of an (..., 3) array.

    The clip to [0,1] applied by the forward conversion zeroes the
    derivative outside that range. _lab_f is C1 (the two branches meet with
    equal slope), so the Jacobian is continuous.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    inside = ((rgb > 0.0) & (rgb < 1.0)).astype(np.float64)
    xyz = np.clip(rgb, 0.0, 1.0) @ _RGB_TO_XYZ.T
    t = xyz / _D65
    d3 = _LAB_DELTA**3
    fprime = np.where(t > d3, np.cbrt(t**-2) / 3.0, 1.0 / (3 * _LAB_DELTA**2))
    # df_i/drgb_j = f'(t_i) / white_i * M[i, j] * clip-gate(j)
    dfd = fprime[..., :, None] / _D65[:, None] * _RGB_TO_XYZ * inside[..., None, :]
    lab_rows = np.array([[0.0, 116.0, 0.0], [500.0, -500.0, 0.0], [0.0, 200.0, -200.0]])
    return lab_rows @ dfd


def luminance(img: Image) -> np.ndarray:
    """Rec.709 luminance of a linear-RGB image, as an (h, w) array."""
    if img.channels == 1:
        return img.data[..., 0]
    return img.data @ np.array([0.2126, 0.7152, 0.0722])


# ---------------------------------------------------------------------------
# Downscaling


def downscale(img: Image, factor: int) -> Image:
    """Box-filter average over factor x factor blocks.

    Trailing rows/columns that do not fill a whole block are cropped.
    """
    if factor < 1:
        raise ValueError("downscale factor must be >= 1")
    if factor == 1:
        return img
    h = (img.height // factor) * factor
    w = (img.width // factor) * factor
    if h == 0 or w == 0:
        raise ValueError("image smaller than the downscale factor")
    d = img.data[:h, :w]
    d = d.reshape(h // factor, factor, w // factor, factor, img.channels)
    return Image(d.mean(axis=(1, 3)), img.space)


def downscale_masked(img: Image, mask: Mask, factor: int) -> tuple[Image, Mask]:
    """Masked box filter: each block averages only its valid pixels.

    A block is valid in the output mask when it has at least one valid
    contributor; fully-invalid blocks get value 0.
    """
    if factor < 1:
        raise ValueError("downscale factor must be >= 1")
    h = (img.height // factor) * factor
    w = (img.width // factor) * factor
    if h == 0 or w == 0:
        raise ValueError("image smaller than the downscale factor")
    m = mask.values[:h, :w].astype(np.float64)
    d = img.data[:h, :w] * m[:, :, None]
    blocks = d.reshape(h // factor, factor, w // factor, factor, img.channels)
    counts = m.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))
    summed = blocks.sum(axis=(1, 3))
    out = np.zeros_like(summed)
    valid = counts > 0
    out[valid] = summed[valid] / counts[valid][:, None]
    return Image(out, img.space), Mask(valid)


# ---------------------------------------------------------------------------
# File I/O: PNG via OpenCV, PFM hand-rolled, Radiance-HDR via OpenCV


def load_image(path, format: str | None = None) -> Image:
    """Load a PNG (8/16-bit, sRGB decoded), PFM or Radiance-HDR raster.

    Returns a linearized image: LINEAR_RGB for colour data, SCALAR for
    single-channel PFM (depth maps and the like).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "png":
        return _load_png(path)
    if fmt == "pfm":
        return _load_pfm(path)
    if fmt == "hdr":
        return _load_hdr(path)
    raise ValueError(f"unsupported image format: {fmt!r}")


def _load_png(path: Path) -> Image:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"unreadable PNG: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported PNG bit depth ({raw.dtype}) in {path}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = raw[:, :, ::-1]  # BGR -> RGB
    linear = srgb_decode(raw.astype(np.float64) / scale)
    return Image(linear, ColorSpace.LINEAR_RGB)


def save_png(img: Image, path, bits: int = 16):
    """Write a PNG, sRGB-encoding colour data and linearly quantizing SCALAR."""
    if bits not in (8, 16):
        raise ValueError("PNG bit depth must be 8 or 16")
    if img.space is ColorSpace.LINEAR_RGB:
        enc = srgb_encode(img.data)
    elif img.space is ColorSpace.SCALAR:
        enc = np.clip(img.data, 0.0, 1.0)
    else:
        raise ValueError(f"cannot save {img.space.value} image as PNG")
    top = (1 << bits) - 1
    q = np.round(enc * top).astype(np.uint16 if bits == 16 else np.uint8)
    if q.shape[2] == 3:
        q = q[:, :, ::-1]
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), q):
        raise IOError(f"failed to write PNG: {path}")


def _load_pfm(path: Path) -> Image:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: {path}")
        dims = f.readline().split()
        while len(dims) < 2:  # some writers put width/height on two lines
            dims += f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        if width * height * channels > MAX_PIXELS:
            raise ValueError("PFM dimensions overflow the supported size")
        scale = float(f.readline().strip())
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        buf = f.read(count * 4)
        if len(buf) < count * 4:
            raise IOError(f"truncated PFM payload in {path}")
        data = np.frombuffer(buf, dtype=endian + "f4", count=count)
    data = data.reshape(height, width, channels).astype(np.float64)
    data = np.flipud(data)  # PFM scanlines run bottom-to-top
    space = ColorSpace.LINEAR_RGB if channels == 3 else ColorSpace.SCALAR
    return Image(data, space)


def save_pfm(img: Image, path):
    """Write little-endian PFM (scale field -1.0), bottom-to-top scanlines."""
    data = img.data.astype(np.float32)
    channels = img.channels
    header = b"PF\n" if channels == 3 else b"Pf\n"
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{img.width} {img.height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).tobytes())


def _load_hdr(path: Path) -> Image:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None or raw.dtype != np.float32:
        raise IOError(f"unreadable Radiance-HDR file: {path}")
    rgb = raw[:, :, ::-1].astype(np.float64)
    return Image(rgb, ColorSpace.LINEAR_RGB)


def save_image(img: Image, path):
    """Dispatch on extension: .png (16-bit) or .pfm."""
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        save_png(img, path)
    elif suffix == ".pfm":
        save_pfm(img, path)
    else:
        raise ValueError(f"unsupported output format: {suffix!r}")


def load_scalar_png(path) -> Image:
    """Read a gray PNG as linearly-coded scalar data (no sRGB decode)."""
    path = Path(path)
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"unreadable PNG: {path}")
    scale = 255.0 if raw.dtype == np.uint8 else 65535.0
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    return Image((raw.astype(np.float64) / scale)[..., None], ColorSpace.SCALAR)


def load_mask(path) -> Mask:
    """Read an 8-bit PNG mask, thresholded at 128."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such mask file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise IOError(f"unreadable mask PNG: {path}")
    return Mask(raw >= 128)


def save_mask(mask: Mask, path):
    if not cv2.imwrite(str(path), mask.values.astype(np.uint8) * 255):
        raise IOError(f"failed to write mask: {path}")
