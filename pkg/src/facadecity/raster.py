"""Raster containers, PNG/JPEG I/O and digital-line primitives.

Images are plain numpy arrays indexed ``[row, col]``:

* gray image  -- ``uint8`` of shape ``(h, w)``
* prob mask   -- ``float64`` in ``[0, 1]``
* bin mask    -- ``bool``
* trimap      -- ``uint8`` holding ``BACKGROUND`` / ``UNKNOWN`` / ``FOREGROUND``

Sub-pixel coordinates are ``(x, y)`` with pixel ``(i, j)`` (column i, row j)
covering ``[i, i+1) x [j, j+1)``; its center is ``(i + 0.5, j + 0.5)``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimMismatch, UnreadableFile, UnsupportedFormat

BACKGROUND = 0
UNKNOWN = 128
FOREGROUND = 255

_ALLOWED_FORMATS = {"PNG", "JPEG"}


def as_gray(data) -> np.ndarray:
    """Validate and return a 2-D ``uint8`` array."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"gray image must be 2-D and non-empty, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("gray intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def as_prob(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("probability mask must be 2-D")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return arr


def check_same_shape(*arrays) -> None:
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) > 1:
        raise DimMismatch(f"dimension mismatch: {sorted(shapes)}")


def threshold(prob, t: float) -> np.ndarray:
    """Binary mask that is true exactly where ``prob > t``."""
    return as_prob(prob) > t


def round_half_up(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def to_uint8(values) -> np.ndarray:
    """Round half up and clamp to the 8-bit range."""
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


def luminance(rgb) -> np.ndarray:
    """BT.601 luma of an 8-bit RGB array, rounded half up in exact integer arithmetic."""
    rgb = np.asarray(rgb, dtype=np.int64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def _rescale16(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return ((v * 255 + 32767) // 65535).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read a PNG or JPEG file as an 8-bit grayscale array.

    Colour inputs are reduced to BT.601 luminance (alpha is ignored) and
    16-bit inputs are rescaled to 8 bits.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise UnreadableFile(path)
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as exc:
        raise UnsupportedFormat(path) from exc
    except OSError as exc:
        raise UnreadableFile(path) from exc
    if img.format not in _ALLOWED_FORMATS:
        raise UnsupportedFormat(f"{path}: {img.format}")

    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img)
        if arr.max(initial=0) > 255 or mode.startswith("I;16"):
            return _rescale16(arr)
        return arr.astype(np.uint8)
    if mode == "L":
        return np.array(img, dtype=np.uint8)
    if mode == "1":
        return np.where(np.asarray(img), 255, 0).astype(np.uint8)
    if mode == "LA":
        return np.array(img.getchannel("L"), dtype=np.uint8)
    if mode not in ("RGB", "RGBA"):
        img = img.convert("RGBA")
    return luminance(np.asarray(img)[..., :3])


def load_prob_mask(path) -> np.ndarray:
    """Read an 8-bit mask image and map it to probabilities ``v / 255``."""
    return load_image(path).astype(np.float64) / 255.0


def save_image(path, gray) -> None:
    Image.fromarray(as_gray(gray), mode="L").save(os.fspath(path), format="PNG")


def save_gray_alpha(path, gray, alpha) -> None:
    """Write an 8-bit gray+alpha PNG; ``alpha`` is a matte in ``[0, 1]``."""
    gray = as_gray(gray)
    check_same_shape(gray, alpha)
    la = np.dstack([gray, to_uint8(np.asarray(alpha) * 255.0)])
    Image.fromarray(la, mode="LA").save(os.fspath(path), format="PNG")


def save_matte(path, alpha) -> None:
    save_image(path, to_uint8(np.asarray(alpha) * 255.0))


@dataclass(frozen=True)
class LineSegment:
    """Straight segment between sub-pixel endpoints ``a`` and ``b``.

    ``support`` lists the integer ``(x, y)`` pixels that carry the segment's
    evidence.  When not given it is the rasterization of ``a -> b``.
    """

    a: tuple[float, float]
    b: tuple[float, float]
    support: tuple[tuple[int, int], ...] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        a = (float(self.a[0]), float(self.a[1]))
        b = (float(self.b[0]), float(self.b[1]))
        if a == b:
            raise ValueError("segment must have positive length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.support is None:
            pts = rasterize_segment(self)
            object.__setattr__(self, "support", tuple(map(tuple, pts.tolist())))
        else:
            object.__setattr__(self, "support", tuple((int(x), int(y)) for x, y in self.support))

    @property
    def length(self) -> float:
        return float(np.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1]))

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.a[0] + self.b[0]) / 2.0, (self.a[1] + self.b[1]) / 2.0)

    @property
    def angle(self) -> float:
        """Undirected direction in degrees, ``[0, 180)``."""
        return float(np.degrees(np.arctan2(self.b[1] - self.a[1], self.b[0] - self.a[0])) % 180.0)

    def homogeneous_line(self) -> np.ndarray:
        return np.cross([self.a[0], self.a[1], 1.0], [self.b[0], self.b[1], 1.0])

    def clipped(self, width: int, height: int) -> "LineSegment":
        """Same geometry with support restricted to an image of the given size."""
        pts = [(x, y) for x, y in self.support if 0 <= x < width and 0 <= y < height]
        return LineSegment(self.a, self.b, support=pts)


def _digital_line(x0: int, y0: int, x1: int, y1: int) -> np.ndarray:
    dx, dy = x1 - x0, y1 - y0
    n = max(abs(dx), abs(dy))
    if n == 0:
        return np.array([[x0, y0]], dtype=np.int64)
    k = np.arange(n + 1, dtype=np.int64)
    # round-half-up of x0 + k*dx/n in integer arithmetic
    xs = x0 + np.floor_divide(2 * k * dx + n, 2 * n)
    ys = y0 + np.floor_divide(2 * k * dy + n, 2 * n)
    return np.stack([xs, ys], axis=1)


def rasterize_segment(seg, bounds: tuple[int, int] | None = None) -> np.ndarray:
    """8-connected digital line of a segment as an ``(n, 2)`` array of ``(x, y)``.

    Endpoints are snapped to the pixel containing them.  The line is always
    traced from the lexicographically smaller endpoint so ``a -> b`` and
    ``b -> a`` cover the same pixels.  ``bounds`` is ``(width, height)``.
    """
    if isinstance(seg, LineSegment):
        a, b = seg.a, seg.b
    else:
        a, b = seg
    p = (int(np.floor(a[0])), int(np.floor(a[1])))
    q = (int(np.floor(b[0])), int(np.floor(b[1])))
    if q < p:
        pts = _digital_line(*q, *p)[::-1]
    else:
        pts = _digital_line(*p, *q)
    if bounds is not None:
        w, h = bounds
        keep = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
        pts = pts[keep]
    return pts
