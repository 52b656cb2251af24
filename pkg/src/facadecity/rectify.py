"""Facade rectification from two vanishing points.

All geometry is in homogeneous image coordinates with the pixel-center
convention of :mod:`facadecity.raster`; an INFINITE vanishing point is the
direction vector ``(cos t, sin t, 0)``, so pencils through it need no
special case.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy import ndimage

from .errors import DegenerateQuad, NumericallyUnstable, SingularSystem
from .raster import as_gray, check_same_shape, to_uint8
from .vanish import VanishingPoint


@dataclass(frozen=True)
class FacadeQuad:
    """Corners ordered top-left, top-right, bottom-right, bottom-left."""

    corners: np.ndarray
    vps: tuple = ()

    @property
    def tl(self):
        return self.corners[0]

    @property
    def tr(self):
        return self.corners[1]

    @property
    def br(self):
        return self.corners[2]

    @property
    def bl(self):
        return self.corners[3]

    def side_lengths(self):
        c = self.corners
        return np.hypot(*(np.roll(c, -1, axis=0) - c).T)


@dataclass(frozen=True)
class CameraGuess:
    principal_point: tuple[float, float]
    focal: float
    approximate: bool = False
    skew: float = 0.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal must be positive")

    @property
    def K(self):
        cx, cy = self.principal_point
        return np.array([[self.focal, self.skew, cx], [0.0, self.focal, cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RectifiedFacade:
    texture: np.ndarray
    matte: np.ndarray
    aspect: float
    world_width: float | None = None
    world_height: float | None = None
    homography: np.ndarray | None = field(default=None, repr=False)
    focal: float | None = None
    approximate_focal: bool = False

    def sidecar(self) -> dict:
        return {
            "aspect": self.aspect,
            "world_width": self.world_width,
            "world_height": self.world_height,
            "focal": self.focal,
            "approximate_focal": self.approximate_focal,
        }


def _hom(p):
    return np.array([p[0], p[1], 1.0])


def _normalize_line(l):
    return l / np.hypot(l[0], l[1])


def _mask_points(mask):
    """Pixel centers of the convex hull vertices of a binary mask."""
    m = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(m)
    if len(xs) == 0:
        raise DegenerateQuad("empty mask")
    pts = np.column_stack([xs, ys]).astype(np.float64) + 0.5
    if len(pts) > 3:
        hull = cv2.convexHull(pts.astype(np.float32)).reshape(-1, 2).astype(np.float64)
        # cv2 works in float32; recover exact centers
        pts = np.round(hull - 0.5) + 0.5
    return pts


def _bbox_points(mask):
    m = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(m)
    if len(xs) == 0:
        raise DegenerateQuad("empty mask")
    x0, x1 = xs.min() + 0.5, xs.max() + 0.5
    y0, y1 = ys.min() + 0.5, ys.max() + 0.5
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def _tangent_lines(vp_h, pts, tol=1e-9):
    """The two lines through ``vp_h`` that touch the point set without crossing it."""
    ph = np.column_stack([pts, np.ones(len(pts))])
    if vp_h[2] != 0:
        v = vp_h / vp_h[2]
        rel = pts - v[:2]
        if np.all(np.hypot(*rel.T) < 1e-9):
            raise DegenerateQuad("vanishing point coincides with the facade")
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        # rotate so the angular spread does not wrap
        ref = np.arctan2(rel[:, 1].mean(), rel[:, 0].mean())
        spread = (ang - ref + np.pi) % (2 * np.pi) - np.pi
        if spread.max() - spread.min() >= np.pi - 1e-9:
            raise DegenerateQuad("vanishing point lies inside the facade hull")
        lines = [np.cross(v, ph[spread.argmin()]), np.cross(v, ph[spread.argmax()])]
    else:
        d = vp_h[:2] / np.hypot(*vp_h[:2])
        normal = np.array([-d[1], d[0]])
        off = pts @ normal
        lines = [np.cross(vp_h, ph[off.argmin()]), np.cross(vp_h, ph[off.argmax()])]
    lines = [_normalize_line(l) for l in lines]
    for l in lines:
        s = ph @ l
        if not (np.all(s >= -1e-6) or np.all(s <= 1e-6)):
            raise DegenerateQuad("tangent construction failed")
    return lines


def _intersect(l1, l2):
    p = np.cross(l1, l2)
    if abs(p[2]) < 1e-12 * max(1.0, np.abs(p[:2]).max()):
        raise DegenerateQuad("pencil lines are parallel")
    return p[:2] / p[2]


def bounding_quadrangle(mask, vp1: VanishingPoint, vp2: VanishingPoint, hull: str = "mask",
                        min_side: float = 2.0) -> FacadeQuad:
    """Smallest quadrangle whose sides pass through the two VPs and enclose the mask.

    ``vp1``'s pencil gives the top and bottom sides, ``vp2``'s the left and
    right.  Tangents are taken to the pixel centers of the mask's convex
    hull (``hull="mask"``) or to the corners of its bounding box
    (``hull="bbox"``).
    """
    if vp1 == vp2:
        raise DegenerateQuad("the two vanishing points are identical")
    pts = _mask_points(mask) if hull == "mask" else _bbox_points(mask)
    h1 = _tangent_lines(vp1.homogeneous(), pts)
    h2 = _tangent_lines(vp2.homogeneous(), pts)
    center = pts.mean(axis=0)

    # top/bottom: order vp1 lines by their y at the centroid column
    def y_at(l):
        if abs(l[1]) < 1e-12:
            raise DegenerateQuad("horizontal pencil line is vertical")
        return -(l[0] * center[0] + l[2]) / l[1]

    def x_at(l):
        if abs(l[0]) < 1e-12:
            raise DegenerateQuad("vertical pencil line is horizontal")
        return -(l[1] * center[1] + l[2]) / l[0]

    top, bottom = sorted(h1, key=y_at)
    left, right = sorted(h2, key=x_at)
    corners = np.array([
        _intersect(top, left), _intersect(top, right),
        _intersect(bottom, right), _intersect(bottom, left),
    ])
    quad = FacadeQuad(corners, (vp1, vp2))
    sides = quad.side_lengths()
    if not np.all(np.isfinite(corners)) or sides.min() < min_side or polygon_area(corners) < min_side ** 2:
        raise DegenerateQuad(f"quadrangle too small: sides {np.round(sides, 3).tolist()}")
    if not is_convex(corners):
        raise DegenerateQuad("quadrangle is not convex")
    return quad


def polygon_area(corners) -> float:
    x, y = np.asarray(corners, dtype=np.float64).T
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def is_convex(corners) -> bool:
    c = np.asarray(corners, dtype=np.float64)
    e = np.roll(c, -1, axis=0) - c
    z = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(z > 0) or np.all(z < 0))


def order_horizontal_first(vp_a: VanishingPoint, vp_b: VanishingPoint, point):
    """Return the pair with the more horizontal VP (as seen from ``point``) first."""
    def tilt(vp):
        d = vp.direction_from(point)
        return min(d, 180.0 - d)
    return (vp_a, vp_b) if tilt(vp_a) <= tilt(vp_b) else (vp_b, vp_a)


def estimate_focal(vp1: VanishingPoint, vp2: VanishingPoint, principal, diagonal: float):
    """Focal length from two orthogonal vanishing points.

    Returns ``(focal, approximate)``; falls back to the image diagonal when
    either VP is INFINITE or the orthogonality constraint has no real root.
    """
    if not (vp1.is_finite and vp2.is_finite):
        return float(diagonal), True
    p = np.asarray(principal, dtype=np.float64)
    dot = float(np.dot(np.asarray(vp1.position) - p, np.asarray(vp2.position) - p))
    if dot >= 0:
        return float(diagonal), True
    return float(np.sqrt(-dot)), False


def aspect_ratio(quad: FacadeQuad, cam: CameraGuess, tol: float = 1e-9) -> float:
    """Width/height of the planar rectangle imaged as ``quad``.

    Corners m1..m4 are taken as top-left, top-right, bottom-left,
    bottom-right.  With k2, k3 the projective depths relative to m1,
    n2 = k2 m2 - m1 and n3 = k3 m3 - m1 are the images of the two rectangle
    sides; the ratio is ||K^-1 n2|| / ||K^-1 n3||.  When the quad is a
    parallelogram n2, n3 have no third component and the focal length drops
    out.
    """
    m1, m2, m4, m3 = (_hom(p) for p in quad.corners)
    den2 = np.dot(np.cross(m2, m4), m3)
    den3 = np.dot(np.cross(m3, m4), m2)
    scale = max(abs(np.dot(np.cross(m1, m4), m3)), 1.0)
    if abs(den2) < tol * scale or abs(den3) < tol * scale:
        raise NumericallyUnstable("degenerate quadrangle projection")
    k2 = np.dot(np.cross(m1, m4), m3) / den2
    k3 = np.dot(np.cross(m1, m4), m2) / den3
    if k2 <= 0 or k3 <= 0:
        raise NumericallyUnstable("quadrangle corners are not a projected rectangle")
    n2 = k2 * m2 - m1
    n3 = k3 * m3 - m1
    kinv = np.linalg.inv(cam.K)
    w = np.linalg.norm(kinv @ n2)
    h = np.linalg.norm(kinv @ n3)
    if h < tol or w < tol:
        raise NumericallyUnstable("zero-length rectangle side")
    ratio = float(w / h)
    if not np.isfinite(ratio) or ratio <= 0:
        raise NumericallyUnstable(f"bad aspect {ratio}")
    return ratio


def homography_from_points(src, dst) -> np.ndarray:
    """4-point DLT (with Hartley normalization) mapping ``src`` onto ``dst``."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    for pts in (src, dst):
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            a, b, c = pts[list(tri)]
            area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            span = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-12)
            if area < 1e-9 * span * span:
                raise SingularSystem("three of the four points are collinear")

    def norm_t(p):
        c = p.mean(axis=0)
        s = np.sqrt(2) / np.mean(np.hypot(*(p - c).T))
        return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])

    ts, td = norm_t(src), norm_t(dst)
    sh = (ts @ np.column_stack([src, np.ones(4)]).T).T
    dh = (td @ np.column_stack([dst, np.ones(4)]).T).T
    a = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i in range(4):
        x, y = sh[i, :2]
        u, v = dh[i, :2]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i] = u
        rhs[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    hn = np.append(h, 1.0).reshape(3, 3)
    H = np.linalg.inv(td) @ hn @ ts
    return normalize_homography(H)


def normalize_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if abs(H[2, 2]) > 1e-15:
        H = H / H[2, 2]
    return H


def apply_homography(H, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(H).T
    return ph[:, :2] / ph[:, 2:3]


def homography_from_quad(quad: FacadeQuad, aspect: float, out_height: float) -> np.ndarray:
    """Homography taking the quad corners onto ``(0,0)-(aspect*out_height, out_height)``."""
    if aspect <= 0 or out_height <= 0:
        raise ValueError("aspect and out_height must be positive")
    w = aspect * out_height
    dst = np.array([[0.0, 0.0], [w, 0.0], [w, out_height], [0.0, out_height]])
    return homography_from_points(quad.corners, dst)


def output_size(aspect: float, out_height: float) -> tuple[int, int]:
    """Pixel (width, height) of a rectified facade."""
    h = max(1, int(round(out_height)))
    return max(1, int(round(aspect * h))), h


def default_out_height(quad: FacadeQuad) -> float:
    return float(quad.side_lengths().max())


def warp(image, matte, H, out_size) -> RectifiedFacade:
    """Inverse-map ``image`` and ``matte`` through ``H`` with bilinear sampling.

    ``out_size`` is ``(width, height)``.  Output pixels whose source lies
    outside the input get alpha 0.
    """
    img = as_gray(image).astype(np.float64)
    mat = np.asarray(matte, dtype=np.float64)
    check_same_shape(img, mat)
    w, h = out_size
    Hinv = np.linalg.inv(np.asarray(H, dtype=np.float64))
    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    q = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    p = Hinv @ q
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = p[0] / p[2]
        sy = p[1] / p[2]
    ih, iw = img.shape
    valid = np.isfinite(sx) & np.isfinite(sy) & (p[2] > 0) & (sx >= 0) & (sx <= iw) & (sy >= 0) & (sy <= ih)
    sx = np.where(valid, sx, 0.5)
    sy = np.where(valid, sy, 0.5)
    coords = np.stack([sy - 0.5, sx - 0.5])
    tex = ndimage.map_coordinates(img, coords, order=1, mode="nearest").reshape(h, w)
    alpha = ndimage.map_coordinates(mat, coords, order=1, mode="nearest").reshape(h, w)
    valid = valid.reshape(h, w)
    tex = np.where(valid, tex, 0.0)
    alpha = np.where(valid, np.clip(alpha, 0.0, 1.0), 0.0)
    aspect = w / h
    return RectifiedFacade(to_uint8(tex), alpha, aspect, homography=np.asarray(H, dtype=np.float64))


def warp_mask(mask, H, out_size) -> np.ndarray:
    """Warp a float/bool mask with the same sampling as :func:`warp`."""
    m = np.asarray(mask, dtype=np.float64)
    rf = warp(np.zeros(m.shape, np.uint8), m, H, out_size)
    return rf.matte


def scale_to_world(rf: RectifiedFacade, given_width: float) -> RectifiedFacade:
    if given_width <= 0:
        raise ValueError("given_width must be positive")
    return replace(rf, world_width=float(given_width), world_height=float(given_width) / rf.aspect)


def rectify_facade(image, matte, mask, vp1, vp2, out_height=None, hull="mask") -> tuple[RectifiedFacade, FacadeQuad]:
    """Quadrangle, focal, aspect, homography and warp in one call.

    ``vp1``/``vp2`` are re-ordered so the more horizontal one defines the
    top/bottom sides.
    """
    img = as_gray(image)
    h, w = img.shape
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    centroid = (xs.mean() + 0.5, ys.mean() + 0.5)
    vh, vv = order_horizontal_first(vp1, vp2, centroid)
    quad = bounding_quadrangle(mask, vh, vv, hull=hull)
    principal = (w / 2.0, h / 2.0)
    focal, approx = estimate_focal(vh, vv, principal, float(np.hypot(w, h)))
    cam = CameraGuess(principal, focal, approx)
    aspect = aspect_ratio(quad, cam)
    oh = out_height or default_out_height(quad)
    size = output_size(aspect, oh)
    H = homography_from_quad(quad, size[0] / size[1], size[1])
    rf = warp(img, matte, H, size)
    approx = approx or not (vh.is_finite and vv.is_finite)
    return replace(rf, aspect=aspect, focal=focal, approximate_focal=approx), quad
