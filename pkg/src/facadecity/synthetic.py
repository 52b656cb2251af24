"""Synthetic scenes with known geometry, used by the tests and demos.

Facades are rendered as textured planar rectangles seen through a pinhole
camera with the principal point at the image center and no skew.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .raster import LineSegment, save_image, to_uint8


def facade_texture(width: int, height: int, rng=None, cols: int = 6, rows: int = 4) -> np.ndarray:
    """Gray facade: plaster background, dark window grid, light cornices and pilasters."""
    rng = np.random.default_rng(rng)
    base = int(rng.integers(140, 180))
    tex = np.full((height, width), base, dtype=np.float64)
    tex += rng.normal(0, 3, size=tex.shape)
    cw, rh = width / cols, height / rows
    pil = max(2, width // 100)
    for c in range(cols + 1):
        x = int(min(c * cw, width - pil))
        tex[:, x:x + pil] = base + 45
    for r in range(rows):
        y0 = int(r * rh + 0.25 * rh)
        y1 = int(r * rh + 0.8 * rh)
        band = int(r * rh)
        tex[band:band + max(2, height // 80), :] = base + 40
        for c in range(cols):
            x0 = int(c * cw + 0.25 * cw)
            x1 = int(c * cw + 0.75 * cw)
            tex[y0:y1, x0:x1] = int(rng.integers(30, 70))
    return to_uint8(tex)


@dataclass(frozen=True)
class PinholeCamera:
    focal: float
    width: int
    height: int
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    distance: float = 10.0

    @property
    def K(self):
        return np.array([[self.focal, 0, self.width / 2.0], [0, self.focal, self.height / 2.0], [0, 0, 1.0]])

    @property
    def R(self):
        y, p = np.radians(self.yaw_deg), np.radians(self.pitch_deg)
        ry = np.array([[np.cos(y), 0, np.sin(y)], [0, 1, 0], [-np.sin(y), 0, np.cos(y)]])
        rx = np.array([[1, 0, 0], [0, np.cos(p), -np.sin(p)], [0, np.sin(p), np.cos(p)]])
        return rx @ ry

    def plane_homography(self) -> np.ndarray:
        """World plane z=0 (x right, y down, metres) to image pixels."""
        R = self.R
        t = np.array([0.0, 0.0, self.distance])
        return self.K @ np.column_stack([R[:, 0], R[:, 1], t])

    def project(self, pts3) -> np.ndarray:
        pc = (self.R @ np.asarray(pts3, dtype=np.float64).T).T + [0.0, 0.0, self.distance]
        ph = (self.K @ pc.T).T
        return ph[:, :2] / ph[:, 2:3]

    def vanishing_points(self):
        """Homogeneous images of the plane's x and y directions."""
        R = self.R
        return self.K @ R[:, 0], self.K @ R[:, 1]


@dataclass
class RenderedFacade:
    image: np.ndarray
    mask: np.ndarray          # bool, pixel centers inside the projected rectangle
    corners: np.ndarray       # true projected corners TL, TR, BR, BL
    aspect: float
    camera: PinholeCamera
    texture_h: np.ndarray     # texture pixels -> image homography


def render_facade(camera: PinholeCamera, plane_w: float, plane_h: float, texture=None,
                  background: int = 110, rng=None, noise: float = 2.0) -> RenderedFacade:
    """Render a textured ``plane_w x plane_h`` rectangle centred at the world origin."""
    rng = np.random.default_rng(rng)
    if texture is None:
        tw = 600
        texture = facade_texture(tw, max(8, int(round(tw * plane_h / plane_w))), rng)
    th, tw = texture.shape
    # texture pixel -> world plane
    S = np.array([[plane_w / tw, 0, -plane_w / 2], [0, plane_h / th, -plane_h / 2], [0, 0, 1.0]])
    Hp = camera.plane_homography()
    Ht = Hp @ S
    from .rectify import apply_homography, warp
    rf = warp(texture, np.ones(texture.shape), Ht, (camera.width, camera.height))
    corners_w = np.array([[-plane_w / 2, -plane_h / 2], [plane_w / 2, -plane_h / 2],
                          [plane_w / 2, plane_h / 2], [-plane_w / 2, plane_h / 2]])
    corners = apply_homography(Hp, corners_w)
    xs, ys = np.meshgrid(np.arange(camera.width) + 0.5, np.arange(camera.height) + 0.5)
    mask = _inside_convex(corners, xs, ys)
    bg = background + rng.normal(0, noise, size=mask.shape)
    img = np.where(mask, rf.texture.astype(np.float64), bg)
    return RenderedFacade(to_uint8(img), mask, corners, plane_w / plane_h, camera, Ht)


def _inside_convex(corners, xs, ys):
    c = np.asarray(corners)
    sign = None
    inside = np.ones(xs.shape, dtype=bool)
    for i in range(len(c)):
        a, b = c[i], c[(i + 1) % len(c)]
        cr = (b[0] - a[0]) * (ys - a[1]) - (b[1] - a[1]) * (xs - a[0])
        if sign is None:
            area = (c[1, 0] - c[0, 0]) * (c[2, 1] - c[0, 1]) - (c[1, 1] - c[0, 1]) * (c[2, 0] - c[0, 0])
            sign = 1.0 if area > 0 else -1.0
        inside &= sign * cr >= 0
    return inside


def random_camera(rng, width: int = 640, height: int = 480, max_angle: float = 40.0,
                  focal_range=(0.8, 1.5), plane_w: float = 12.0, plane_h: float = 8.0,
                  fill: float = 0.7) -> PinholeCamera:
    """Camera with random yaw/pitch whose view of the plane fills about ``fill`` of the frame."""
    diag = float(np.hypot(width, height))
    f = float(rng.uniform(*focal_range)) * diag
    yaw = float(rng.uniform(-max_angle, max_angle))
    pitch = float(rng.uniform(-max_angle, max_angle))
    dist = f * max(plane_w / width, plane_h / height) / fill
    corners = np.array([[-plane_w / 2, -plane_h / 2, 0], [plane_w / 2, -plane_h / 2, 0],
                        [plane_w / 2, plane_h / 2, 0], [-plane_w / 2, plane_h / 2, 0]])
    for _ in range(60):
        cam = PinholeCamera(f, width, height, yaw, pitch, dist)
        p = cam.project(corners)
        span = np.ptp(p, axis=0)
        if (p.min() >= 0.05 * min(width, height) and np.all(p[:, 0] <= 0.95 * width)
                and np.all(p[:, 1] <= 0.95 * height) and span.max() < 0.95 * max(width, height)):
            return cam
        dist *= 1.08
    return cam


# --- line/circle corpus --------------------------------------------------------

@dataclass
class LineCircleScene:
    image: np.ndarray
    lines: list       # ((x0, y0), (x1, y1)) pixel-center coordinates
    circles: list     # ((cx, cy), r)


def lines_and_circles(rng=None, size: int = 400, n_lines: int = 6, n_circles: int = 4,
                      radius=(20, 45), thickness: int = 3) -> LineCircleScene:
    """Dark strokes on a light background: straight lines and circles of comparable length."""
    rng = np.random.default_rng(rng)
    img = np.full((size, size), 200, dtype=np.uint8)
    lines, circles = [], []
    circ_len = 0.0
    for _ in range(n_circles):
        r = int(rng.integers(*radius))
        c = (int(rng.integers(r + 10, size - r - 10)), int(rng.integers(r + 10, size - r - 10)))
        cv2.circle(img, c, r, 40, thickness)
        circles.append(((c[0] + 0.5, c[1] + 0.5), float(r)))
        circ_len += 2 * np.pi * r
    per_line = circ_len / max(n_lines, 1)
    for _ in range(n_lines):
        ang = rng.uniform(0, np.pi)
        L = min(per_line, size * 0.8)
        cx, cy = rng.uniform(size * 0.25, size * 0.75, size=2)
        d = np.array([np.cos(ang), np.sin(ang)]) * L / 2
        p = np.array([cx, cy]) - d
        q = np.array([cx, cy]) + d
        p, q = np.clip(p, 5, size - 6), np.clip(q, 5, size - 6)
        cv2.line(img, tuple(int(v) for v in p), tuple(int(v) for v in q), 40, thickness)
        lines.append((tuple(p.astype(int) + 0.5), tuple(q.astype(int) + 0.5)))
    img = cv2.GaussianBlur(img, (3, 3), 0.8)
    return LineCircleScene(img, lines, circles)


def grid_segments(vp_h, vp_v, box, n: int = 6, length_frac: float = 0.8):
    """Segments along pencils through two homogeneous VPs inside an axis box ``(x0, y0, x1, y1)``."""
    x0, y0, x1, y1 = box
    segs = []
    for k in range(n):
        t = (k + 0.5) / n
        # horizontal family: pass through points on the left edge toward vp_h
        p = np.array([x0 + (x1 - x0) * (1 - length_frac) / 2, y0 + t * (y1 - y0), 1.0])
        line = np.cross(p, vp_h)
        xa = p[0]
        xb = x1 - (x1 - x0) * (1 - length_frac) / 2
        ya = -(line[0] * xa + line[2]) / line[1]
        yb = -(line[0] * xb + line[2]) / line[1]
        segs.append(LineSegment((xa, ya), (xb, yb)))
        q = np.array([x0 + t * (x1 - x0), y0 + (y1 - y0) * (1 - length_frac) / 2, 1.0])
        line = np.cross(q, vp_v)
        ya = q[1]
        yb = y1 - (y1 - y0) * (1 - length_frac) / 2
        xa = -(line[1] * ya + line[2]) / line[0]
        xb = -(line[1] * yb + line[2]) / line[0]
        segs.append(LineSegment((xa, ya), (xb, yb)))
    return segs


# --- pipeline fixtures -----------------------------------------------------------

def soft_mask(mask, sigma: float = 2.0) -> np.ndarray:
    """Blurred probability version of a binary mask (mimics a segmenter's fading edges)."""
    return np.clip(ndimage.gaussian_filter(np.asarray(mask, dtype=np.float64), sigma), 0.0, 1.0)


def occluder_mask(shape, rng, center=None, axes=None) -> np.ndarray:
    h, w = shape
    rng = np.random.default_rng(rng)
    if center is None:
        center = (int(rng.integers(w // 3, 2 * w // 3)), int(rng.integers(h // 2, 4 * h // 5)))
    if axes is None:
        axes = (int(rng.integers(w // 16, w // 9)), int(rng.integers(h // 14, h // 8)))
    m = np.zeros(shape, dtype=np.uint8)
    cv2.ellipse(m, center, axes, 0, 0, 360, 1, -1)
    return m.astype(bool)


def write_facade_fixture(out_dir, name: str, rng, width: int = 1200, height: int = 800,
                         plane_w: float = 12.0, plane_h: float = 9.0, max_angle: float = 25.0,
                         occlude: bool = True) -> dict:
    """Render one facade photo with its facade/occlusion probability masks to PNGs."""
    rng = np.random.default_rng(rng)
    cam = random_camera(rng, width, height, max_angle=max_angle, plane_w=plane_w, plane_h=plane_h, fill=0.6)
    r = render_facade(cam, plane_w, plane_h, rng=rng)
    img = r.image.copy()
    entry = {"image": f"{name}.png", "facade_mask": f"{name}_facade.png", "occlusion_masks": []}
    if occlude:
        occ = occluder_mask(img.shape, rng) & r.mask
        img[occ] = to_uint8(60 + 20 * rng.random(int(occ.sum())))
        save_image(os.path.join(out_dir, f"{name}_occ.png"), to_uint8(soft_mask(occ, 1.5) * 255))
        entry["occlusion_masks"].append(f"{name}_occ.png")
    save_image(os.path.join(out_dir, f"{name}.png"), img)
    save_image(os.path.join(out_dir, f"{name}_facade.png"), to_uint8(soft_mask(r.mask) * 255))
    entry["true_aspect"] = plane_w / plane_h
    return entry


def write_block_manifest(out_dir, seed: int = 0, width: int = 1200, height: int = 800,
                         blocks=((0.0, 0.0), (60.0, 0.0)), facades_per_block: int = 3) -> str:
    """Render facades for a multi-block manifest and write ``manifest.json``.

    Every facade is marked as sharing a building with its neighbour.  A
    block only closes after four turns, so blocks with fewer than four
    facades come back with a closure gap.  Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    facades = []
    block_entries = []
    for bi, offset in enumerate(blocks):
        bid = f"block{bi}"
        block_entries.append({"id": bid, "offset": list(offset)})
        ids = [f"{bid}_f{k}" for k in range(facades_per_block)]
        widths = [float(rng.integers(10, 20)) for _ in ids]
        for k, fid in enumerate(ids):
            plane_h = float(rng.uniform(6.0, 10.0))
            entry = write_facade_fixture(out_dir, fid, rng, width, height, plane_w=widths[k], plane_h=plane_h)
            entry.update({
                "id": fid,
                "width": widths[k],
                "block": bid,
                "neighbor": ids[(k + 1) % len(ids)],
                "same_building": True,
                "cardinal": 0,
            })
            facades.append(entry)
    manifest = {"facades": facades, "blocks": block_entries, "config": {}}
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path
