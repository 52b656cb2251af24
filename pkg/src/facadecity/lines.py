"""Low-signal straight-line extraction.

Edges come from Canny with median-relative thresholds.  Edge pixels are
chained into contours, each contour point is labelled linear/non-linear
from one-sided averages of tangent-angle change, and every linear run is
fitted with a seeded RANSAC line.
"""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .errors import ContourTooShort, OutOfWindow
from .raster import LineSegment, as_gray


@dataclass(frozen=True)
class CannyConfig:
    tightness: float = 0.33
    aperture: int = 3

    def __post_init__(self):
        if not 0.0 < self.tightness < 1.0:
            raise ValueError("tightness must lie in (0, 1)")


@dataclass(frozen=True)
class LinearityConfig:
    window: int = 8
    threshold_deg: float = 9.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.threshold_deg < 90.0:
            raise ValueError("threshold_deg must lie in (0, 90)")


# strict parameters feed VP accumulation, relaxed ones feed voting
STRICT = LinearityConfig(window=16, threshold_deg=4.0)
RELAXED = LinearityConfig(window=8, threshold_deg=9.0)


@dataclass(frozen=True)
class RansacConfig:
    seed: int = 0
    inlier_distance: float = 1.5
    iterations: int = 64
    min_points: int | None = None  # None -> the linearity window

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_distance <= 0:
            raise ValueError("inlier_distance must be positive")


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) int (x, y)
    closed: bool = False

    def __len__(self):
        return len(self.points)


def canny_thresholds(image, tightness: float) -> tuple[float, float]:
    med = float(np.median(np.asarray(image)))
    lo = max(0.0, med * (1.0 - tightness))
    hi = min(255.0, med * (1.0 + tightness))
    return lo, hi


def detect_edges(image, cfg: CannyConfig = CannyConfig()) -> np.ndarray:
    img = as_gray(image)
    lo, hi = canny_thresholds(img, cfg.tightness)
    edges = cv2.Canny(img, lo, hi, apertureSize=cfg.aperture, L2gradient=True)
    return edges > 0


# --- contour tracing -------------------------------------------------------

_N4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
_ND = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _m_neighbours(on, x, y, w, h):
    """Mixed (m-)adjacency: diagonal links only where no shared 4-neighbour is set."""
    out = []
    for dx, dy in _N4:
        u, v = x + dx, y + dy
        if 0 <= u < w and 0 <= v < h and on[v, u]:
            out.append((u, v))
    for dx, dy in _ND:
        u, v = x + dx, y + dy
        if 0 <= u < w and 0 <= v < h and on[v, u] and not on[y, u] and not on[v, x]:
            out.append((u, v))
    return out


def _adjacent(p, q):
    return max(abs(p[0] - q[0]), abs(p[1] - q[1])) == 1


def trace_contours(edges) -> list[Contour]:
    """Chain edge pixels into contours, splitting at junctions.

    Adjacency is 8-connected with redundant diagonal links removed, so a
    staircase does not read as a junction.  Pixels with three or more
    neighbours are junctions: chains are traced without them, then each
    junction pixel is appended to a chain end it touches, or else chained
    with the other leftover junction pixels.  Every edge pixel ends up in
    exactly one contour; an isolated pixel is a one-point contour.
    """
    on = np.asarray(edges, dtype=bool)
    h, w = on.shape
    ys, xs = np.nonzero(on)
    nbrs = {}
    for x, y in zip(xs.tolist(), ys.tolist()):
        nbrs[(x, y)] = _m_neighbours(on, x, y, w, h)
    junction = {p for p, n in nbrs.items() if len(n) >= 3}
    regular = [p for p in sorted(nbrs, key=lambda p: (p[1], p[0])) if p not in junction]
    reg_n = {p: [q for q in nbrs[p] if q not in junction] for p in regular}

    seen = set()
    chains = []  # list of [points, closed]

    def walk(start):
        path = [start]
        seen.add(start)
        prev, cur = None, start
        while True:
            nxt = [q for q in reg_n[cur] if q != prev and q not in seen]
            if not nxt:
                return path
            prev, cur = cur, nxt[0]
            seen.add(cur)
            path.append(cur)

    # open chains start at their ends
    for p in regular:
        if p not in seen and len(reg_n[p]) <= 1:
            chains.append([walk(p), False])
    # whatever remains lies on cycles
    for p in regular:
        if p not in seen:
            path = walk(p)
            closed = len(path) > 2 and _adjacent(path[0], path[-1])
            chains.append([path, closed])

    leftover = []
    for j in sorted(junction, key=lambda p: (p[1], p[0])):
        placed = False
        for ch in chains:
            pts, closed = ch
            if closed:
                continue
            if _adjacent(pts[-1], j):
                pts.append(j)
                placed = True
            elif _adjacent(pts[0], j):
                pts.insert(0, j)
                placed = True
            if placed:
                break
        if not placed:
            leftover.append(j)

    # leftover junction pixels: greedy chains among themselves
    pending = list(leftover)
    while pending:
        path = [pending.pop(0)]
        grown = True
        while grown:
            grown = False
            for i, q in enumerate(pending):
                if _adjacent(path[-1], q):
                    path.append(pending.pop(i))
                    grown = True
                    break
        chains.append([path, False])

    return [Contour(np.array(pts, dtype=np.int64).reshape(-1, 2), closed) for pts, closed in chains]


# --- local linearity -------------------------------------------------------

def angle_diff(a, b):
    """Smallest angle between undirected directions, in ``[0, 90]`` degrees."""
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) % 180.0
    return np.minimum(d, 180.0 - d)


def contour_angles(contour, window: int, wrap: bool = False) -> np.ndarray:
    """Tangent angle (degrees, undirected) of every contour point.

    The tangent at ``p`` is the chord ``C[p + window//2] - C[p - ceil(window/2)]``
    with indices clipped to the contour, or wrapped when ``wrap`` is set and
    the contour is closed.
    """
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour, dtype=np.float64)
    n = len(pts)
    back = (window + 1) // 2
    fwd = window // 2
    idx = np.arange(n)
    if wrap and isinstance(contour, Contour) and contour.closed and n > window:
        d = pts[(idx + fwd) % n] - pts[(idx - back) % n]
        return np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 180.0
    lo = np.clip(idx - back, 0, n - 1)
    hi = np.clip(idx + fwd, 0, n - 1)
    same = lo == hi
    lo[same] = np.clip(idx[same] - 1, 0, n - 1)
    hi[same] = np.clip(idx[same] + 1, 0, n - 1)
    d = pts[hi] - pts[lo]
    return np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 180.0


def point_angle(contour, p: int, window: int, wrap: bool = False) -> float:
    return float(contour_angles(contour, window, wrap)[p])


def _one_sided(angles, k):
    """Left/right mean angle change for all points; NaN where the window runs out."""
    n = len(angles)
    left = np.full(n, np.nan)
    right = np.full(n, np.nan)
    if n > k:
        acc_l = np.zeros(n - k)
        acc_r = np.zeros(n - k)
        for d in range(1, k + 1):
            acc_l += angle_diff(angles[k:], angles[k - d:n - d])
            acc_r += angle_diff(angles[:n - k], angles[d:n - k + d])
        left[k:] = acc_l / k
        right[:n - k] = acc_r / k
    return left, right


def second_derivatives(contour, p: int, cfg: LinearityConfig) -> tuple[float, float]:
    """Left- and right-hand mean angle change at point ``p``."""
    n = len(contour)
    k = cfg.window
    if p - k < 0 or p + k > n - 1:
        raise OutOfWindow(f"point {p} needs {k} points on both sides of a {n}-point contour")
    angles = contour_angles(contour, k)
    left = angle_diff(angles[p], angles[p - k:p]).mean()
    right = angle_diff(angles[p], angles[p + 1:p + k + 1]).mean()
    return float(left), float(right)


def _sweep(left, right, k, t):
    """One pass of the local-linearity state machine; returns on-curve flags."""
    n = len(left)
    curve = np.zeros(n, dtype=bool)
    curve[:k] = right[:k] >= t
    oncurve = True
    for i in range(k, n - k):
        if oncurve and right[i] < t:
            oncurve = False
        if not oncurve and left[i] >= t:
            oncurve = True
        curve[i] = oncurve
    curve[n - k:] = left[n - k:] >= t
    return curve


def label_linearity(contour, cfg: LinearityConfig = RELAXED, symmetric: bool = True,
                    wrap: bool = False) -> np.ndarray:
    """Boolean "linear" label per contour point.

    Prefix points are tested on the right-hand change, suffix points on the
    left-hand change, and interior points follow the hysteresis: leave the
    curve once the right side is flat, re-enter once the left side bends.
    The interior pass is direction dependent; with ``symmetric`` the pass is
    also run on the reversed contour and a point is on-curve if either pass
    says so, which makes the labels independent of traversal direction.
    With ``wrap`` a closed contour's tangents run across the seam where
    tracing started; the seam windows are still tested one-sided.  The
    default leaves seam chords open, which keeps more of the short edges
    of small closed outlines such as windows.
    """
    k, t = cfg.window, cfg.threshold_deg
    n = len(contour)
    if n < 2 * k:
        raise ContourTooShort(f"{n} points < 2 * window ({k})")
    angles = contour_angles(contour, k, wrap)
    left, right = _one_sided(angles, k)
    curve = _sweep(left, right, k, t)
    if symmetric:
        curve |= _sweep(right[::-1], left[::-1], k, t)[::-1]
    return ~curve


# --- RANSAC fitting ----------------------------------------------------------

def _runs(labels):
    runs = []
    start = None
    for i, v in enumerate(labels):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(labels)))
    return runs


def _fit_line(points):
    """Total-least-squares line: (centroid, unit direction)."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    return c, vt[0]


def ransac_line(points, cfg: RansacConfig, rng: np.random.Generator):
    """Seeded RANSAC on ``(n, 2)`` points; returns (centroid, direction, inlier mask)."""
    n = len(points)
    best = None
    best_count = -1
    if n >= 2:
        # all hypotheses at once: distinct index pairs, scored in one product
        i = rng.integers(n, size=cfg.iterations)
        j = (i + rng.integers(1, n, size=cfg.iterations)) % n
        d = points[j] - points[i]
        norm = np.hypot(d[:, 0], d[:, 1])
        normal = np.column_stack([-d[:, 1], d[:, 0]]) / np.where(norm > 0, norm, 1.0)[:, None]
        offs = np.einsum("kd,kd->k", normal, points[i])
        inl = np.abs(points @ normal.T - offs) <= cfg.inlier_distance
        counts = np.where(norm > 0, inl.sum(axis=0), -1)
        k = int(np.argmax(counts))
        best, best_count = inl[:, k], int(counts[k])
    if best is None or best_count < 2:
        best = np.ones(n, dtype=bool)
    c, direction = _fit_line(points[best])
    normal = np.array([-direction[1], direction[0]])
    inl = np.abs((points - c) @ normal) <= cfg.inlier_distance
    if inl.sum() >= 2:
        c, direction = _fit_line(points[inl])
    else:
        inl = best
    return c, direction, inl


def fit_segments(contour, labels, ransac: RansacConfig = RansacConfig(), index: int = 0,
                 min_points: int | None = None) -> list[LineSegment]:
    """One RANSAC segment per maximal linear run of a contour.

    Randomness is drawn from ``(seed, index)`` so contours can be fitted in
    any order.  Endpoints are the extreme inliers projected onto the fitted
    line, in pixel-center coordinates; support is the inlier pixels.
    """
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour)
    labels = np.asarray(labels, dtype=bool)
    if isinstance(contour, Contour) and contour.closed and not labels.all():
        # start a loop on a break so no run straddles the seam
        shift = -int(np.argmin(labels))
        pts, labels = np.roll(pts, shift, axis=0), np.roll(labels, shift)
    need = ransac.min_points or min_points or 2
    rng = np.random.default_rng([ransac.seed, index])
    segs = []
    for s, e in _runs(labels):
        if e - s < max(need, 2):
            continue
        run = pts[s:e]
        centers = run.astype(np.float64) + 0.5
        c, direction, inl = ransac_line(centers, ransac, rng)
        if inl.sum() < 2:
            continue
        t = (centers[inl] - c) @ direction
        a = c + t.min() * direction
        b = c + t.max() * direction
        if np.allclose(a, b):
            continue
        segs.append(LineSegment(tuple(a), tuple(b), support=[tuple(p) for p in run[inl].tolist()]))
    return segs


def detect_segments(image, mask=None, canny: CannyConfig = CannyConfig(),
                    linearity: LinearityConfig = RELAXED, ransac: RansacConfig = RansacConfig(),
                    edges=None, margin: int = 3) -> list[LineSegment]:
    """Full chain: edges -> contours -> linearity labels -> RANSAC segments.

    ``mask`` optionally restricts edge pixels before tracing; it is grown by
    ``margin`` pixels so edges on the mask outline survive.
    """
    if edges is None:
        edges = detect_edges(image, canny)
    if mask is not None:
        region = np.asarray(mask, dtype=bool)
        if margin > 0:
            region = ndimage.binary_dilation(region, np.ones((3, 3), bool), iterations=margin)
        edges = edges & region
    segs = []
    for i, c in enumerate(trace_contours(edges)):
        if len(c) < 2 * linearity.window:
            continue
        labels = label_linearity(c, linearity)
        segs.extend(fit_segments(c, labels, ransac, index=i, min_points=linearity.window))
    return segs


def segments_to_json(segments) -> list[dict]:
    return [{"a": list(s.a), "b": list(s.b), "support_count": len(s.support)} for s in segments]


def draw_segments(image, segments, value: int = 255) -> np.ndarray:
    """Gray overlay with segments drawn on a dimmed copy of ``image``."""
    out = (as_gray(image) // 2).copy()
    for s in segments:
        p = tuple(int(round(v - 0.5)) for v in s.a)
        q = tuple(int(round(v - 0.5)) for v in s.b)
        cv2.line(out, p, q, int(value), 1)
    return out
