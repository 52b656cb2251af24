"""Vanishing-point candidates, deduplication, voting and pair selection.

A vanishing point is either FINITE (an image position, possibly far outside
the frame) or INFINITE (an undirected direction).  Candidates come from
pairwise intersections of segment supporting lines; the vote of a
candidate is the length- and mask-weighted fraction of segment evidence
aligned with it, clamped per segment at zero.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np
from scipy.optimize import least_squares

from .errors import InsufficientSegments, NoEvidence, NoOrthogonalPair
from .lines import angle_diff
from .raster import LineSegment

FINITE = "finite"
INFINITE = "infinite"


@dataclass(frozen=True)
class VanishingPoint:
    kind: str
    position: tuple[float, float] | None = None
    direction: float | None = None  # degrees in [0, 180)

    @classmethod
    def finite(cls, x, y):
        return cls(FINITE, position=(float(x), float(y)))

    @classmethod
    def infinite(cls, direction):
        return cls(INFINITE, direction=float(direction) % 180.0)

    @property
    def is_finite(self):
        return self.kind == FINITE

    def homogeneous(self) -> np.ndarray:
        if self.is_finite:
            return np.array([self.position[0], self.position[1], 1.0])
        t = np.radians(self.direction)
        return np.array([np.cos(t), np.sin(t), 0.0])

    def direction_from(self, point) -> float:
        """Undirected direction (degrees) from ``point`` toward this VP."""
        if not self.is_finite:
            return self.direction
        dx = self.position[0] - point[0]
        dy = self.position[1] - point[1]
        return float(np.degrees(np.arctan2(dy, dx)) % 180.0)

    def sort_key(self):
        if self.is_finite:
            return (0, self.position[0], self.position[1])
        return (1, self.direction, 0.0)

    def to_dict(self):
        if self.is_finite:
            return {"kind": FINITE, "x": self.position[0], "y": self.position[1]}
        return {"kind": INFINITE, "direction_deg": self.direction}


@dataclass(frozen=True)
class VoteConfig:
    align_deg: float = 2.0          # alignment threshold for voting
    min_offset_deg: float = 45.0    # minimum offset between the chosen pair
    quant_angle: float | None = None  # defaults to align_deg
    quant_pos: float | None = None    # inverse-pixel bin; defaults from image extent
    merge_distance: float = 1.5      # px, collinear segment merge tolerance

    def __post_init__(self):
        if not 0.0 < self.align_deg < 90.0:
            raise ValueError("align_deg must lie in (0, 90)")
        if not 0.0 < self.min_offset_deg < 90.0:
            raise ValueError("min_offset_deg must lie in (0, 90)")

    @property
    def angle_bin(self) -> float:
        return self.quant_angle if self.quant_angle is not None else self.align_deg


@dataclass(frozen=True)
class ScoredVP:
    vp: VanishingPoint
    score: float


# --- candidate accumulation -------------------------------------------------

def _segment_arrays(segments):
    a = np.array([s.a for s in segments], dtype=np.float64)
    b = np.array([s.b for s in segments], dtype=np.float64)
    return a, b


def _extent(segments):
    a, b = _segment_arrays(segments)
    pts = np.vstack([a, b])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    half_diag = max(float(np.hypot(*(hi - lo))) / 2.0, 1.0)
    return center, half_diag


def _pair_candidates(segments, align_deg):
    a, b = _segment_arrays(segments)
    ang = np.degrees(np.arctan2(b[:, 1] - a[:, 1], b[:, 0] - a[:, 0])) % 180.0
    ones = np.ones(len(a))
    lines = np.cross(np.column_stack([a, ones]), np.column_stack([b, ones]))
    out = []
    for i, j in itertools.combinations(range(len(segments)), 2):
        if angle_diff(ang[i], ang[j]) < align_deg:
            # circular mean of two undirected angles
            t = np.radians(2 * np.array([ang[i], ang[j]]))
            mean = np.degrees(np.arctan2(np.sin(t).sum(), np.cos(t).sum())) / 2.0
            out.append(VanishingPoint.infinite(mean))
            continue
        p = np.cross(lines[i], lines[j])
        if p[2] == 0:
            out.append(VanishingPoint.infinite(ang[i]))
        else:
            out.append(VanishingPoint.finite(p[0] / p[2], p[1] / p[2]))
    return out


def dedup_candidates(candidates, cfg: VoteConfig, center, half_diag,
                     finite: bool = True, infinite: bool = True) -> list[VanishingPoint]:
    """Quantize candidates and keep the first of each bin.

    FINITE candidates are binned on (direction from ``center``, inverse
    distance); a FINITE candidate in the nearest-to-zero inverse-distance
    bin is treated as INFINITE in its direction.  INFINITE candidates are
    binned on direction alone.
    """
    abin = cfg.angle_bin
    pbin = cfg.quant_pos if cfg.quant_pos is not None else np.radians(abin) / half_diag
    seen = set()
    out = []
    for vp in candidates:
        key = None
        if vp.is_finite:
            if finite:
                dx = vp.position[0] - center[0]
                dy = vp.position[1] - center[1]
                inv = 1.0 / max(np.hypot(dx, dy), 1e-12)
                direction = np.degrees(np.arctan2(dy, dx)) % 360.0
                ib = int(np.floor(inv / pbin))
                if ib == 0 and infinite:
                    key = (INFINITE, int(np.floor((direction % 180.0) / abin)))
                else:
                    key = (FINITE, int(np.floor(direction / abin)), ib)
        elif infinite:
            key = (INFINITE, int(np.floor(vp.direction / abin)))
        if key is None:
            out.append(vp)
            continue
        if key in seen:
            continue
        seen.add(key)
        out.append(vp)
    return out


def accumulate_candidates(segments, cfg: VoteConfig = VoteConfig(), center=None,
                          quantize_finite: bool = True, quantize_infinite: bool = True):
    """VP candidates from every unordered segment pair.

    Intersecting supporting lines give a FINITE candidate; pairs within the
    alignment threshold of parallel give an INFINITE one at their mean
    direction.  The result is deduplicated by quantization unless both
    flags are off.
    """
    segments = list(segments)
    if len(segments) < 2:
        raise InsufficientSegments(f"need at least 2 segments, got {len(segments)}")
    c, half_diag = _extent(segments)
    if center is None:
        center = c
    raw = _pair_candidates(segments, cfg.align_deg)
    if not (quantize_finite or quantize_infinite):
        return raw
    return dedup_candidates(raw, cfg, center, half_diag, quantize_finite, quantize_infinite)


def _merge_group(group):
    ref = group[0]
    d = np.array(ref.b) - np.array(ref.a)
    d /= np.hypot(*d)
    origin = np.array(ref.a)
    pts = np.array([p for s in group for p in (s.a, s.b)])
    t = (pts - origin) @ d
    a = origin + t.min() * d
    b = origin + t.max() * d
    support = sorted({p for s in group for p in s.support})
    return LineSegment(tuple(a), tuple(b), support=support)


def dedup_collinear(segments, cfg: VoteConfig = VoteConfig()) -> list[LineSegment]:
    """Merge segments sharing a supporting line.

    Segments are visited longest first; each joins the first group whose
    reference (longest) segment agrees within ``angle_bin`` degrees and whose
    line passes within ``merge_distance`` px of the newcomer's endpoints.
    A merged segment spans the union extent along the reference line and
    carries the union of supports.
    """
    segments = list(segments)
    order = sorted(range(len(segments)), key=lambda i: (-segments[i].length, i))
    groups = []  # (ref segment, unit normal, offset, members)
    for i in order:
        s = segments[i]
        placed = False
        for g in groups:
            ref, normal, off, members = g
            if angle_diff(ref.angle, s.angle) >= cfg.angle_bin:
                continue
            da = abs(np.dot(normal, s.a) - off)
            db = abs(np.dot(normal, s.b) - off)
            if max(da, db) <= cfg.merge_distance:
                members.append(s)
                placed = True
                break
        if not placed:
            d = np.array(s.b) - np.array(s.a)
            normal = np.array([-d[1], d[0]]) / np.hypot(*d)
            groups.append((s, normal, float(np.dot(normal, s.a)), [s]))
    out = []
    for ref, _, _, members in groups:
        out.append(members[0] if len(members) == 1 else _merge_group(members))
    return out


# --- voting ------------------------------------------------------------------

def distance(vp: VanishingPoint, seg: LineSegment) -> float:
    """Angular misfit in degrees ``[0, 90]`` between a segment and a VP.

    FINITE: angle between the segment and the line from the VP to the
    segment midpoint (0 when the VP sits on the midpoint).  INFINITE: angle
    between the segment and the VP direction.
    """
    if vp.is_finite:
        mx, my = seg.midpoint
        dx, dy = mx - vp.position[0], my - vp.position[1]
        if dx == 0 and dy == 0:
            return 0.0
        ref = np.degrees(np.arctan2(dy, dx)) % 180.0
    else:
        ref = vp.direction
    return float(angle_diff(seg.angle, ref))


def mask_weight(seg: LineSegment, mask) -> float:
    """Fraction of a segment's support pixels inside ``mask``."""
    if not seg.support:
        return 0.0
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    pts = np.array(seg.support)
    ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    inside = m[pts[ok, 1], pts[ok, 0]].sum()
    return float(inside) / len(pts)


class VoteTable:
    """Precomputed per-segment evidence so many candidates can be scored quickly."""

    def __init__(self, segments, mask, cfg: VoteConfig = VoteConfig()):
        segments = list(segments)
        if not segments:
            raise NoEvidence("no segments")
        self.cfg = cfg
        a, b = _segment_arrays(segments)
        self.mid = (a + b) / 2.0
        self.angle = np.degrees(np.arctan2(b[:, 1] - a[:, 1], b[:, 0] - a[:, 0])) % 180.0
        length = np.hypot(*(b - a).T)
        omega = np.array([mask_weight(s, mask) for s in segments])
        self.weight = length * omega
        self.total = float(self.weight.sum())
        if self.total <= 0:
            raise NoEvidence("no segment support falls inside the mask")

    def distances(self, vp: VanishingPoint) -> np.ndarray:
        if vp.is_finite:
            d = self.mid - np.asarray(vp.position)
            ref = np.degrees(np.arctan2(d[:, 1], d[:, 0])) % 180.0
            at_vp = (d[:, 0] == 0) & (d[:, 1] == 0)
        else:
            ref = vp.direction
            at_vp = False
        dist = angle_diff(self.angle, ref)
        return np.where(at_vp, 0.0, dist)

    def score(self, vp: VanishingPoint) -> float:
        fit = np.maximum(0.0, 1.0 - self.distances(vp) / self.cfg.align_deg)
        return float(np.clip((self.weight * fit).sum() / self.total, 0.0, 1.0))


def vote(vp: VanishingPoint, segments, mask, cfg: VoteConfig = VoteConfig()) -> float:
    """Fraction of mask-weighted segment length aligned with ``vp``, in ``[0, 1]``."""
    return VoteTable(segments, mask, cfg).score(vp)


def select_vp_pair(candidates, segments, mask, cfg: VoteConfig = VoteConfig(),
                   table: VoteTable | None = None):
    """Best-voted VP and the best one at least ``min_offset_deg`` away from it.

    Offsets are measured between directions from the mask centroid toward
    each VP.  Finite candidates inside the convex hull of the mask are
    skipped: a facade's own vanishing points never fall on the facade.
    Ties go to the higher score, then the smaller candidate key.
    """
    candidates = list(candidates)
    if len(candidates) < 2:
        raise NoOrthogonalPair("need at least two candidates")
    table = table or VoteTable(segments, mask, cfg)
    m = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(m)
    centroid = (xs.mean() + 0.5, ys.mean() + 0.5) if len(xs) else table.mid.mean(axis=0)
    hull = None
    if len(xs) >= 3:
        hull = cv2.convexHull(np.column_stack([xs, ys]).astype(np.float32) + 0.5)

    def on_facade(vp):
        if hull is None or not vp.is_finite:
            return False
        return cv2.pointPolygonTest(hull, (float(vp.position[0]), float(vp.position[1])), False) >= 0

    scored = [ScoredVP(vp, table.score(vp)) for vp in candidates if not on_facade(vp)]
    if len(scored) < 2:
        raise NoOrthogonalPair("fewer than two candidates lie off the facade")
    scored.sort(key=lambda s: (-s.score, s.vp.sort_key()))
    first = scored[0]
    d0 = first.vp.direction_from(centroid)
    for s in scored[1:]:
        if angle_diff(s.vp.direction_from(centroid), d0) >= cfg.min_offset_deg:
            return first, s
    raise NoOrthogonalPair(f"no candidate is {cfg.min_offset_deg} deg away from the best")


def _refit(seg: LineSegment) -> LineSegment:
    """Total-least-squares refit of a segment over its support pixel centers."""
    pts = np.asarray(seg.support, dtype=np.float64) + 0.5
    if len(pts) < 3:
        return seg
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    t = (pts - c) @ vt[0]
    return LineSegment(tuple(c + t.min() * vt[0]), tuple(c + t.max() * vt[0]), support=seg.support)


def merged_lines(segments, cfg: VoteConfig = VoteConfig(), passes: int = 2) -> list[LineSegment]:
    """Collinear pieces merged and refitted, repeated so long lines absorb stragglers."""
    segs = list(segments)
    for _ in range(passes):
        segs = [_refit(s) for s in dedup_collinear(segs, cfg)]
    return segs


def _sphere(v):
    v = v / np.linalg.norm(v)
    if v[2] < 0:
        v = -v
    return np.array([np.arccos(np.clip(v[2], -1.0, 1.0)), np.arctan2(v[1], v[0])])


def _unsphere(p):
    th, ph = p
    return np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])


def refine_vp(vp: VanishingPoint, segments, mask, cfg: VoteConfig = VoteConfig(),
              rounds: int = 3, center=None) -> VanishingPoint:
    """Polish a VP against the segments aligned with it.

    For every aligned segment the residual is the distance of its endpoints
    from the line joining its midpoint to the VP, scaled by sqrt(omega).
    The VP lives on the unit sphere of homogeneous points (in normalised
    coordinates) so it can cross infinity.  Inliers are reselected each
    round.  Returns the input unchanged when fewer than two segments agree.
    """
    segments = list(segments)
    if len(segments) < 2:
        return vp
    table = VoteTable(segments, mask, cfg)
    a, b = _segment_arrays(segments)
    if center is None:
        center = table.mid.mean(axis=0)
    center = np.asarray(center, dtype=np.float64)
    scale = float(np.abs(np.vstack([a, b]) - center).max()) or 1.0
    an, bn = (a - center) / scale, (b - center) / scale
    mid = (an + bn) / 2.0
    omega = table.weight / np.maximum(np.hypot(*(b - a).T), 1e-12)

    def to_vp(v):
        x, y, z = v
        if abs(z) < 1e-12 * np.hypot(x, y):
            return VanishingPoint.infinite(np.degrees(np.arctan2(y, x)) % 180.0)
        return VanishingPoint.finite(x / z * scale + center[0], y / z * scale + center[1])

    h = vp.homogeneous().astype(np.float64)
    v = np.array([h[0] - center[0] * h[2], h[1] - center[1] * h[2], h[2] * scale])
    cur = vp
    for _ in range(rounds):
        sel = (table.distances(cur) < cfg.align_deg) & (table.weight > 0)
        if sel.sum() < 2:
            break
        m_, a_, w_ = mid[sel], an[sel], np.sqrt(omega[sel])

        def resid(p):
            x, y, z = _unsphere(p)
            # direction from midpoint toward the VP, valid at infinity too
            d = np.column_stack([x - z * m_[:, 0], y - z * m_[:, 1]])
            d /= np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-15)[:, None]
            off = a_ - m_
            return w_ * (off[:, 0] * d[:, 1] - off[:, 1] * d[:, 0]) * scale

        fit = least_squares(resid, _sphere(v), loss="soft_l1", f_scale=1.0)
        v = _unsphere(fit.x)
        cur = to_vp(v)
    return cur


# --- search-space reduction instrumentation ------------------------------------

def percent_reduction(before: float, after: float) -> float:
    if before <= 0:
        return 0.0
    return 100.0 * (before - after) / before


@dataclass
class ReductionRow:
    space_pct: float
    time_pct: float


@dataclass
class ReductionReport:
    collinear: ReductionRow
    infinite: ReductionRow
    combined: ReductionRow
    counts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def reduction_metrics(before: int, after: dict, timings: dict | None = None) -> ReductionReport:
    """Percent reductions for each dedup variant relative to the baseline.

    ``after`` maps ``collinear`` / ``infinite`` / ``combined`` to candidate
    counts; ``timings`` maps the same keys plus ``baseline`` to seconds.
    """
    timings = dict(timings or {})
    base_t = timings.get("baseline", 0.0)
    rows = {}
    for key in ("collinear", "infinite", "combined"):
        rows[key] = ReductionRow(
            space_pct=percent_reduction(before, after.get(key, before)),
            time_pct=percent_reduction(base_t, timings.get(key, base_t)),
        )
    counts = {"baseline": before, **after}
    return ReductionReport(**rows, counts=counts, timings=timings)


def find_vanishing_points(accum_segments, vote_segments, mask, cfg: VoteConfig = VoteConfig(),
                          dedup: bool = True, center=None, refine: bool = True):
    """Accumulate, vote and select; returns (first, second, stats).

    With ``refine`` the selected pair is polished by ``refine_vp`` and
    rescored.
    """
    t0 = time.perf_counter()
    segs = dedup_collinear(accum_segments, cfg) if dedup else list(accum_segments)
    cands = accumulate_candidates(segs, cfg, center=center,
                                  quantize_finite=dedup, quantize_infinite=dedup)
    table = VoteTable(vote_segments, mask, cfg)
    first, second = select_vp_pair(cands, vote_segments, mask, cfg, table=table)
    if refine:
        pool = merged_lines(list(accum_segments) + list(vote_segments), cfg)
        polished = []
        for s in (first, second):
            vp = refine_vp(s.vp, pool, mask, cfg)
            polished.append(ScoredVP(vp, table.score(vp)))
        first, second = polished
    stats = {
        "segments_in": len(accum_segments),
        "segments_after_dedup": len(segs),
        "candidates": len(cands),
        "raw_candidates": len(segs) * (len(segs) - 1) // 2,
        "seconds": time.perf_counter() - t0,
    }
    return first, second, stats


def measure_reduction(accum_segments, vote_segments, mask, cfg: VoteConfig = VoteConfig(),
                      center=None, repeats: int = 1) -> ReductionReport:
    """Time accumulation+voting under each dedup variant and report reductions."""
    variants = {
        "baseline": (False, False, False),
        "collinear": (True, False, False),
        "infinite": (False, False, True),
        "combined": (True, True, True),
    }
    table = VoteTable(vote_segments, mask, cfg)
    counts, timings = {}, {}
    for name, (collinear, qf, qi) in variants.items():
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            segs = dedup_collinear(accum_segments, cfg) if collinear else list(accum_segments)
            cands = accumulate_candidates(segs, cfg, center=center,
                                          quantize_finite=qf, quantize_infinite=qi)
            for vp in cands:
                table.score(vp)
            best = min(best, time.perf_counter() - t0)
        counts[name] = len(cands)
        timings[name] = best
    before = counts.pop("baseline")
    return reduction_metrics(before, counts, timings)
