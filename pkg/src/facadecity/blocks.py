"""Cuboid buildings around city blocks.

A block is a cycle of facade records linked by ``neighbor``.  Walking the
cycle places one cuboid per facade: the walk direction follows a cardinal
counter (0: +x, 1: +y, 2: -x, 3: -y) that turns whenever a facade and its
neighbour belong to the same (corner) building.  Coordinates are metres in
a block-local frame with z up; a building stands on the left of the walk,
its street face on the right.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, NonPositiveDim, OpenChain, OverlappingBlocks
from .raster import as_gray, as_prob, to_uint8

WALK = {0: (1.0, 0.0), 1: (0.0, 1.0), 2: (-1.0, 0.0), 3: (0.0, -1.0)}
# street face of a cuboid for each walk cardinal (right of the walk)
STREET_FACE = {0: "-y", 1: "+x", 2: "+y", 3: "-x"}
SIDE_FACES = ("+x", "+y", "-x", "-y")
CLOSURE_TOL = 0.01


@dataclass
class FacadeRecord:
    id: str
    length: float
    height: float
    neighbor: str
    same_building: bool = False  # same building as the neighbour
    cardinal: int = 0
    facade: object = None  # RectifiedFacade, optional for geometry-only use

    def __post_init__(self):
        if not (self.length > 0 and self.height > 0):
            raise NonPositiveDim(f"facade {self.id}: length and height must be positive")
        if self.cardinal not in (0, 1, 2, 3):
            raise ValueError(f"facade {self.id}: cardinal must be 0..3")


@dataclass
class Cuboid:
    x: float
    y: float
    width: float   # along x
    depth: float   # along y
    height: float
    cardinal: int = 0
    facade_id: str | None = None
    textures: dict = field(default_factory=dict)  # face -> facade id
    tiling: list = field(default_factory=list)     # facade ids repeated on bare faces
    mid_block: bool = False

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0 and self.height > 0):
            raise NonPositiveDim("cuboid dimensions must be positive")

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the ground rectangle."""
        ux, uy = WALK[self.cardinal]
        lx, ly = -uy, ux
        along = self.width if ux else self.depth
        across = self.depth if ux else self.width
        xs = [self.x, self.x + along * ux, self.x + along * ux + across * lx, self.x + across * lx]
        ys = [self.y, self.y + along * uy, self.y + along * uy + across * ly, self.y + across * ly]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass
class WalkResult:
    cuboids: list
    closure_gap: tuple[float, float]
    cardinal_advance: int
    steps: list  # (facade id, x, y, x', y') per iteration

    @property
    def gap_m(self) -> float:
        return float(np.hypot(*self.closure_gap))


def walk_block(start: FacadeRecord, records: dict) -> WalkResult:
    """Run the block walk from ``start`` around the whole cycle.

    Every facade of the cycle is visited once, including the one whose
    neighbour is ``start``, so a consistent block returns to the origin.
    """
    def follow(rec):
        try:
            return records[rec.neighbor]
        except KeyError:
            raise OpenChain(f"facade {rec.id} points at unknown neighbour {rec.neighbor!r}") from None

    x = y = 0.0
    pointer = start
    cardinal = start.cardinal
    advance = 0
    cuboids, steps = [], []
    for _ in range(len(records)):
        nb = follow(pointer)
        height = pointer.height
        alt = pointer.length
        mid = True
        if pointer.same_building:
            alt = nb.length
            height = max(height, nb.height)
            cardinal = (cardinal + 1) % 4
            advance += 1
            mid = False
        dx = dy = 0.0
        if cardinal == 0:
            width, depth = pointer.length, alt
            dx = width
        elif cardinal == 1:
            depth, width = pointer.length, alt
            dy = depth
        elif cardinal == 2:
            width, depth = pointer.length, alt
            dx = -width
        else:
            depth, width = pointer.length, alt
            dy = -depth
        cuboids.append(Cuboid(x, y, width, depth, height, cardinal, pointer.id,
                              textures={STREET_FACE[cardinal]: pointer.id},
                              tiling=[pointer.id], mid_block=mid))
        steps.append((pointer.id, x, y, dx, dy))
        x += dx
        y += dy
        pointer = nb
        if pointer is start or pointer.id == start.id:
            return WalkResult(cuboids, (x, y), advance, steps)
    raise OpenChain(f"walk from {start.id} did not return within {len(records)} steps")


def map_facades_within_block(start: FacadeRecord, records: dict) -> list:
    """One cuboid per facade of the block, at the walk's running position."""
    return walk_block(start, records).cuboids


def _close_gap(walk: WalkResult):
    """Spread the closure gap evenly over the advances."""
    n = len(walk.cuboids)
    gx, gy = walk.closure_gap
    out = []
    for i, c in enumerate(walk.cuboids):
        f = i / n
        out.append(Cuboid(c.x - gx * f, c.y - gy * f, c.width, c.depth, c.height, c.cardinal,
                          c.facade_id, dict(c.textures), list(c.tiling), c.mid_block))
    return out


def _merge_same_footprint(cuboids, tol=CLOSURE_TOL):
    """Facades of one building yield the same footprint; fold them into one cuboid."""
    merged = []
    for c in cuboids:
        fp = np.array(c.footprint)
        for m in merged:
            if np.abs(np.array(m.footprint) - fp).max() <= tol:
                m.height = max(m.height, c.height)
                for face, fid in c.textures.items():
                    m.textures.setdefault(face, fid)
                m.tiling.extend(t for t in c.tiling if t not in m.tiling)
                m.mid_block = m.mid_block and c.mid_block
                break
        else:
            merged.append(Cuboid(c.x, c.y, c.width, c.depth, c.height, c.cardinal, c.facade_id,
                                 dict(c.textures), list(c.tiling), c.mid_block))
    return merged


def _overlap_area(a, b):
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0.0, w) * max(0.0, h)


@dataclass
class BlockLayout:
    block_id: str
    offset: tuple[float, float]
    cuboids: list
    facades: dict = field(default_factory=dict)  # id -> RectifiedFacade

    def bounds(self):
        if not self.cuboids:
            return None
        fps = np.array([c.footprint for c in self.cuboids])
        ox, oy = self.offset
        return (fps[:, 0].min() + ox, fps[:, 1].min() + oy, fps[:, 2].max() + ox, fps[:, 3].max() + oy)


@dataclass
class BlockReport:
    block_id: str
    closure_gap_m: float
    cuboid_count: int
    cardinal_advance: int = 0
    gap_distributed: bool = False
    mid_block_facades: list = field(default_factory=list)
    overlaps: list = field(default_factory=list)

    def to_dict(self):
        return {"block_id": self.block_id, "closure_gap_m": self.closure_gap_m,
                "cuboid_count": self.cuboid_count, "cardinal_advance": self.cardinal_advance,
                "gap_distributed": self.gap_distributed,
                "mid_block_facades": self.mid_block_facades, "overlaps": self.overlaps}


def build_block(block_id, offset, start: FacadeRecord, records: dict):
    """Walk, close and merge one block; returns (BlockLayout, BlockReport)."""
    walk = walk_block(start, records)
    gap = walk.gap_m
    cuboids = walk.cuboids
    distributed = gap > CLOSURE_TOL
    if distributed:
        cuboids = _close_gap(walk)
    cuboids = _merge_same_footprint(cuboids)
    overlaps = []
    for i in range(len(cuboids)):
        for j in range(i + 1, len(cuboids)):
            area = _overlap_area(cuboids[i].footprint, cuboids[j].footprint)
            if area > CLOSURE_TOL ** 2:
                overlaps.append([cuboids[i].facade_id, cuboids[j].facade_id, area])
    facades = {r.id: r.facade for r in records.values() if r.facade is not None}
    layout = BlockLayout(str(block_id), tuple(map(float, offset)), cuboids, facades)
    report = BlockReport(str(block_id), gap, len(cuboids), walk.cardinal_advance, distributed,
                         [c.facade_id for c in walk.cuboids if c.mid_block], overlaps)
    return layout, report


def reports_to_json(reports, **kw) -> str:
    return json.dumps([r.to_dict() for r in reports], **kw)


# --- meshes --------------------------------------------------------------------

@dataclass
class FaceGroup:
    face: str
    material: tuple  # ("facade", id, tiled) or ("gray", level)
    start: int       # first index
    count: int


@dataclass
class CuboidMesh:
    positions: np.ndarray  # (24, 3) float32, block frame, z up
    normals: np.ndarray
    uvs: np.ndarray
    indices: np.ndarray    # (36,) uint32
    groups: list


_FACE_NORMALS = {"+x": (1, 0, 0), "-x": (-1, 0, 0), "+y": (0, 1, 0), "-y": (0, -1, 0),
                 "+z": (0, 0, 1), "-z": (0, 0, -1)}


def _face_quad(face, x0, y0, x1, y1, h):
    """Corners bottom-left, bottom-right, top-right, top-left as seen from outside."""
    if face == "+x":
        return [(x1, y0, 0), (x1, y1, 0), (x1, y1, h), (x1, y0, h)]
    if face == "-x":
        return [(x0, y1, 0), (x0, y0, 0), (x0, y0, h), (x0, y1, h)]
    if face == "+y":
        return [(x1, y1, 0), (x0, y1, 0), (x0, y1, h), (x1, y1, h)]
    if face == "-y":
        return [(x0, y0, 0), (x1, y0, 0), (x1, y0, h), (x0, y0, h)]
    if face == "+z":
        return [(x0, y0, h), (x1, y0, h), (x1, y1, h), (x0, y1, h)]
    return [(x0, y1, 0), (x1, y1, 0), (x1, y0, 0), (x0, y0, 0)]


def _facade_size(facades, fid):
    f = facades.get(fid) if facades else None
    if f is None:
        return None
    return float(f.world_width), float(f.world_height)


def roof_level(c: Cuboid, facades: dict | None, default: int = 128) -> int:
    """Mean intensity of the cuboid's own facade texture."""
    f = facades.get(c.facade_id) if facades else None
    if f is None or getattr(f, "texture", None) is None:
        return default
    return int(to_uint8(np.asarray(f.texture, dtype=np.float64).mean()))


def build_cuboid_mesh(c: Cuboid, facades: dict | None = None, roof: int | None = None) -> CuboidMesh:
    """24-vertex cuboid with one index group per face.

    A face with its own facade shows it once across the face width; a bare
    side face repeats a tiling facade at its world width.  Vertical UV scale
    follows the facade's world height.  Top and bottom are flat gray.
    """
    x0, y0, x1, y1 = c.footprint
    h = c.height
    gray = ("gray", roof_level(c, facades) if roof is None else int(roof))
    pos, nrm, uv, idx, groups = [], [], [], [], []
    for face in SIDE_FACES + ("+z", "-z"):
        quad = _face_quad(face, x0, y0, x1, y1, h)
        base = len(pos)
        pos.extend(quad)
        nrm.extend([_FACE_NORMALS[face]] * 4)
        span = (x1 - x0) if face in ("+y", "-y") else (y1 - y0)
        if face in ("+z", "-z"):
            material = gray
            u1, vt = 1.0, 0.0
        else:
            fid = c.textures.get(face)
            tiled = fid is None
            if tiled:
                fid = c.tiling[SIDE_FACES.index(face) % len(c.tiling)] if c.tiling else None
            size = _facade_size(facades, fid)
            if fid is None:
                material = gray
                u1, vt = 1.0, 0.0
            else:
                material = ("facade", fid, tiled)
                fw, fh = size if size else (span, h)
                u1 = span / fw if tiled else 1.0
                vt = 1.0 - h / fh
        # image v runs downward: bottom row of the facade at v = 1
        uv.extend([(0.0, 1.0), (u1, 1.0), (u1, vt), (0.0, vt)])
        groups.append(FaceGroup(face, material, len(idx), 6))
        idx.extend([base, base + 1, base + 2, base, base + 2, base + 3])
    return CuboidMesh(np.asarray(pos, np.float32), np.asarray(nrm, np.float32),
                      np.asarray(uv, np.float32), np.asarray(idx, np.uint32), groups)


def apply_transparency(texture, matte) -> np.ndarray:
    """RGBA texture: gray replicated to RGB, alpha from the matte."""
    tex = as_gray(texture)
    alpha = as_prob(matte)
    if tex.shape != alpha.shape:
        raise DimMismatch(f"texture {tex.shape} vs matte {alpha.shape}")
    a = to_uint8(alpha * 255.0)
    return np.dstack([tex, tex, tex, a])


# --- city ------------------------------------------------------------------------

@dataclass
class PlacedCuboid:
    block_id: str
    cuboid: Cuboid
    offset: tuple[float, float]


@dataclass
class Scene:
    cuboids: list = field(default_factory=list)  # PlacedCuboid
    facades: dict = field(default_factory=dict)  # id -> RectifiedFacade
    ground: tuple | None = None                   # (x0, y0, x1, y1)
    warnings: list = field(default_factory=list)

    def bounds(self):
        if not self.cuboids:
            return None
        fps = []
        for p in self.cuboids:
            x0, y0, x1, y1 = p.cuboid.footprint
            ox, oy = p.offset
            fps.append((x0 + ox, y0 + oy, x1 + ox, y1 + oy))
        fps = np.array(fps)
        return (fps[:, 0].min(), fps[:, 1].min(), fps[:, 2].max(), fps[:, 3].max())


def assemble_city(blocks, ground_margin: float = 5.0) -> Scene:
    """Translate every block by its offset and add a ground plane under all of them."""
    scene = Scene()
    boxes = []
    for b in blocks:
        for c in b.cuboids:
            scene.cuboids.append(PlacedCuboid(b.block_id, c, b.offset))
        scene.facades.update(b.facades)
        bb = b.bounds()
        if bb is not None:
            boxes.append((b.block_id, bb))
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if _overlap_area(boxes[i][1], boxes[j][1]) > CLOSURE_TOL ** 2:
                msg = f"blocks {boxes[i][0]} and {boxes[j][0]} overlap"
                scene.warnings.append(msg)
                warnings.warn(OverlappingBlocks(msg), stacklevel=2)
    bb = scene.bounds()
    if bb is not None:
        m = ground_margin
        scene.ground = (bb[0] - m, bb[1] - m, bb[2] + m, bb[3] + m)
    return scene
