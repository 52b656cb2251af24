"""Occlusion removal on rectified facades.

Two classical fill backends share one contract (image + mask in, image out,
unmasked pixels untouched), and a tiler runs any backend on small slices
around each mask component so memory stays bounded on large textures.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import DimMismatch, IsolatedRegion, NoSourcePatch, SliceError
from .raster import as_gray, round_half_up

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class InpaintRequest:
    image: np.ndarray
    mask: np.ndarray  # True = synthesize

    def __post_init__(self):
        img = as_gray(self.image)
        m = np.asarray(self.mask, dtype=bool)
        if img.shape != m.shape:
            raise DimMismatch(f"image {img.shape} vs mask {m.shape}")
        if m.size and m.all():
            raise ValueError("mask covers the whole image; nothing to propagate from")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True)
class TilerConfig:
    context_radius: int = 100
    max_chunk: tuple[int, int] = (600, 400)  # width, height

    def __post_init__(self):
        if self.context_radius < 0:
            raise ValueError("context_radius must be >= 0")
        w, h = self.max_chunk
        if min(w, h) < 2 * self.context_radius + 1:
            raise ValueError("max_chunk must be at least 2*context_radius + 1 on each side")


def _finish(req: InpaintRequest, values) -> np.ndarray:
    out = req.image.copy()
    filled = np.clip(round_half_up(np.asarray(values, dtype=np.float64)), 0, 255)
    out[req.mask] = filled[req.mask].astype(np.uint8)
    return out


# --- diffusion -----------------------------------------------------------------

def _isolated_components(mask):
    """Label image of 4-connected mask components that touch no unmasked pixel."""
    labels, n = ndimage.label(mask, structure=_FOUR)
    if n == 0:
        return labels, []
    ring = ndimage.binary_dilation(~mask, structure=_FOUR) & mask
    touching = set(np.unique(labels[ring]).tolist()) - {0}
    return labels, [k for k in range(1, n + 1) if k not in touching]


def _laplace_system(img, mask):
    """Sparse 4-neighbour Laplace system over masked pixels, Neumann at the image border."""
    h, w = mask.shape
    index = -np.ones(mask.shape, dtype=np.int64)
    ys, xs = np.nonzero(mask)
    n = len(ys)
    index[ys, xs] = np.arange(n)
    deg = np.zeros(n)
    rhs = np.zeros(n)
    rows, cols = [], []
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ny, nx = ys + dy, xs + dx
        inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        deg += inside
        src = np.flatnonzero(inside)
        nb = index[ny[src], nx[src]]
        unk = nb >= 0
        rows.append(src[unk])
        cols.append(nb[unk])
        known = src[~unk]
        rhs[known] += img[ny[known], nx[known]]
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    a = sp.csr_matrix((-np.ones(len(r)), (r, c)), shape=(n, n)) + sp.diags(deg)
    return a.tocsc(), rhs, (ys, xs)


def inpaint_diffusion(req: InpaintRequest, iterations: int | None = None,
                      tolerance: float = 1e-3) -> np.ndarray:
    """Harmonic fill: masked pixels solve Laplace's equation with the surrounding
    unmasked pixels as boundary values.

    By default the sparse system is solved directly.  Passing ``iterations``
    switches to Jacobi propagation, stopping when the largest per-pixel change
    drops below ``tolerance`` or the cap is hit.  Components with no unmasked
    neighbour get the mean of all unmasked pixels and raise an
    ``IsolatedRegion`` warning.
    """
    mask = req.mask
    if not mask.any():
        return req.image.copy()
    img = req.image.astype(np.float64)
    values = img.copy()
    labels, isolated = _isolated_components(mask)
    solve_mask = mask.copy()
    if isolated:
        lonely = np.isin(labels, isolated)
        values[lonely] = img[~mask].mean()
        solve_mask &= ~lonely
        warnings.warn(IsolatedRegion(f"{len(isolated)} masked component(s) without boundary; "
                                     "filled with the global mean"), stacklevel=2)
    if solve_mask.any():
        a, rhs, (ys, xs) = _laplace_system(img, solve_mask)
        if iterations is None:
            values[ys, xs] = spla.spsolve(a, rhs)
        else:
            values[ys, xs] = _jacobi(a, rhs, iterations, tolerance, start=img[~mask].mean())
    return _finish(req, values)


def _jacobi(a, rhs, iterations, tolerance, start):
    diag = a.diagonal()
    off = a - sp.diags(diag)
    x = np.full(len(rhs), float(start))
    for _ in range(iterations):
        nxt = (rhs - off @ x) / diag
        change = np.abs(nxt - x).max()
        x = nxt
        if change < tolerance:
            break
    return x


# --- exemplar patches -------------------------------------------------------

@dataclass(frozen=True)
class PatchConfig:
    min_patch: int = 50
    max_patch: int = 73
    search_area: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_patch <= self.max_patch:
            raise ValueError("need 1 <= min_patch <= max_patch")
        if self.search_area < 0:
            raise ValueError("search_area must be >= 0")


def _patch_sizes(cfg: PatchConfig):
    sizes = [cfg.max_patch]
    s = cfg.max_patch
    while s > cfg.min_patch:
        s = max(cfg.min_patch, int(round(s / 1.25)))
        sizes.append(s)
    return sizes


def _window(center, size, h, w):
    """Top-left of a size x size window around center, shifted inside the image."""
    cy, cx = center
    sh, sw = min(size, h), min(size, w)
    y0 = int(np.clip(cy - sh // 2, 0, h - sh))
    x0 = int(np.clip(cx - sw // 2, 0, w - sw))
    return y0, x0, sh, sw


def _best_source(work, known, y0, x0, sh, sw, search, rng):
    """Best fully-known source window near the target, or None."""
    h, w = known.shape
    ry0, rx0 = max(0, y0 - search), max(0, x0 - search)
    ry1, rx1 = min(h, y0 + sh + search), min(w, x0 + sw + search)
    region = work[ry0:ry1, rx0:rx1]
    if region.shape[0] < sh or region.shape[1] < sw:
        return None
    holes = (~known[ry0:ry1, rx0:rx1]).astype(np.float64)
    integ = cv2.integral(holes)
    # count of unknown pixels in every candidate window
    bad = (integ[sh:, sw:] - integ[:-sh, sw:] - integ[sh:, :-sw] + integ[:-sh, :-sw]) > 0.5
    if bad.all():
        return None
    tmpl = work[y0:y0 + sh, x0:x0 + sw]
    tmask = known[y0:y0 + sh, x0:x0 + sw].astype(np.float32)
    if tmask.any():
        cost = cv2.matchTemplate(region, tmpl, cv2.TM_SQDIFF, mask=tmask)
        cost = np.nan_to_num(cost, nan=np.inf, posinf=np.inf)
    else:
        cost = np.zeros(bad.shape, dtype=np.float32)
    cost = np.where(bad, np.inf, cost)
    # the target itself is never a fully known window, so it cannot win
    best = cost.min()
    if not np.isfinite(best):
        return None
    ties = np.argwhere(cost <= best + 1e-6 * max(1.0, abs(float(best))))
    ty, tx = ties[rng.integers(len(ties))] if len(ties) > 1 else ties[0]
    return ry0 + int(ty), rx0 + int(tx)


def inpaint_patch(req: InpaintRequest, cfg: PatchConfig = PatchConfig()) -> np.ndarray:
    """Onion-peel exemplar fill.

    Repeatedly takes the boundary pixel whose surrounding patch is most
    complete, finds the fully known patch within ``search_area`` that best
    matches its known pixels (masked sum of squared differences), and copies
    the missing pixels.  Patch sizes shrink from ``max_patch`` to
    ``min_patch`` when no source fits; the seed only breaks exact ties.
    """
    if not req.mask.any():
        return req.image.copy()
    rng = np.random.default_rng(cfg.seed)
    work = req.image.astype(np.float32)
    known = ~req.mask
    h, w = known.shape
    sizes = _patch_sizes(cfg)
    while not known.all():
        front = ndimage.binary_dilation(known, structure=_EIGHT) & ~known
        conf = cv2.boxFilter(known.astype(np.float32), -1, (cfg.min_patch, cfg.min_patch),
                             normalize=True, borderType=cv2.BORDER_CONSTANT)
        score = np.where(front, conf, -1.0)
        center = np.unravel_index(int(np.argmax(score)), score.shape)
        placed = False
        for size in sizes:
            y0, x0, sh, sw = _window(center, size, h, w)
            src = _best_source(work, known, y0, x0, sh, sw, cfg.search_area, rng)
            if src is None:
                continue
            sy, sx = src
            hole = ~known[y0:y0 + sh, x0:x0 + sw]
            work[y0:y0 + sh, x0:x0 + sw][hole] = work[sy:sy + sh, sx:sx + sw][hole]
            known[y0:y0 + sh, x0:x0 + sw] = True
            placed = True
            break
        if not placed:
            raise NoSourcePatch(f"no fully known {cfg.min_patch}px patch within "
                                f"{cfg.search_area}px of pixel {center}")
    return _finish(req, work)


# --- backends ----------------------------------------------------------------

@dataclass(frozen=True)
class InpaintBackend:
    """Named fill routine honouring the conservation contract."""
    name: str
    deterministic: bool
    max_dims: tuple[int, int] | None  # width, height; None = unbounded
    fill: object = field(repr=False, compare=False)

    def __call__(self, req: InpaintRequest) -> np.ndarray:
        if self.max_dims is not None:
            h, w = req.image.shape
            if w > self.max_dims[0] or h > self.max_dims[1]:
                raise ValueError(f"{self.name} accepts at most {self.max_dims}, got {(w, h)}")
        return self.fill(req)


def diffusion_backend(iterations: int | None = None, tolerance: float = 1e-3) -> InpaintBackend:
    return InpaintBackend("diffusion", True, None,
                          lambda r: inpaint_diffusion(r, iterations, tolerance))


def patch_backend(cfg: PatchConfig = PatchConfig()) -> InpaintBackend:
    return InpaintBackend("patch", True, None, lambda r: inpaint_patch(r, cfg))


def get_backend(name: str, seed: int = 0) -> InpaintBackend:
    if name == "diffusion":
        return diffusion_backend()
    if name == "patch":
        return patch_backend(PatchConfig(seed=seed))
    raise ValueError(f"unknown inpainting backend {name!r}")


# --- tiling --------------------------------------------------------------------

@dataclass(frozen=True)
class Slice:
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return self.width * self.height

    def take(self, arr):
        return arr[self.y0:self.y1, self.x0:self.x1]


def _overlaps(a: Slice, b: Slice):
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


def _merge_boxes(boxes):
    boxes = list(boxes)
    merged = True
    while merged:
        merged = False
        out = []
        while boxes:
            cur = boxes.pop(0)
            i = 0
            while i < len(boxes):
                if _overlaps(cur, boxes[i]):
                    o = boxes.pop(i)
                    cur = Slice(min(cur.x0, o.x0), min(cur.y0, o.y0), max(cur.x1, o.x1), max(cur.y1, o.y1))
                    merged = True
                    i = 0
                else:
                    i += 1
            out.append(cur)
        boxes = out
    return sorted(boxes, key=lambda s: (s.y0, s.x0, s.y1, s.x1))


def _grid_starts(lo, hi, size, overlap):
    if hi - lo <= size:
        return [lo]
    step = size - overlap
    starts = list(range(lo, hi - size, step))
    starts.append(hi - size)
    return sorted(set(starts))


def _split_box(box: Slice, cfg: TilerConfig):
    mw, mh = cfg.max_chunk
    r = cfg.context_radius
    out = []
    for y in _grid_starts(box.y0, box.y1, mh, r):
        for x in _grid_starts(box.x0, box.x1, mw, r):
            out.append(Slice(x, y, min(x + mw, box.x1), min(y + mh, box.y1)))
    return out


def split_for_inpaint(req: InpaintRequest, cfg: TilerConfig = TilerConfig()):
    """Slices around each 8-connected mask component, padded by the context radius.

    Returns ``(Slice, sub_request)`` pairs; a sub-request is ``None`` when its
    slice holds no unmasked pixel to propagate from.
    """
    mask = req.mask
    h, w = mask.shape
    labels, n = ndimage.label(mask, structure=_EIGHT)
    r = cfg.context_radius
    boxes = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(Slice(max(0, xs.start - r), max(0, ys.start - r),
                           min(w, xs.stop + r), min(h, ys.stop + r)))
    out = []
    for box in _merge_boxes(boxes):
        for tile in _split_box(box, cfg):
            sub_mask = tile.take(mask)
            if not sub_mask.any():
                continue
            sub = None if sub_mask.all() else InpaintRequest(tile.take(req.image), sub_mask)
            out.append((tile, sub))
    return out


def _blend_weights(tile: Slice, shape):
    """Linear distance-to-border weights; borders shared with the image do not count."""
    h, w = shape
    yy = np.arange(tile.height)[:, None]
    xx = np.arange(tile.width)[None, :]
    big = np.iinfo(np.int64).max // 4
    d = np.full((tile.height, tile.width), big, dtype=np.int64)
    if tile.x0 > 0:
        d = np.minimum(d, np.broadcast_to(xx, d.shape))
    if tile.x1 < w:
        d = np.minimum(d, np.broadcast_to(tile.width - 1 - xx, d.shape))
    if tile.y0 > 0:
        d = np.minimum(d, np.broadcast_to(yy, d.shape))
    if tile.y1 < h:
        d = np.minimum(d, np.broadcast_to(tile.height - 1 - yy, d.shape))
    d = np.where(d == big, max(tile.width, tile.height), d)
    return d.astype(np.float64) + 1.0


@dataclass
class TileStats:
    slice_count: int = 0
    peak_slice_area: int = 0
    backend_calls: int = 0
    passes: int = 0


def inpaint_tiled(req: InpaintRequest, backend: InpaintBackend, cfg: TilerConfig = TilerConfig(),
                  workers: int = 1, stats: TileStats | None = None) -> np.ndarray:
    """Fill each slice independently and blend the results back.

    Only masked pixels are written.  Where slices overlap, their fills are
    averaged with distance-to-border weights.  Slices lying wholly inside the
    mask are deferred to a further pass once their surroundings are filled.
    Backend failures are re-raised as ``SliceError`` carrying the slice index.
    """
    stats = stats if stats is not None else TileStats()
    out = req.image.copy()
    remaining = req.mask.copy()
    while remaining.any():
        cur = InpaintRequest(out, remaining)
        slices = split_for_inpaint(cur, cfg)
        jobs = [(i, t, s) for i, (t, s) in enumerate(slices) if s is not None]
        if not jobs:
            raise SliceError(-1, ValueError("no slice has context to fill from"))
        stats.passes += 1
        stats.slice_count += len(slices)
        stats.peak_slice_area = max([stats.peak_slice_area] + [t.area for t, _ in slices])

        def run(job):
            i, tile, sub = job
            try:
                return backend(sub)
            except Exception as exc:  # tag with the slice
                raise SliceError(i, exc) from exc

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(j) for j in jobs]
        stats.backend_calls += len(jobs)

        acc = np.zeros(out.shape)
        wsum = np.zeros(out.shape)
        for (_, tile, sub), filled in zip(jobs, results):
            wt = _blend_weights(tile, out.shape) * sub.mask
            tile.take(acc)[...] += wt * filled
            tile.take(wsum)[...] += wt
        done = remaining & (wsum > 0)
        vals = np.clip(round_half_up(acc[done] / wsum[done]), 0, 255).astype(np.uint8)
        out[done] = vals
        remaining &= ~done
    return out


# --- evaluation ----------------------------------------------------------------

def inpaint_losses(pred, truth, mask=None) -> tuple[float, float]:
    """Mean l1 and l2 on the [0, 1] scale, over ``mask`` if given."""
    p = as_gray(pred).astype(np.float64) / 255.0
    t = as_gray(truth).astype(np.float64) / 255.0
    if p.shape != t.shape:
        raise DimMismatch(f"{p.shape} vs {t.shape}")
    d = p - t
    if mask is not None:
        d = d[np.asarray(mask, dtype=bool)]
    if d.size == 0:
        return 0.0, 0.0
    return float(np.abs(d).mean()), float((d ** 2).mean())


@dataclass
class InpaintMetrics:
    l1_mean: float | None
    l2_mean: float | None
    wall_time_ms: float
    slice_count: int
    peak_slice_area: int

    def to_dict(self):
        return asdict(self)


def run_inpaint(req: InpaintRequest, backend: InpaintBackend, cfg: TilerConfig = TilerConfig(),
                truth=None, workers: int = 1):
    """Tiled fill plus its metrics record; losses need a ground-truth image."""
    stats = TileStats()
    t0 = time.perf_counter()
    out = inpaint_tiled(req, backend, cfg, workers=workers, stats=stats)
    ms = 1000.0 * (time.perf_counter() - t0)
    l1 = l2 = None
    if truth is not None:
        l1, l2 = inpaint_losses(out, truth, req.mask)
    return out, InpaintMetrics(l1, l2, ms, stats.slice_count, stats.peak_slice_area)


def free_form_mask(shape, rng, strokes=(1, 4), vertices=(4, 12), width=(8, 24),
                   max_step: int = 40):
    """Random brush-stroke mask from seeded random walks.

    Returns the boolean mask and the drawn parameters for logging.
    """
    rng = np.random.default_rng(rng)
    h, w = shape
    canvas = np.zeros((h, w), dtype=np.uint8)
    log = []
    for _ in range(int(rng.integers(strokes[0], strokes[1] + 1))):
        x, y = int(rng.integers(w)), int(rng.integers(h))
        bw = int(rng.integers(width[0], width[1] + 1))
        pts = [(x, y)]
        for _ in range(int(rng.integers(vertices[0], vertices[1] + 1))):
            ang = float(rng.uniform(0, 2 * np.pi))
            step = float(rng.uniform(max_step / 4, max_step))
            x = int(np.clip(x + step * np.cos(ang), 0, w - 1))
            y = int(np.clip(y + step * np.sin(ang), 0, h - 1))
            cv2.line(canvas, pts[-1], (x, y), 255, bw)
            cv2.circle(canvas, (x, y), bw // 2, 255, -1)
            pts.append((x, y))
        log.append({"width": bw, "points": pts})
    return canvas > 0, log
