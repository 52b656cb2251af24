"""End-to-end reconstruction from a scene manifest.

Manifest layout (paths relative to the manifest file)::

    {
      "facades": [{"id": "a", "image": "a.png", "facade_mask": "a_mask.png",
                   "occlusion_masks": ["a_occ.png"], "width": 12.0, "block": "b0",
                   "neighbor": "b", "same_building": true, "cardinal": 0}],
      "blocks": [{"id": "b0", "offset": [0, 0]}],
      "config": {"vote": {"align_deg": 2.0}, "tiler": {"context_radius": 100}}
    }

Each facade is processed on its own (matting, lines, vanishing points,
rectification, occlusion inpainting); a failure is recorded in the report
and the facade becomes an untextured box.  Blocks are then walked,
assembled and exported as glTF.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lines as ln
from .blocks import FacadeRecord, assemble_city, build_block
from .errors import FacadeCityError, ManifestError
from .gltf import export_gltf
from .inpaint import InpaintRequest, PatchConfig, TilerConfig, get_backend, run_inpaint
from .matting import MattingConfig, binarize_matte, make_trimap, solve_matte
from .raster import check_same_shape, load_image, load_prob_mask, save_gray_alpha, save_image, save_matte
from .rectify import rectify_facade, scale_to_world, warp_mask
from .vanish import VoteConfig, find_vanishing_points, measure_reduction, reduction_metrics

log = logging.getLogger(__name__)

_CONFIG_TYPES = {
    "matting": MattingConfig,
    "canny": ln.CannyConfig,
    "strict": ln.LinearityConfig,
    "relaxed": ln.LinearityConfig,
    "ransac": ln.RansacConfig,
    "vote": VoteConfig,
    "tiler": TilerConfig,
    "patch": PatchConfig,
}
_DEFAULTS = {
    "matting": MattingConfig(),
    "canny": ln.CannyConfig(),
    "strict": ln.STRICT,
    "relaxed": ln.RELAXED,
    "ransac": ln.RansacConfig(),
    "vote": VoteConfig(),
    "tiler": TilerConfig(),
    "patch": PatchConfig(),
}


@dataclass
class FacadeEntry:
    id: str
    image: Path
    facade_mask: Path
    occlusion_masks: list
    width: float
    block: str
    neighbor: str
    same_building: bool
    cardinal: int
    height: float | None = None


@dataclass
class SceneManifest:
    path: Path
    facades: list
    blocks: list  # (id, (x, y), start id or None)
    config: dict

    @property
    def by_id(self):
        return {f.id: f for f in self.facades}


def _build_configs(overrides: dict) -> dict:
    cfgs = dict(_DEFAULTS)
    for key, values in (overrides or {}).items():
        if key not in _CONFIG_TYPES:
            raise ManifestError(f"unknown config section {key!r}")
        if not isinstance(values, dict):
            raise ManifestError(f"config section {key!r} must be an object")
        known = {f.name for f in dataclasses.fields(_CONFIG_TYPES[key])}
        bad = set(values) - known
        if bad:
            raise ManifestError(f"unknown keys in config {key!r}: {sorted(bad)}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        try:
            cfgs[key] = dataclasses.replace(cfgs[key], **vals)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"bad config {key!r}: {exc}") from exc
    return cfgs


def load_manifest(path) -> SceneManifest:
    """Parse and validate a manifest; raises ``ManifestError`` naming the problem."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    facades = []
    seen = set()
    for i, f in enumerate(raw.get("facades", [])):
        try:
            fid = str(f["id"])
            entry = FacadeEntry(
                id=fid,
                image=root / f["image"],
                facade_mask=root / f["facade_mask"],
                occlusion_masks=[root / p for p in f.get("occlusion_masks", [])],
                width=float(f["width"]),
                block=str(f["block"]),
                neighbor=str(f["neighbor"]),
                same_building=bool(f.get("same_building", False)),
                cardinal=int(f.get("cardinal", 0)),
                height=float(f["height"]) if f.get("height") is not None else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"facade entry {i}: {exc!r}") from exc
        if fid in seen:
            raise ManifestError(f"duplicate facade id {fid!r}")
        seen.add(fid)
        if not entry.width > 0:
            raise ManifestError(f"facade {fid}: width must be positive")
        if entry.cardinal not in (0, 1, 2, 3):
            raise ManifestError(f"facade {fid}: cardinal must be 0..3")
        for p in [entry.image, entry.facade_mask, *entry.occlusion_masks]:
            if not p.is_file():
                raise ManifestError(f"facade {fid}: missing file {p}")
        facades.append(entry)

    blocks = []
    for b in raw.get("blocks", []):
        try:
            off = b.get("offset", [0.0, 0.0])
            blocks.append((str(b["id"]), (float(off[0]), float(off[1])), b.get("start")))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ManifestError(f"block entry {b!r}: {exc!r}") from exc
    block_ids = {b[0] for b in blocks}
    by_id = {f.id: f for f in facades}
    for f in facades:
        if f.block not in block_ids:
            raise ManifestError(f"facade {f.id}: unknown block {f.block!r}")
        nb = by_id.get(f.neighbor)
        if nb is None or nb.block != f.block:
            raise ManifestError(f"facade {f.id}: neighbor {f.neighbor!r} is not in block {f.block!r}")
    for bid, _, _ in blocks:
        members = [f for f in facades if f.block == bid]
        if not members:
            continue
        cur, visited = members[0], set()
        while cur.id not in visited:
            visited.add(cur.id)
            cur = by_id[cur.neighbor]
        if cur.id != members[0].id or len(visited) != len(members):
            raise ManifestError(f"block {bid}: neighbor links do not form a single cycle")
    return SceneManifest(path, facades, blocks, _build_configs(raw.get("config", {})))


# --- per-facade processing ---------------------------------------------------------

@dataclass
class FacadeResult:
    id: str
    status: str = "ok"
    reason: str | None = None
    timings: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    inpaint: dict | None = None
    rectified: object = None  # RectifiedFacade
    reduction: dict | None = None

    def to_dict(self):
        return {"id": self.id, "status": self.status, "reason": self.reason,
                "timings": self.timings, **self.info, "inpaint": self.inpaint,
                "vp_reduction": self.reduction}


class _Stopwatch:
    def __init__(self, timings):
        self.timings = timings

    def __call__(self, name):
        sw = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                sw.timings[name] = sw.timings.get(name, 0.0) + time.perf_counter() - self.t0
        return _Ctx()


def _matte_from_prob(image, prob, cfg):
    trimap = make_trimap(prob, cfg)
    return trimap, solve_matte(image, trimap, cfg)


def process_facade(entry: FacadeEntry, cfgs: dict, seed: int = 0, backend: str = "diffusion",
                   dedup: bool = True, measure: bool = False, debug_dir: Path | None = None) -> FacadeResult:
    res = FacadeResult(entry.id)
    clock = _Stopwatch(res.timings)
    try:
        with clock("load"):
            image = load_image(entry.image)
            prob = load_prob_mask(entry.facade_mask)
            occ_probs = [load_prob_mask(p) for p in entry.occlusion_masks]
            check_same_shape(image, prob, *occ_probs)

        mcfg = cfgs["matting"]
        with clock("matting"):
            trimap, matte = _matte_from_prob(image, prob, mcfg)
            facade_mask = binarize_matte(matte, mcfg)
            occ = np.zeros(image.shape, dtype=bool)
            for p in occ_probs:
                if (p >= mcfg.fg_threshold).any():
                    occ |= binarize_matte(_matte_from_prob(image, p, mcfg)[1], mcfg)

        ransac = dataclasses.replace(cfgs["ransac"], seed=seed)
        line_mask = facade_mask & ~occ
        with clock("lines"):
            edges = ln.detect_edges(image, cfgs["canny"])
            strict = ln.detect_segments(image, line_mask, cfgs["canny"], cfgs["strict"], ransac, edges=edges)
            relaxed = ln.detect_segments(image, line_mask, cfgs["canny"], cfgs["relaxed"], ransac, edges=edges)
        res.info["segments"] = {"strict": len(strict), "relaxed": len(relaxed)}

        vcfg = cfgs["vote"]
        with clock("vanishing"):
            first, second, stats = find_vanishing_points(strict, relaxed, line_mask, vcfg, dedup=dedup)
        res.info["vanishing_points"] = [dict(first.vp.to_dict(), score=first.score),
                                        dict(second.vp.to_dict(), score=second.score)]
        res.info["candidates"] = {"raw": stats["raw_candidates"], "voted": stats["candidates"],
                                  "segments_after_dedup": stats["segments_after_dedup"]}
        if measure:
            rep = measure_reduction(strict, relaxed, line_mask, vcfg)
            res.reduction = {"counts": rep.counts, "timings": rep.timings}

        with clock("rectify"):
            rf, quad = rectify_facade(image, matte, facade_mask, first.vp, second.vp)
            occ_rect = warp_mask(occ.astype(np.float64), rf.homography, rf.texture.shape[::-1]) > 0.5
        res.info["quad"] = quad.corners.tolist()
        res.info["aspect"] = rf.aspect
        res.info["focal"] = rf.focal
        res.info["approximate_focal"] = rf.approximate_focal

        with clock("inpaint"):
            texture = rf.texture
            hole = occ_rect & (rf.matte > 0)
            if hole.any() and not hole.all():
                texture, metrics = run_inpaint(InpaintRequest(texture, hole), get_backend(backend, seed),
                                               cfgs["tiler"])
                res.inpaint = metrics.to_dict()
            else:
                res.inpaint = {"l1_mean": None, "l2_mean": None, "wall_time_ms": 0.0,
                               "slice_count": 0, "peak_slice_area": 0}
        rf = scale_to_world(dataclasses.replace(rf, texture=texture), entry.width)
        res.rectified = rf
        res.info.update(rf.sidecar())

        if debug_dir is not None:
            d = debug_dir / entry.id
            d.mkdir(parents=True, exist_ok=True)
            save_image(d / "trimap.png", trimap)
            save_matte(d / "matte.png", matte)
            save_image(d / "edges.png", edges.astype(np.uint8) * 255)
            save_image(d / "segments_strict.png", ln.draw_segments(image, strict))
            save_image(d / "segments_relaxed.png", ln.draw_segments(image, relaxed))
            save_image(d / "occlusion_rectified.png", occ_rect.astype(np.uint8) * 255)
            save_gray_alpha(d / "rectified_raw.png", res.rectified.texture, rf.matte)
            (d / "segments.json").write_text(json.dumps(ln.segments_to_json(strict)))
    except (FacadeCityError, ValueError, IndexError, np.linalg.LinAlgError) as exc:
        res.status = "failed"
        res.reason = f"{type(exc).__name__}: {exc}"
        log.warning("facade %s failed: %s", entry.id, res.reason)
    return res


# --- report -------------------------------------------------------------------------

@dataclass
class RunReport:
    seed: int
    backend: str
    dedup: bool
    facades: dict = field(default_factory=dict)  # id -> FacadeResult dict
    blocks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    stages: dict = field(default_factory=dict)   # stage -> seconds
    vp_reduction: dict | None = None
    outputs: dict = field(default_factory=dict)

    @property
    def failed(self):
        return sorted(k for k, v in self.facades.items() if v["status"] != "ok")

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


_TIMING_KEYS = {"timings", "stages", "wall_time_ms", "seconds", "time_pct"}


def strip_timings(obj):
    """Copy of a report dict without wall-clock fields (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timings(v) for k, v in obj.items() if k not in _TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timings(v) for v in obj]
    return obj


def stage_metrics(report: RunReport) -> dict:
    """Per-stage wall time, VP candidate counts and tiler slice statistics."""
    cands = {"raw": 0, "voted": 0}
    slices, peak = 0, 0
    for f in report.facades.values():
        c = f.get("candidates") or {}
        cands["raw"] += c.get("raw", 0)
        cands["voted"] += c.get("voted", 0)
        inp = f.get("inpaint") or {}
        slices += inp.get("slice_count", 0)
        peak = max(peak, inp.get("peak_slice_area", 0))
    return {"stages": dict(report.stages), "vp_candidates": cands,
            "inpaint": {"slice_count": slices, "peak_slice_area": peak},
            "vp_reduction": report.vp_reduction}


def _aggregate_reduction(results):
    rows = [r.reduction for r in results if r.reduction]
    if not rows:
        return None
    counts = {k: sum(r["counts"][k] for r in rows) for k in rows[0]["counts"]}
    timings = {k: sum(r["timings"][k] for r in rows) for k in rows[0]["timings"]}
    rep = reduction_metrics(counts["baseline"], {k: v for k, v in counts.items() if k != "baseline"}, timings)
    return rep.to_dict()


def run_pipeline(manifest_path, out_dir, debug: bool = False, seed: int = 0, backend: str = "diffusion",
                 dedup: bool = True, metrics_path=None, workers: int = 1) -> RunReport:
    """Process every facade, assemble the blocks and export the scene."""
    manifest = load_manifest(manifest_path)
    cfgs = manifest.config
    out = Path(out_dir)
    (out / "facades").mkdir(parents=True, exist_ok=True)
    debug_dir = out / "debug" if debug else None
    report = RunReport(seed=seed, backend=backend, dedup=dedup)
    measure = metrics_path is not None

    t0 = time.perf_counter()
    entries = sorted(manifest.facades, key=lambda e: e.id)
    job = lambda e: process_facade(e, cfgs, seed, backend, dedup, measure, debug_dir)  # noqa: E731
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(job, entries))
        else:
            results = [job(e) for e in entries]
    report.warnings.extend(sorted({str(w.message) for w in caught}))
    for r in results:
        for k, v in r.timings.items():
            report.stages[k] = report.stages.get(k, 0.0) + v
    report.stages["facades_total"] = time.perf_counter() - t0
    by_id = {r.id: r for r in results}

    for r in results:
        report.facades[r.id] = r.to_dict()
        if r.rectified is not None:
            rf = r.rectified
            save_gray_alpha(out / "facades" / f"{r.id}.png", rf.texture, rf.matte)
            (out / "facades" / f"{r.id}.json").write_text(json.dumps(rf.sidecar(), indent=1))
    report.vp_reduction = _aggregate_reduction(results)

    t1 = time.perf_counter()
    layouts = []
    for bid, offset, start_id in manifest.blocks:
        members = [e for e in manifest.facades if e.block == bid]
        if not members:
            continue
        records = {}
        for e in members:
            rf = by_id[e.id].rectified
            height = rf.world_height if rf is not None else (e.height or e.width)
            records[e.id] = FacadeRecord(e.id, e.width, height, e.neighbor, e.same_building,
                                         e.cardinal, rf)
        start = records[start_id] if start_id in records else records[members[0].id]
        try:
            layout, brep = build_block(bid, offset, start, records)
        except FacadeCityError as exc:
            report.warnings.append(f"block {bid}: {type(exc).__name__}: {exc}")
            continue
        if brep.gap_distributed:
            report.warnings.append(f"block {bid}: chain does not close (gap {brep.closure_gap_m:.3f} m); "
                                   "gap distributed over the walk")
        layouts.append(layout)
        report.blocks.append(brep.to_dict())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        scene = assemble_city(layouts)
    report.warnings.extend(str(w.message) for w in caught)
    gltf_path = export_gltf(scene, out)
    report.stages["modeling"] = time.perf_counter() - t1
    report.outputs = {"gltf": gltf_path.name, "facades": sorted(f"facades/{r.id}.png"
                                                                for r in results if r.rectified is not None)}

    (out / "report.json").write_text(report.to_json(indent=1))
    if metrics_path is not None:
        Path(metrics_path).write_text(json.dumps(stage_metrics(report), indent=1))
    return report
