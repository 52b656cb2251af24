"""glTF 2.0 export: one .gltf, one .bin and a PNG per facade texture.

Block coordinates (x east, y north, z up, metres) map to glTF's y-up frame
as (x, z, -y), a proper rotation, so triangle winding survives.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .blocks import Scene, apply_transparency, build_cuboid_mesh
from .errors import WriteFailure

_ARRAY_BUFFER = 34962
_ELEMENT_ARRAY_BUFFER = 34963
_FLOAT = 5126
_USHORT = 5123
_LINEAR = 9729
_REPEAT = 10497
_CLAMP = 33071


def to_y_up(points):
    p = np.asarray(points, dtype=np.float32)
    return np.stack([p[:, 0], p[:, 2], -p[:, 1]], axis=1)


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(name))


class _Builder:
    def __init__(self):
        self.blob = bytearray()
        self.doc = {
            "asset": {"version": "2.0", "generator": "facadecity"},
            "scene": 0,
            "scenes": [{"nodes": []}],
            "nodes": [], "meshes": [], "materials": [], "accessors": [], "bufferViews": [],
        }
        self.material_ids = {}
        self.sampler_ids = {}

    def _view(self, data: bytes, target):
        while len(self.blob) % 4:
            self.blob.append(0)
        view = {"buffer": 0, "byteOffset": len(self.blob), "byteLength": len(data), "target": target}
        self.blob.extend(data)
        self.doc["bufferViews"].append(view)
        return len(self.doc["bufferViews"]) - 1

    def _accessor(self, view, ctype, count, kind, offset=0, lo=None, hi=None):
        acc = {"bufferView": view, "componentType": ctype, "count": int(count), "type": kind}
        if offset:
            acc["byteOffset"] = int(offset)
        if lo is not None:
            acc["min"] = [float(v) for v in lo]
            acc["max"] = [float(v) for v in hi]
        self.doc["accessors"].append(acc)
        return len(self.doc["accessors"]) - 1

    def attributes(self, pos, nrm, uv):
        pos = np.ascontiguousarray(pos, np.float32)
        out = {
            "POSITION": self._accessor(self._view(pos.tobytes(), _ARRAY_BUFFER), _FLOAT, len(pos),
                                       "VEC3", lo=pos.min(axis=0), hi=pos.max(axis=0)),
            "NORMAL": self._accessor(self._view(np.ascontiguousarray(nrm, np.float32).tobytes(), _ARRAY_BUFFER),
                                     _FLOAT, len(nrm), "VEC3"),
        }
        if uv is not None:
            out["TEXCOORD_0"] = self._accessor(
                self._view(np.ascontiguousarray(uv, np.float32).tobytes(), _ARRAY_BUFFER), _FLOAT, len(uv), "VEC2")
        return out

    def indices(self, idx, groups):
        """One index view per mesh, one accessor per (start, count) group."""
        idx = np.ascontiguousarray(idx, np.uint16)
        view = self._view(idx.tobytes(), _ELEMENT_ARRAY_BUFFER)
        return [self._accessor(view, _USHORT, count, "SCALAR", offset=2 * start,
                               lo=[idx[start:start + count].min()], hi=[idx[start:start + count].max()])
                for start, count in groups]

    def gray_material(self, level: int):
        key = ("gray", level)
        if key not in self.material_ids:
            g = level / 255.0
            self.doc["materials"].append({
                "name": f"gray_{level}",
                "pbrMetallicRoughness": {"baseColorFactor": [g, g, g, 1.0],
                                         "metallicFactor": 0.0, "roughnessFactor": 1.0},
            })
            self.material_ids[key] = len(self.doc["materials"]) - 1
        return self.material_ids[key]

    def sampler(self, repeat: bool):
        if repeat not in self.sampler_ids:
            self.doc.setdefault("samplers", []).append(
                {"magFilter": _LINEAR, "minFilter": _LINEAR,
                 "wrapS": _REPEAT if repeat else _CLAMP, "wrapT": _CLAMP})
            self.sampler_ids[repeat] = len(self.doc["samplers"]) - 1
        return self.sampler_ids[repeat]

    def facade_material(self, image_index: int, tiled: bool):
        key = ("facade", image_index, tiled)
        if key not in self.material_ids:
            doc = self.doc
            doc.setdefault("textures", []).append({"sampler": self.sampler(tiled), "source": image_index})
            doc["materials"].append({
                "name": f"facade_{image_index}{'_tiled' if tiled else ''}",
                "pbrMetallicRoughness": {"baseColorTexture": {"index": len(doc["textures"]) - 1},
                                         "metallicFactor": 0.0, "roughnessFactor": 1.0},
                "alphaMode": "MASK",
                "alphaCutoff": 0.5,
            })
            self.material_ids[key] = len(doc["materials"]) - 1
        return self.material_ids[key]

    def add_mesh(self, name, attributes, prims):
        self.doc["meshes"].append({"name": name, "primitives": [
            {"attributes": attributes, "indices": acc, "material": mat, "mode": 4} for acc, mat in prims]})
        self.doc["nodes"].append({"name": name, "mesh": len(self.doc["meshes"]) - 1})
        self.doc["scenes"][0]["nodes"].append(len(self.doc["nodes"]) - 1)


def export_gltf(scene: Scene, out_dir, name: str = "scene") -> Path:
    """Write ``<name>.gltf``, ``<name>.bin`` and ``textures/*.png``; returns the .gltf path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        b = _Builder()
        images = {}

        def image_index(fid):
            if fid not in images:
                f = scene.facades[fid]
                rel = f"textures/{_safe(fid)}.png"
                (out / "textures").mkdir(exist_ok=True)
                Image.fromarray(apply_transparency(f.texture, f.matte), "RGBA").save(out / rel)
                b.doc.setdefault("images", []).append({"uri": rel, "mimeType": "image/png"})
                images[fid] = len(b.doc["images"]) - 1
            return images[fid]

        for k, placed in enumerate(scene.cuboids):
            mesh = build_cuboid_mesh(placed.cuboid, scene.facades)
            ox, oy = placed.offset
            pos = mesh.positions + np.array([ox, oy, 0.0], np.float32)
            attrs = b.attributes(to_y_up(pos), to_y_up(mesh.normals), mesh.uvs)
            accs = b.indices(mesh.indices, [(g.start, g.count) for g in mesh.groups])
            prims = []
            for acc, g in zip(accs, mesh.groups):
                if g.material[0] == "facade" and g.material[1] in scene.facades:
                    mat = b.facade_material(image_index(g.material[1]), g.material[2])
                else:
                    level = g.material[1] if g.material[0] == "gray" else 128
                    mat = b.gray_material(level)
                prims.append((acc, mat))
            name_k = f"{_safe(placed.block_id)}_{_safe(placed.cuboid.facade_id)}_{k}"
            b.add_mesh(name_k, attrs, prims)

        if scene.ground is not None:
            x0, y0, x1, y1 = scene.ground
            pos = np.array([(x0, y0, 0), (x1, y0, 0), (x1, y1, 0), (x0, y1, 0)], np.float32)
            nrm = np.tile(np.array([[0, 0, 1]], np.float32), (4, 1))
            attrs = b.attributes(to_y_up(pos), to_y_up(nrm), None)
            accs = b.indices(np.array([0, 1, 2, 0, 2, 3]), [(0, 6)])
            b.add_mesh("ground", attrs, [(accs[0], b.gray_material(90))])

        doc = b.doc
        for key in ("nodes", "meshes", "materials", "accessors", "bufferViews"):
            if not doc[key]:
                del doc[key]
        if not doc["scenes"][0]["nodes"]:
            del doc["scenes"][0]["nodes"]
        if b.blob:
            (out / f"{name}.bin").write_bytes(bytes(b.blob))
            doc["buffers"] = [{"uri": f"{name}.bin", "byteLength": len(b.blob)}]
        path = out / f"{name}.gltf"
        path.write_text(json.dumps(doc, indent=1))
        return path
    except OSError as exc:
        raise WriteFailure(f"could not write glTF to {out}: {exc}") from exc
