"""Rectify one synthetic facade photo step by step.

Renders a textured rectangle under a random camera, finds line segments and
the two facade vanishing points, then warps the facade to a fronto-parallel
texture.  Intermediate images land in ``demos/out/rectify``.

    python3 demos/rectify_one_view.py --seed 7
"""
import argparse
from pathlib import Path

import numpy as np

from facadecity.lines import RELAXED, STRICT, detect_edges, detect_segments, draw_segments
from facadecity.raster import save_gray_alpha, save_image
from facadecity.rectify import rectify_facade
from facadecity.synthetic import random_camera, render_facade
from facadecity.vanish import find_vanishing_points


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=Path(__file__).parent / "out" / "rectify", type=Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    cam = random_camera(rng, plane_w=12.0, plane_h=8.0)
    view = render_facade(cam, 12.0, 8.0, rng=rng)
    print(f"camera: yaw {cam.yaw_deg:.1f} deg, pitch {cam.pitch_deg:.1f} deg, focal {cam.focal:.0f} px")
    save_image(args.out / "view.png", view.image)

    edges = detect_edges(view.image)
    strict = detect_segments(view.image, view.mask, linearity=STRICT, edges=edges)
    relaxed = detect_segments(view.image, view.mask, linearity=RELAXED, edges=edges)
    print(f"segments: {len(strict)} strict (candidates), {len(relaxed)} relaxed (voters)")
    save_image(args.out / "edges.png", edges.astype(np.uint8) * 255)
    save_image(args.out / "segments.png", draw_segments(view.image, strict))

    first, second, stats = find_vanishing_points(strict, relaxed, view.mask)
    print(f"{stats['candidates']} voted candidates out of {stats['raw_candidates']} raw pairs")
    for name, s in (("first", first), ("second", second)):
        print(f"{name} VP: {s.vp.to_dict()} score {s.score:.3f}")

    rf, quad = rectify_facade(view.image, view.mask.astype(float), view.mask, first.vp, second.vp)
    err = np.hypot(*(quad.corners - view.corners).T).mean()
    print(f"corner error {err:.2f} px; aspect {rf.aspect:.3f} (true {view.aspect:.3f}); focal {rf.focal:.0f} px")
    save_gray_alpha(args.out / "rectified.png", rf.texture, rf.matte)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
