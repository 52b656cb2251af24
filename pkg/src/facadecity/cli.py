"""``reconstruct`` command line entry point."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import FacadeCityError
from .pipeline import run_pipeline

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="reconstruct",
        description="Build a textured block model (glTF) from facade photos listed in a manifest.")
    p.add_argument("manifest", help="scene manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--debug", action="store_true", help="write per-stage debug images")
    p.add_argument("--seed", type=int, default=0, help="seed for RANSAC and patch tie-breaks")
    p.add_argument("--backend", choices=("diffusion", "patch"), default="diffusion",
                   help="occlusion inpainting backend")
    p.add_argument("--no-dedup", action="store_true", help="disable VP candidate deduplication")
    p.add_argument("--metrics", metavar="FILE", help="write stage metrics JSON here")
    p.add_argument("--workers", type=int, default=1, help="facades processed in parallel")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_pipeline(args.manifest, args.out, debug=args.debug, seed=args.seed,
                              backend=args.backend, dedup=not args.no_dedup,
                              metrics_path=args.metrics, workers=max(1, args.workers))
    except FacadeCityError as exc:
        print(f"reconstruct: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    failed = report.failed
    for fid in failed:
        print(f"reconstruct: facade {fid} skipped: {report.facades[fid]['reason']}", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
