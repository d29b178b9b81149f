"""Batch propagation command line.

Reads a directory of frames in lexicographic order, propagates the
first-frame mask through them and writes one label-map PNG per frame,
a run manifest, and optionally a JSON report with timings and scores.

Exit codes: 0 success, 2 missing/unusable inputs, 3 weight file problems.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .errors import CompatibilityError, EngineError, FormatError
from .manifest import build_manifest, write_manifest
from .maskio import load_frame, read_mask, write_mask
from .metrics import default_boundary_tol, sequence_scores
from .model import EngineConfig, build_registry
from .session import add_reference, create_session, step
from .weightfile import check_compatible, load_weights

FRAME_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
EXIT_INPUT = 2
EXIT_WEIGHTS = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="objseg",
        description="Propagate a first-frame object mask through a directory of frames.")
    p.add_argument("--frames", required=True, help="frame directory (lexicographic order)")
    p.add_argument("--first-mask", required=True, help="label map for the first frame")
    weights = p.add_mutually_exclusive_group(required=True)
    weights.add_argument("--weights", help="CUTW weight container")
    weights.add_argument("--random-init", type=int, metavar="SEED",
                         help="draw weights from SEED instead of loading a file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mem-interval", type=int, default=5, help="memory frame every r-th frame")
    p.add_argument("--t-max", type=int, default=5, help="pixel memory capacity")
    p.add_argument("--top-k", type=int, default=30, help="memory readout top-k")
    p.add_argument("--max-short-edge", type=int, default=480)
    p.add_argument("--gt", help="ground-truth mask directory for J/F scoring")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--dump-attention", help="write per-frame query attention maps here")
    return p


def _list_frames(directory: str) -> list:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"frame directory not found: {directory}")
    names = sorted(n for n in os.listdir(directory)
                   if n.lower().endswith(FRAME_EXTENSIONS))
    if not names:
        raise FileNotFoundError(f"no frames in {directory}")
    return names


def _find_gt(gt_dir: str, stem: str):
    for ext in (".png", ".pgm"):
        path = os.path.join(gt_dir, stem + ext)
        if os.path.exists(path):
            return path
    return None


def run_cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = EngineConfig(mem_interval=args.mem_interval, t_max=args.t_max,
                          top_k=args.top_k, max_short_edge=args.max_short_edge,
                          seed=args.random_init if args.random_init is not None else 0)
    try:
        frame_names = _list_frames(args.frames)
        if not os.path.exists(args.first_mask):
            raise FileNotFoundError(f"first mask not found: {args.first_mask}")
        if args.gt and not os.path.isdir(args.gt):
            raise FileNotFoundError(f"ground-truth directory not found: {args.gt}")
        if args.weights and not os.path.exists(args.weights):
            raise FileNotFoundError(f"weight file not found: {args.weights}")
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if args.weights:
        try:
            params = load_weights(args.weights)
            check_compatible(params, build_registry(config))
        except (FormatError, CompatibilityError) as exc:
            print(f"error: unusable weights: {exc}", file=sys.stderr)
            return EXIT_WEIGHTS
    else:
        params = build_registry(config)

    try:
        state = create_session(config, params)
        reference_mask = read_mask(args.first_mask)
        first = load_frame(os.path.join(args.frames, frame_names[0]))
        add_reference(state, first, reference_mask)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    os.makedirs(args.out, exist_ok=True)
    if args.dump_attention:
        os.makedirs(args.dump_attention, exist_ok=True)

    stems = [os.path.splitext(n)[0] for n in frame_names]
    outputs = [np.asarray(reference_mask, dtype=np.int32)]
    write_mask(outputs[0], os.path.join(args.out, stems[0] + ".png"))
    frame_seconds = []
    for name, stem in zip(frame_names[1:], stems[1:]):
        frame = load_frame(os.path.join(args.frames, name))
        t0 = time.perf_counter()
        labels = step(state, frame)
        frame_seconds.append(time.perf_counter() - t0)
        outputs.append(labels)
        write_mask(labels, os.path.join(args.out, stem + ".png"))
        if args.dump_attention:
            maps = {f"object_{obj}": arr
                    for obj, arr in state.last_debug["attention"].items()}
            np.savez(os.path.join(args.dump_attention, stem + ".npz"), **maps)

    total = sum(frame_seconds)
    report = {
        "frames": len(frame_names),
        "objects": state.object_ids,
        "per_frame_seconds": frame_seconds,
        "fps": (len(frame_seconds) / total) if total > 0 else 0.0,
    }

    if args.gt:
        tol = default_boundary_tol(state.frame_size)
        preds, gts = [], []
        for stem, labels in zip(stems, outputs):
            gt_path = _find_gt(args.gt, stem)
            if gt_path is not None:
                preds.append(labels)
                gts.append(read_mask(gt_path))
        if preds:
            scores = sequence_scores(preds, gts, state.object_ids, tol_px=tol)
            report["metrics"] = {
                "scored_frames": len(preds),
                "boundary_tol_px": tol,
                "per_object": {str(k): v for k, v in scores["per_object"].items()},
                "overall": scores["overall"],
            }
            overall = scores["overall"]
            print(f"J {overall['J']:.4f}  F {overall['F']:.4f}  J&F {overall['JF']:.4f}  "
                  f"({len(preds)} frames, tol {tol}px)")

    write_manifest(build_manifest(config, extras={"frames": len(frame_names)}),
                   os.path.join(args.out, "manifest.json"))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"wrote {len(frame_names)} masks to {args.out}"
          + (f"  ({report['fps']:.2f} fps)" if frame_seconds else ""))
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
