"""Run manifest: every constant that affects results, serialized canonically."""

from __future__ import annotations

import json

from .model import ENGINE_VERSION, NORM_MEAN, NORM_STD, EngineConfig


def build_manifest(config: EngineConfig, extras: dict | None = None) -> dict:
    manifest = {
        "engine_version": ENGINE_VERSION,
        "config": config.to_dict(),
        "initialization": (f"truncated normal std={config.init_std} (|x| <= 2 std, resampled) "
                           "for weights; zero biases; layer-norm ones/zeros; "
                           "PCG64(seed) drawn in registration order"),
        "normalization": {"mean": list(NORM_MEAN), "std": list(NORM_STD)},
        "resize_policy": "shorter edge to min(max_short_edge, original); dims rounded up to multiples of 16",
        "interpolation": "bilinear, align_corners=false; label maps resized as one-hot probabilities",
        "weight_format": "CUTW v1, f32 little-endian, CRC32",
    }
    if extras:
        manifest.update(extras)
    return manifest


def manifest_json(manifest: dict) -> str:
    """Canonical serialization: sorted keys, fixed separators, trailing newline."""
    return json.dumps(manifest, sort_keys=True, separators=(",", ": "), indent=2) + "\n"


def write_manifest(manifest: dict, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(manifest_json(manifest))


def read_manifest(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)
