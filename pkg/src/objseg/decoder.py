"""Mask decoder and multi-object probability aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .registry import ParamRegistry
from .tensor import bilinear_resize, conv2d, relu

AGG_EPS = 1e-7


def _conv(params: ParamRegistry, name: str, x: np.ndarray, stride: int = 1) -> np.ndarray:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride)


def _res_block(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    return x + _conv(params, f"{name}.conv2", relu(_conv(params, f"{name}.conv1", x)))


@dataclass
class DecodeResult:
    logits: np.ndarray  # [H, W] single-object mask logits at image resolution
    d16: np.ndarray  # decoder features, stride 16
    d8: np.ndarray  # stride 8
    d4: np.ndarray  # stride 4


def decode(
    params: ParamRegistry,
    readout: np.ndarray,
    f8: np.ndarray,
    f4: np.ndarray,
    out_size: tuple,
) -> DecodeResult:
    """Decode one object's transformer readout [C,H16,W16] into mask logits.

    The stride-16 input is projected to decoder width, upsampled twice with
    skip connections from the query encoder (1x1-projected, added, then a
    residual block of two 3x3 convs), reduced to one channel at stride 4 and
    bilinearly resized to the frame resolution.  The per-scale feature maps are
    returned for the sensory-memory update.
    """
    if readout.ndim != 3:
        raise DimensionError(f"expected [C,H16,W16] readout, got shape {readout.shape}")
    d16 = _conv(params, "decoder.in_proj", readout)
    y = bilinear_resize(d16, f8.shape[1], f8.shape[2]) + _conv(params, "decoder.skip8", f8)
    d8 = _res_block(params, "decoder.up8", y)
    y = bilinear_resize(d8, f4.shape[1], f4.shape[2]) + _conv(params, "decoder.skip4", f4)
    d4 = _res_block(params, "decoder.up4", y)
    logits = _conv(params, "decoder.final", d4)
    logits = bilinear_resize(logits, out_size[0], out_size[1])[0]
    return DecodeResult(logits=logits, d16=d16, d8=d8, d4=d4)


def soft_aggregate(prob_maps: np.ndarray) -> np.ndarray:
    """Merge per-object mask probabilities [O,H,W] into a distribution [O+1,H,W].

    Channel 0 is background, computed as the product of the per-object
    complements; all channels are then renormalized in odds space so each pixel
    sums to one.  Inputs are clamped to [AGG_EPS, 1 - AGG_EPS] first.

    Reductions over the object axis (the background product and the odds sum)
    run over value-sorted operands, so the result is invariant, bit for bit,
    to the order in which the object maps are stacked.
    """
    if prob_maps.ndim != 3:
        raise DimensionError(f"expected [O,H,W] probability stack, got shape {prob_maps.shape}")
    if prob_maps.shape[0] < 1:
        raise InputError("need at least one object probability map")
    if np.min(prob_maps) < 0.0 or np.max(prob_maps) > 1.0:
        raise InputError("probabilities must lie in [0, 1]")
    p = np.clip(prob_maps, AGG_EPS, 1.0 - AGG_EPS)
    bg = np.multiply.reduce(np.sort(1.0 - p, axis=0), axis=0)
    bg = np.clip(bg, AGG_EPS, 1.0 - AGG_EPS)
    odds = p / (1.0 - p)
    odds_sum = np.add.reduce(np.sort(odds, axis=0), axis=0) + bg / (1.0 - bg)
    out = np.empty((p.shape[0] + 1,) + p.shape[1:], dtype=prob_maps.dtype)
    out[0] = bg / (1.0 - bg) / odds_sum
    out[1:] = odds / odds_sum
    return out
