"""Query and mask encoders plus memory-value fusion.

Both encoders share the same strided pyramid layout (stride 4 / 8 / 16); the
query encoder additionally projects the stride-16 feature into the pixel-memory
key space together with per-pixel shrinkage and selection terms.  Keys and
queries come from the same projection, so a frame matched against its own
memory entry scores highest at the identical position by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .registry import ParamRegistry
from .tensor import conv2d, relu, sigmoid, softplus


def _conv(params: ParamRegistry, name: str, x: np.ndarray, stride: int = 1) -> np.ndarray:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride)


def _res_block(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    y = _conv(params, f"{name}.conv2", relu(_conv(params, f"{name}.conv1", x)))
    return x + y


def _pyramid(params: ParamRegistry, prefix: str, x: np.ndarray):
    """Run the shared backbone; returns (f4, f8, f16) feature maps."""
    if x.ndim != 3:
        raise DimensionError(f"expected [C,H,W] image tensor, got shape {x.shape}")
    h, w = x.shape[1:]
    if h % 16 or w % 16 or h < 16 or w < 16:
        raise InputError(f"spatial dims must be positive multiples of 16, got {h}x{w}")
    y = relu(_conv(params, f"{prefix}.stem.conv0", x, stride=2))
    y = relu(_conv(params, f"{prefix}.stem.conv1", y, stride=2))
    f4 = _res_block(params, f"{prefix}.res4", y)
    y = relu(_conv(params, f"{prefix}.down8", f4, stride=2))
    f8 = _res_block(params, f"{prefix}.res8", y)
    y = relu(_conv(params, f"{prefix}.down16", f8, stride=2))
    f16 = _res_block(params, f"{prefix}.res16", y)
    return f4, f8, f16


@dataclass
class QueryFeatures:
    """Everything the per-frame pipeline needs from one RGB frame."""

    f16: np.ndarray  # [C, H16, W16]
    f8: np.ndarray  # [C8, H8, W8]
    f4: np.ndarray  # [C4, H4, W4]
    key: np.ndarray  # [H16*W16, Ck], doubles as query and as stored memory key
    shrinkage: np.ndarray  # [H16*W16], >= 1
    selection: np.ndarray  # [H16*W16, Ck], in [0, 1]

    @property
    def hw_shape(self) -> tuple:
        return self.f16.shape[1], self.f16.shape[2]


def encode_query(params: ParamRegistry, image: np.ndarray) -> QueryFeatures:
    """Encode an RGB frame [3,H,W] into multi-scale features and key terms."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got shape {image.shape}")
    f4, f8, f16 = _pyramid(params, "query_encoder", image)
    c, h16, w16 = f16.shape
    key_map = _conv(params, "query_encoder.key_proj", f16)
    shrink_map = _conv(params, "query_encoder.shrink_proj", f16)
    select_map = _conv(params, "query_encoder.select_proj", f16)
    key = key_map.reshape(key_map.shape[0], -1).T.copy()
    shrinkage = 1.0 + softplus(shrink_map.reshape(-1))
    selection = sigmoid(select_map.reshape(select_map.shape[0], -1).T)
    return QueryFeatures(f16=f16, f8=f8, f4=f4, key=key,
                         shrinkage=shrinkage.astype(f16.dtype),
                         selection=np.ascontiguousarray(selection, dtype=f16.dtype))


def encode_mask(
    params: ParamRegistry,
    image: np.ndarray,
    target_mask: np.ndarray,
    others_mask: np.ndarray,
    query_f16: np.ndarray,
):
    """Encode one object's mask into a memory value and an object feature map.

    The mask encoder sees five planes: the RGB frame, the target object's mask
    and the union of all other objects' masks.  Its stride-16 output is both
    returned as the object feature map (rows, [HW, C]) and fused with the query
    encoder's stride-16 feature to produce the stored memory value [HW, C].
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got shape {image.shape}")
    if target_mask.shape != image.shape[1:] or others_mask.shape != image.shape[1:]:
        raise DimensionError(
            f"mask shapes {target_mask.shape}/{others_mask.shape} do not match image {image.shape[1:]}")
    planes = np.concatenate([
        image,
        target_mask[None].astype(image.dtype),
        others_mask[None].astype(image.dtype),
    ], axis=0)
    _, _, g16 = _pyramid(params, "mask_encoder", planes)
    if g16.shape != query_f16.shape:
        raise DimensionError(f"mask feature {g16.shape} does not match query feature {query_f16.shape}")
    fused = _conv(params, "value_fusion.query_proj", query_f16) + _conv(params, "value_fusion.mask_proj", g16)
    fused = _res_block(params, "value_fusion.block0", fused)
    fused = _res_block(params, "value_fusion.block1", fused)
    value = fused.reshape(fused.shape[0], -1).T.copy()
    feature = g16.reshape(g16.shape[0], -1).T.copy()
    return value, feature
