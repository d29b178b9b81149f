"""Pixel memory: attentional key/value frames plus a recurrent hidden state.

Keys, shrinkage and per-object values of selected past frames are kept in a
bank with FIFO eviction; the user-given first frame (and any frame marked
permanent) is pinned and never evicted.  Reading is anisotropic-L2 attention
with per-row top-k filtering, fused with the hidden state.  Two separate
convolutional GRUs update the hidden state: a sensory one every frame from
decoder features, and a deep one from mask-encoder features whenever a
memory frame is inserted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import conv_gru_update, residual_conv_block
from .errors import DimensionError, InputError
from .registry import ParamRegistry
from .tensor import NEG_INF, area_downsample, conv2d, masked_softmax_rows


def similarity(q: np.ndarray, e: np.ndarray, k: np.ndarray, s: np.ndarray) -> np.ndarray:
    """d[i,j] = -s_j * sum_c e_ic (k_jc - q_ic)^2, shape [HW, THW].

    Always <= 0, with the maximum 0 exactly when the key equals the query
    on every selected channel.  Expanded into three matmuls; the expansion
    is algebraically exact and checked against a loop oracle in tests.
    """
    hw, ck = q.shape
    if e.shape != (hw, ck):
        raise DimensionError(f"selection shape {e.shape} != query shape {q.shape}")
    if k.ndim != 2 or k.shape[1] != ck or s.shape != (k.shape[0],):
        raise DimensionError(f"memory shapes k {k.shape}, s {s.shape} inconsistent with Ck={ck}")
    q64 = q.astype(np.float64)
    e64 = e.astype(np.float64)
    k64 = k.astype(np.float64)
    # sum_c e (k - q)^2 = e k^2 - 2 (e q) k + e q^2
    d = e64 @ (k64**2).T - 2.0 * (e64 * q64) @ k64.T + (e64 * q64**2).sum(axis=1, keepdims=True)
    return (-s.astype(np.float64) * d).astype(q.dtype, copy=False)


def affinity(logits: np.ndarray, top_k: int) -> np.ndarray:
    """Row softmax over the top_k largest logits per row; zeros elsewhere."""
    if top_k < 1:
        raise InputError(f"top_k must be >= 1, got {top_k}")
    hw, thw = logits.shape
    keep = min(top_k, thw)
    mask = np.zeros((hw, thw))
    if keep < thw:
        idx = np.argpartition(-logits, keep - 1, axis=1)[:, keep:]
        np.put_along_axis(mask, idx, NEG_INF, axis=1)
    return masked_softmax_rows(logits, mask)


def readout(
    params: ParamRegistry,
    a_pix: np.ndarray,
    v: np.ndarray,
    h: np.ndarray,
    hw_shape: tuple[int, int],
) -> np.ndarray:
    """R_0 = fuse(A_pix v + h): two ECA residual conv blocks, rows [HW, C]."""
    height, width = hw_shape
    hw, c = a_pix.shape[0], v.shape[1]
    if v.shape[0] != a_pix.shape[1]:
        raise DimensionError(f"affinity columns {a_pix.shape[1]} != value rows {v.shape[0]}")
    if h.shape != (c, height, width):
        raise DimensionError(f"hidden state {h.shape} != ({c},{height},{width})")
    mem = a_pix @ v  # [HW, C]
    x = mem.T.reshape(c, height, width) + h
    x = residual_conv_block(params, "pixel_memory.fuse.block0", x, channel_attention=True)
    x = residual_conv_block(params, "pixel_memory.fuse.block1", x, channel_attention=True)
    return x.reshape(c, hw).T


@dataclass
class MemoryFrame:
    frame_index: int
    k: np.ndarray  # [HW, Ck]
    s: np.ndarray  # [HW]
    values: dict[int, np.ndarray]  # object id -> [HW, C]
    pinned: bool = False


@dataclass
class PixelMemoryBank:
    t_max: int
    frames: list[MemoryFrame] = field(default_factory=list)
    hidden: dict[int, np.ndarray] = field(default_factory=dict)  # object id -> [C, H, W]

    def contents(self) -> list[tuple[int, bool]]:
        return [(f.frame_index, f.pinned) for f in self.frames]

    def object_ids(self) -> list[int]:
        return sorted(self.hidden)


def insert(bank: PixelMemoryBank, frame: MemoryFrame, pinned: bool = False) -> PixelMemoryBank:
    """Append a frame; the first ever insert is always pinned.

    At capacity the oldest non-pinned frame is evicted first.  If every
    resident frame is pinned nothing is evictable and the bank may
    transiently exceed t_max by the pinned count.
    """
    if bank.frames:
        ref = bank.frames[0]
        if frame.k.shape != ref.k.shape:
            raise DimensionError(f"frame key shape {frame.k.shape} != bank {ref.k.shape}")
    frame.pinned = pinned or not bank.frames
    if len(bank.frames) >= bank.t_max:
        for i, old in enumerate(bank.frames):
            if not old.pinned:
                del bank.frames[i]
                break
    bank.frames.append(frame)
    return bank


def gather(bank: PixelMemoryBank, object_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate (k, s, v) over frames along the THW axis for one object.

    Frames that predate the object's registration contribute zero values,
    keeping lanes aligned with the shared keys.
    """
    if not bank.frames:
        raise InputError("pixel memory bank is empty")
    ks = np.concatenate([f.k for f in bank.frames], axis=0)
    ss = np.concatenate([f.s for f in bank.frames], axis=0)
    hw = bank.frames[0].k.shape[0]
    vs = []
    c = None
    for f in bank.frames:
        if object_id in f.values:
            c = f.values[object_id].shape[1]
            break
    if c is None:
        raise InputError(f"object {object_id} has no values in the bank")
    for f in bank.frames:
        vs.append(f.values.get(object_id, np.zeros((hw, c), dtype=np.float32)))
    return ks, ss, np.concatenate(vs, axis=0)


def sensory_update(
    params: ParamRegistry,
    h: np.ndarray,
    feats: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> np.ndarray:
    """Hidden-state step from decoder features at strides 16, 8 and 4.

    Each level is area-downsampled to stride 16, projected to C by a 1x1
    conv and summed to form the GRU input.
    """
    f16, f8, f4 = feats
    x = conv2d(f16, params["pixel_memory.sensory.proj16.weight"], params["pixel_memory.sensory.proj16.bias"])
    x = x + conv2d(
        area_downsample(f8, 2),
        params["pixel_memory.sensory.proj8.weight"],
        params["pixel_memory.sensory.proj8.bias"],
    )
    x = x + conv2d(
        area_downsample(f4, 4),
        params["pixel_memory.sensory.proj4.weight"],
        params["pixel_memory.sensory.proj4.bias"],
    )
    return conv_gru_update(params, "pixel_memory.sensory.gru", h, x)


def deep_update(params: ParamRegistry, h: np.ndarray, mask_feat: np.ndarray) -> np.ndarray:
    """Hidden-state refresh from the mask encoder's stride-16 feature."""
    return conv_gru_update(params, "pixel_memory.deep.gru", h, mask_feat)


def register_pixel_memory_params(reg: ParamRegistry, c: int, decoder_dim: int) -> None:
    for block in ("block0", "block1"):
        reg.add_trunc_normal(f"pixel_memory.fuse.{block}.conv1.weight", (c, c, 3, 3))
        reg.add_zeros(f"pixel_memory.fuse.{block}.conv1.bias", (c,))
        reg.add_trunc_normal(f"pixel_memory.fuse.{block}.conv2.weight", (c, c, 3, 3))
        reg.add_zeros(f"pixel_memory.fuse.{block}.conv2.bias", (c,))
        reg.add_trunc_normal(f"pixel_memory.fuse.{block}.eca.weight", (3,))
        reg.add_zeros(f"pixel_memory.fuse.{block}.eca.bias", (1,))
    for level, dim in (("proj16", decoder_dim), ("proj8", decoder_dim), ("proj4", decoder_dim)):
        reg.add_trunc_normal(f"pixel_memory.sensory.{level}.weight", (c, dim, 1, 1))
        reg.add_zeros(f"pixel_memory.sensory.{level}.bias", (c,))
    for gru in ("sensory", "deep"):
        for gate in ("update", "reset", "cand"):
            reg.add_trunc_normal(f"pixel_memory.{gru}.gru.{gate}.weight", (c, 2 * c, 3, 3))
            reg.add_zeros(f"pixel_memory.{gru}.gru.{gate}.bias", (c,))
