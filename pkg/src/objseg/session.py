"""Streaming inference driver: one session tracks one video.

A session owns the parameter registry, the pixel-memory bank (shared keys,
per-object value and hidden lanes) and one object memory per object.  Frames
are processed strictly in order; every r-th frame is re-encoded with its own
prediction and inserted into both memories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import objmem, pixmem
from .blocks import sinusoidal_pe_2d
from .decoder import decode, soft_aggregate
from .encoders import QueryFeatures, encode_mask, encode_query
from .errors import DimensionError, InputError, StateError
from .model import NORM_MEAN, NORM_STD, EngineConfig, build_registry
from .registry import ParamRegistry
from .tensor import bilinear_resize, area_downsample, sigmoid
from .transformer import object_transformer_forward


def working_size(h: int, w: int, max_short_edge: int) -> tuple:
    """Resized dims: shorter edge capped at max_short_edge, both rounded up to x16."""
    short = min(h, w)
    if short < 1:
        raise InputError(f"degenerate frame size {h}x{w}")
    scale = min(max_short_edge, short) / short
    return (int(np.ceil(h * scale / 16.0)) * 16, int(np.ceil(w * scale / 16.0)) * 16)


@dataclass
class SessionState:
    config: EngineConfig
    params: ParamRegistry
    bank: pixmem.PixelMemoryBank
    object_memory: dict = field(default_factory=dict)  # id -> ObjectMemory
    object_ids: list = field(default_factory=list)  # sorted
    frame_index: int = -1
    frame_size: tuple | None = None  # original (H, W)
    work_size: tuple | None = None  # resized (H, W), multiples of 16
    last_debug: dict = field(default_factory=dict)


def create_session(config: EngineConfig, params: ParamRegistry | None = None) -> SessionState:
    config.validate()
    if params is None:
        params = build_registry(config)
    return SessionState(config=config, params=params,
                        bank=pixmem.PixelMemoryBank(t_max=config.t_max))


def _resize_chw(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if x.shape[1:] == (out_h, out_w):
        return x
    return bilinear_resize(x, out_h, out_w)


def _prepare_frame(state: SessionState, image: np.ndarray) -> np.ndarray:
    """Resize an RGB frame [3,H,W] in [0,1] to work size and standardize it."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got shape {image.shape}")
    if image.shape[1:] != state.frame_size:
        raise DimensionError(f"frame size {image.shape[1:]} != session {state.frame_size}")
    work = _resize_chw(image.astype(np.float32, copy=False), *state.work_size)
    mean = np.asarray(NORM_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(NORM_STD, dtype=np.float32).reshape(3, 1, 1)
    return (work - mean) / std


def _labels_from_dist(dist: np.ndarray, object_ids: list) -> np.ndarray:
    """Argmax over [O+1,H,W]; ties go to the lowest channel (background first)."""
    lut = np.array([0] + list(object_ids), dtype=np.int32)
    return lut[np.argmax(dist, axis=0)]


def _resize_label_map(mask: np.ndarray, object_ids: list, out_hw: tuple) -> np.ndarray:
    """Resize a label map by resizing its one-hot planes, then re-argmaxing."""
    if mask.shape == out_hw:
        return mask.astype(np.int32, copy=False)
    planes = np.stack([(mask == 0)] + [(mask == o) for o in object_ids]).astype(np.float32)
    return _labels_from_dist(_resize_chw(planes, *out_hw), object_ids)


def _validate_mask(state: SessionState, mask: np.ndarray) -> list:
    if mask.shape != state.frame_size:
        raise InputError(f"mask shape {mask.shape} != frame size {state.frame_size}")
    if not np.issubdtype(mask.dtype, np.integer):
        if not np.all(mask == np.round(mask)):
            raise InputError("label map must hold integers")
        mask = mask.astype(np.int64)
    if mask.min() < 0:
        raise InputError("labels must be non-negative")
    return sorted(int(v) for v in np.unique(mask) if v != 0)


def _memorize(state: SessionState, work: np.ndarray, feats: QueryFeatures,
              work_labels: np.ndarray, frame_index: int, pinned: bool) -> None:
    """Encode (frame, labels) into both memories for every object lane."""
    cfg = state.config
    h16, w16 = feats.hw_shape
    r_sin = sinusoidal_pe_2d(h16, w16, cfg.c)
    values = {}
    for obj in state.object_ids:
        target = (work_labels == obj).astype(np.float32)
        others = ((work_labels != obj) & (work_labels != 0)).astype(np.float32)
        value, feature = encode_mask(state.params, work, target, others, feats.f16)
        values[obj] = value
        pooled_mask = area_downsample(target[None], 16)[0].reshape(-1)
        weights = objmem.compute_pooling_masks(state.params, feature, pooled_mask, r_sin, cfg.n_queries)
        objmem.update(state.object_memory[obj], objmem.compute_object_feature(state.params, feature), weights)
        feature_map = np.ascontiguousarray(feature.T).reshape(cfg.c, h16, w16)
        state.bank.hidden[obj] = pixmem.deep_update(state.params, state.bank.hidden[obj], feature_map)
    frame = pixmem.MemoryFrame(frame_index=frame_index, k=feats.key, s=feats.shrinkage, values=values)
    pixmem.insert(state.bank, frame, pinned=pinned)


def add_reference(state: SessionState, image: np.ndarray, mask: np.ndarray,
                  permanent: bool = False, frame_index: int | None = None) -> SessionState:
    """Register a user-given (frame, mask) pair as a memory reference.

    The first call fixes the session resolution and pins its frame forever;
    labels unseen so far register new object lanes.  A brand-new lane's
    hidden state starts at zero and receives its first content from the deep
    update that accompanies this memorization.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected [3,H,W] image, got shape {image.shape}")
    if state.frame_size is None:
        state.frame_size = image.shape[1:]
        state.work_size = working_size(*state.frame_size, state.config.max_short_edge)
    labels = _validate_mask(state, mask)
    if not labels:
        raise InputError("reference mask labels no objects")
    h16, w16 = state.work_size[0] // 16, state.work_size[1] // 16
    for obj in labels:
        if obj not in state.object_memory:
            state.object_memory[obj] = objmem.create_object_memory(state.config.n_queries, state.config.c)
            state.bank.hidden[obj] = np.zeros((state.config.c, h16, w16), dtype=np.float32)
    state.object_ids = sorted(state.object_memory)
    if frame_index is None:
        frame_index = 0 if not state.bank.frames else state.frame_index + 1
    state.frame_index = frame_index
    work = _prepare_frame(state, image)
    feats = encode_query(state.params, work)
    work_labels = _resize_label_map(np.asarray(mask), state.object_ids, state.work_size)
    _memorize(state, work, feats, work_labels, frame_index, pinned=permanent)
    return state


def step(state: SessionState, image: np.ndarray) -> np.ndarray:
    """Segment the next frame; returns a label map at the original resolution."""
    if state.frame_size is None or not state.bank.frames:
        raise StateError("session has no reference frame yet")
    cfg = state.config
    state.frame_index += 1
    work = _prepare_frame(state, image)
    feats = encode_query(state.params, work)
    h16, w16 = feats.hw_shape

    keys, shrink, _ = pixmem.gather(state.bank, state.object_ids[0])
    logits = pixmem.similarity(feats.key, feats.selection, keys, shrink)
    a_pix = pixmem.affinity(logits, cfg.top_k)

    probs = []
    decoder_feats = {}
    attention = {}
    for obj in state.object_ids:
        _, _, values = pixmem.gather(state.bank, obj)
        r_0 = pixmem.readout(state.params, a_pix, values, state.bank.hidden[obj], (h16, w16))
        summary = objmem.read(state.object_memory[obj])
        result = object_transformer_forward(state.params, r_0, summary, (h16, w16),
                                            cfg.n_blocks, cfg.n_heads)
        r_map = np.ascontiguousarray(result.r_out.T).reshape(cfg.c, h16, w16)
        dec = decode(state.params, r_map, feats.f8, feats.f4, state.work_size)
        probs.append(sigmoid(dec.logits))
        decoder_feats[obj] = (dec.d16, dec.d8, dec.d4)
        if result.blocks:
            attention[obj] = np.stack([b.attn for b in result.blocks])
        else:
            attention[obj] = np.zeros((0, cfg.n_queries, h16 * w16), dtype=np.float32)

    dist = soft_aggregate(np.stack(probs))
    full = _resize_chw(dist, *state.frame_size)
    labels = _labels_from_dist(full, state.object_ids)

    for obj in state.object_ids:
        state.bank.hidden[obj] = pixmem.sensory_update(state.params, state.bank.hidden[obj],
                                                       decoder_feats[obj])
    if state.frame_index % cfg.mem_interval == 0:
        work_labels = _labels_from_dist(dist, state.object_ids)
        _memorize(state, work, feats, work_labels, state.frame_index, pinned=False)

    state.last_debug = {"probabilities": full, "attention": attention,
                        "frame_index": state.frame_index}
    return labels
