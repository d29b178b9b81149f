"""Object memory: N pooled summary vectors with constant-size streaming state.

Pixels of encoded memory frames are pooled under N learned, position-aware
masks (first half foreground, second half background).  Rather than keeping
every frame, two accumulators (weighted feature sum and weight sum) realize
the same weighted average over all frames seen so far.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import mlp_2layer
from .errors import DimensionError
from .registry import ParamRegistry
from .tensor import sigmoid

READ_EPS = 1e-8


@dataclass
class ObjectMemory:
    sigma_s: np.ndarray  # [N, C] cumulative weighted feature, f64
    sigma_w: np.ndarray  # [N] cumulative weight, f64
    n_updates: int = 0


def create_object_memory(n_queries: int, c: int) -> ObjectMemory:
    return ObjectMemory(np.zeros((n_queries, c)), np.zeros(n_queries))


def compute_object_feature(params: ParamRegistry, f: np.ndarray) -> np.ndarray:
    """U = 2-layer MLP over per-pixel features f [HW, C]."""
    return mlp_2layer(params, "object_memory.obj_feat", f)


def compute_pooling_masks(
    params: ParamRegistry,
    f: np.ndarray,
    m: np.ndarray,
    r_sin: np.ndarray,
    n_queries: int,
) -> np.ndarray:
    """Pooling masks W [N, HW] with foreground/background separation.

    W_q(i) is zero where query half and mask side disagree (m >= 0.5 counts
    as foreground), otherwise sigmoid of the q-th pooling logit of
    f(i) + r_sin(i).  ``m`` must already be at the feature stride.
    """
    hw = f.shape[0]
    if m.shape != (hw,) or r_sin.shape != f.shape:
        raise DimensionError(f"pooling inputs disagree: f {f.shape}, m {m.shape}, r_sin {r_sin.shape}")
    logits = mlp_2layer(params, "object_memory.pool_weight", f + r_sin)  # [HW, N]
    if logits.shape[1] != n_queries:
        raise DimensionError(f"pool head emits {logits.shape[1]} masks, expected {n_queries}")
    w = sigmoid(logits).T.copy()  # [N, HW]
    fg = m >= 0.5
    half = n_queries // 2
    w[:half, ~fg] = 0.0
    w[half:, fg] = 0.0
    return w


def update(mem: ObjectMemory, u: np.ndarray, w: np.ndarray) -> ObjectMemory:
    """Fold one frame's (U, W) into the accumulators, in place.

    Rows whose pooling weights sum to zero are skipped entirely, so an
    occluded query's summary stays bitwise identical.
    """
    n, c = mem.sigma_s.shape
    if u.ndim != 2 or u.shape[1] != c or w.shape != (n, u.shape[0]):
        raise DimensionError(f"update shapes: U {u.shape}, W {w.shape}, memory {mem.sigma_s.shape}")
    w64 = w.astype(np.float64)
    u64 = u.astype(np.float64)
    row_sums = w64.sum(axis=1)
    live = row_sums > 0.0
    if live.any():
        mem.sigma_s[live] += w64[live] @ u64
        mem.sigma_w[live] += row_sums[live]
    mem.n_updates += 1
    return mem


def read(mem: ObjectMemory) -> np.ndarray:
    """Current summary S [N, C], float32; rows never updated read as zero."""
    defined = mem.sigma_w > READ_EPS
    out = np.zeros_like(mem.sigma_s)
    out[defined] = mem.sigma_s[defined] / mem.sigma_w[defined, None]
    return out.astype(np.float32)


def register_object_memory_params(reg: ParamRegistry, c: int, n_queries: int) -> None:
    reg.add_trunc_normal("object_memory.obj_feat.fc1.weight", (c, c))
    reg.add_zeros("object_memory.obj_feat.fc1.bias", (c,))
    reg.add_trunc_normal("object_memory.obj_feat.fc2.weight", (c, c))
    reg.add_zeros("object_memory.obj_feat.fc2.bias", (c,))
    reg.add_trunc_normal("object_memory.pool_weight.fc1.weight", (n_queries, c))
    reg.add_zeros("object_memory.pool_weight.fc1.bias", (n_queries,))
    reg.add_trunc_normal("object_memory.pool_weight.fc2.weight", (n_queries, n_queries))
    reg.add_zeros("object_memory.pool_weight.fc2.bias", (n_queries,))
