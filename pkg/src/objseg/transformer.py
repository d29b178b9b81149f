"""Object transformer: iterative readout refinement with object queries.

L blocks operate on pixel features R [HW, C] and object queries X [N, C].
Per block: foreground/background masked cross-attention (queries read
pixels), query self-attention, query FFN, reverse cross-attention (pixels
read queries), pixel FFN.  The query path is pre-norm; the pixel FFN has no
layer norm.  Positional embeddings go to queries and keys only, never
values.  The masked cross-attention additionally ships a hand-written
backward pass so its gradients can be verified by finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    eca_channel_attention,
    layer_norm,
    linear,
    mlp_2layer,
    multi_head_attention,
    sinusoidal_pe_2d,
)
from .errors import ConfigError, DimensionError, InputError, StateError
from .registry import ParamRegistry
from .tensor import NEG_INF, conv2d, masked_softmax_rows, relu, sigmoid


def build_attention_mask(m: np.ndarray, n_queries: int) -> np.ndarray:
    """Additive {0, -inf} mask [N, HW] from mask probabilities m [HW].

    The first N/2 query rows may attend only where m >= 0.5 (foreground);
    the last N/2 rows only where m < 0.5.  0.5 itself counts as foreground.
    """
    if n_queries % 2 or n_queries < 2:
        raise ConfigError(f"query count must be even and >= 2, got {n_queries}")
    if m.ndim != 1:
        raise DimensionError(f"mask probabilities must be 1D, got {m.shape}")
    if np.any(m < 0) or np.any(m > 1):
        raise InputError("mask probabilities must lie in [0, 1]")
    fg = m >= 0.5
    half = n_queries // 2
    mask = np.full((n_queries, m.shape[0]), NEG_INF)
    mask[:half, fg] = 0.0
    mask[half:, ~fg] = 0.0
    return mask


def predict_aux_mask(params: ParamRegistry, name: str, r_prev: np.ndarray) -> np.ndarray:
    """Per-block mask probabilities [HW]: sigmoid of a 1-channel projection."""
    return sigmoid(linear(params, name, r_prev))[:, 0]


@dataclass
class AttentionCache:
    """Forward intermediates for masked_cross_attention_backward."""

    params: ParamRegistry
    name: str
    n_heads: int
    x: np.ndarray
    r: np.ndarray
    mask: np.ndarray
    q_in: np.ndarray
    k_in: np.ndarray
    q: np.ndarray  # [h, N, d]
    k: np.ndarray  # [h, HW, d]
    v: np.ndarray  # [h, HW, d]
    attn: np.ndarray  # [h, N, HW]
    merged: np.ndarray  # [N, C]
    saturated: np.ndarray  # [N] bool
    residual_is_x: bool


def _heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, n_heads, c // n_heads).transpose(1, 0, 2)


def masked_cross_attention_forward(
    params: ParamRegistry,
    name: str,
    x: np.ndarray,
    r: np.ndarray,
    mask: np.ndarray,
    p_x: np.ndarray,
    p_r: np.ndarray,
    n_heads: int,
    residual: np.ndarray | None = None,
) -> tuple[np.ndarray, AttentionCache]:
    """Masked cross-attention with residual; also returns the backward cache.

    out = out_proj(concat_h softmax(mask + q_h k_h^T / sqrt(d)) v_h) + res
    with q from x + p_x, k from r + p_r, v from r (no positional term).
    ``residual`` defaults to x; a pre-norm caller passes the un-normed
    stream here.  A query row whose mask is all -inf comes back as exactly
    the residual's row.
    """
    n, c = x.shape
    hw = r.shape[0]
    if c % n_heads:
        raise ConfigError(f"{name}: n_heads {n_heads} does not divide dim {c}")
    if r.shape[1] != c or p_x.shape != (n, c) or p_r.shape != (hw, c):
        raise DimensionError(f"{name}: inconsistent shapes x{x.shape} r{r.shape} p_x{p_x.shape} p_r{p_r.shape}")
    if mask.shape != (n, hw):
        raise DimensionError(f"{name}: mask shape {mask.shape} != ({n},{hw})")
    residual_is_x = residual is None
    res = x if residual_is_x else residual
    if res.shape != (n, c):
        raise DimensionError(f"{name}: residual shape {res.shape} != ({n},{c})")
    d = c // n_heads
    q_in = x + p_x
    k_in = r + p_r
    q = _heads(linear(params, f"{name}.q_proj", q_in), n_heads)
    k = _heads(linear(params, f"{name}.k_proj", k_in), n_heads)
    v = _heads(linear(params, f"{name}.v_proj", r), n_heads)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    attn = masked_softmax_rows(logits, np.broadcast_to(mask, logits.shape))
    merged = (attn @ v).transpose(1, 0, 2).reshape(n, c)
    out = linear(params, f"{name}.out_proj", merged)
    saturated = ~(mask == 0).any(axis=1)
    if saturated.any():
        out = out.copy()
        out[saturated] = 0.0
    cache = AttentionCache(
        params, name, n_heads, x, r, mask, q_in, k_in, q, k, v, attn, merged, saturated, residual_is_x
    )
    return out + res, cache


def masked_cross_attention(
    params: ParamRegistry,
    name: str,
    x: np.ndarray,
    r: np.ndarray,
    mask: np.ndarray,
    p_x: np.ndarray,
    p_r: np.ndarray,
    n_heads: int,
) -> np.ndarray:
    out, _ = masked_cross_attention_forward(params, name, x, r, mask, p_x, p_r, n_heads)
    return out


def masked_cross_attention_backward(
    params: ParamRegistry,
    cache: AttentionCache,
    upstream: np.ndarray,
) -> dict[str, np.ndarray]:
    """Analytic gradients of masked_cross_attention_forward.

    Returns a dict keyed by "x", "r" and every projection parameter name.
    ``params`` must be the same registry the forward ran with; anything else
    means the cache is stale.
    """
    if cache.params is not params:
        raise StateError("attention cache is stale: registry differs from the forward pass")
    name, h = cache.name, cache.n_heads
    n, c = cache.x.shape
    d = c // h
    if upstream.shape != (n, c):
        raise DimensionError(f"upstream shape {upstream.shape} != ({n},{c})")
    w_out = params[f"{name}.out_proj.weight"]
    w_q = params[f"{name}.q_proj.weight"]
    w_k = params[f"{name}.k_proj.weight"]
    w_v = params[f"{name}.v_proj.weight"]

    d_mha = upstream.astype(np.float64).copy()
    d_mha[cache.saturated] = 0.0  # forward zeroed these rows after out_proj
    grads: dict[str, np.ndarray] = {}
    grads[f"{name}.out_proj.weight"] = d_mha.T @ cache.merged
    grads[f"{name}.out_proj.bias"] = d_mha.sum(axis=0)
    d_merged = d_mha @ w_out
    d_ctx = _heads(d_merged, h)  # [h, N, d]

    d_attn = d_ctx @ cache.v.transpose(0, 2, 1)  # [h, N, HW]
    d_v = cache.attn.transpose(0, 2, 1) @ d_ctx  # [h, HW, d]
    # softmax jacobian, rows with all-zero attention stay zero
    a = cache.attn.astype(np.float64)
    d_logits = a * (d_attn - (d_attn * a).sum(axis=-1, keepdims=True))
    d_q = d_logits @ cache.k / np.sqrt(d)  # [h, N, d]
    d_k = d_logits.transpose(0, 2, 1) @ cache.q / np.sqrt(d)  # [h, HW, d]

    def merge(parts: np.ndarray) -> np.ndarray:
        return parts.transpose(1, 0, 2).reshape(parts.shape[1], c)

    d_q, d_k, d_v = merge(d_q), merge(d_k), merge(d_v)
    grads[f"{name}.q_proj.weight"] = d_q.T @ cache.q_in
    grads[f"{name}.q_proj.bias"] = d_q.sum(axis=0)
    grads[f"{name}.k_proj.weight"] = d_k.T @ cache.k_in
    grads[f"{name}.k_proj.bias"] = d_k.sum(axis=0)
    grads[f"{name}.v_proj.weight"] = d_v.T @ cache.r
    grads[f"{name}.v_proj.bias"] = d_v.sum(axis=0)
    grads["x"] = d_q @ w_q
    if cache.residual_is_x:
        grads["x"] = grads["x"] + upstream.astype(np.float64)
    else:
        grads["residual"] = upstream.astype(np.float64)
    grads["r"] = d_k @ w_k + d_v @ w_v
    return grads


@dataclass
class BlockOutput:
    x_l: np.ndarray  # [N, C]
    r_l: np.ndarray  # [HW, C]
    m_l: np.ndarray  # [HW] mask probabilities
    attn: np.ndarray  # [N, HW] head-mean cross-attention rows
    attn_heads: np.ndarray  # [h, N, HW]


@dataclass
class TransformerResult:
    r_out: np.ndarray
    x_out: np.ndarray
    aux_masks: list[np.ndarray] = field(default_factory=list)
    blocks: list[BlockOutput] = field(default_factory=list)


def transformer_block(
    params: ParamRegistry,
    name: str,
    x_prev: np.ndarray,
    r_prev: np.ndarray,
    p_x: np.ndarray,
    p_r: np.ndarray,
    hw_shape: tuple[int, int],
    n_heads: int,
) -> BlockOutput:
    """One full block; ``name`` like "object_transformer.block0"."""
    n, c = x_prev.shape
    h, w = hw_shape
    if r_prev.shape[0] != h * w:
        raise DimensionError(f"{name}: pixel rows {r_prev.shape[0]} != {h}x{w}")

    m_l = predict_aux_mask(params, f"{name}.aux_mask", r_prev)
    mask = build_attention_mask(m_l, n)

    x_norm = layer_norm(params, f"{name}.cross_attn.norm", x_prev)
    x, ca_cache = masked_cross_attention_forward(
        params, f"{name}.cross_attn", x_norm, r_prev, mask, p_x, p_r, n_heads, residual=x_prev
    )

    x_norm = layer_norm(params, f"{name}.self_attn.norm", x)
    x = x + multi_head_attention(
        params, f"{name}.self_attn", x_norm + p_x, x_norm + p_x, x_norm, n_heads
    )

    x = x + mlp_2layer(params, f"{name}.query_ffn", layer_norm(params, f"{name}.query_ffn.norm", x))

    r_norm = layer_norm(params, f"{name}.reverse_attn.norm", r_prev)
    r = r_prev + multi_head_attention(
        params, f"{name}.reverse_attn", r_norm + p_r, x + p_x, x, n_heads
    )

    rmap = r.T.reshape(c, h, w)
    y = conv2d(rmap, params[f"{name}.pixel_ffn.conv1.weight"], params[f"{name}.pixel_ffn.conv1.bias"])
    y = conv2d(relu(y), params[f"{name}.pixel_ffn.conv2.weight"], params[f"{name}.pixel_ffn.conv2.bias"])
    y = eca_channel_attention(params, f"{name}.pixel_ffn.eca", y)
    r = r + y.reshape(c, h * w).T

    return BlockOutput(x, r, m_l, ca_cache.attn.mean(axis=0), ca_cache.attn)


def object_transformer_forward(
    params: ParamRegistry,
    r_0: np.ndarray,
    s: np.ndarray,
    hw_shape: tuple[int, int],
    n_blocks: int,
    n_heads: int,
    prefix: str = "object_transformer",
) -> TransformerResult:
    """Run all blocks: R_0, queries X and object summary S -> refined R_L.

    X_0 = X + S; P_X = E_X + obj_embed(S); P_R = (2D sin embedding) +
    pix_embed(R_0), both computed once per call.  n_blocks == 0 returns R_0
    untouched (no transformer at all).
    """
    h, w = hw_shape
    hw, c = r_0.shape
    if hw != h * w:
        raise DimensionError(f"readout rows {hw} != {h}x{w}")
    queries = params[f"{prefix}.queries"]
    if s.shape != queries.shape:
        raise DimensionError(f"object summary {s.shape} != queries {queries.shape}")
    x = queries + s
    if n_blocks == 0:
        return TransformerResult(r_0, x)
    p_x = params[f"{prefix}.query_pos"] + linear(params, f"{prefix}.obj_embed", s)
    p_r = sinusoidal_pe_2d(h, w, c).astype(r_0.dtype) + linear(params, f"{prefix}.pix_embed", r_0)
    r = r_0
    result = TransformerResult(r_0, x)
    for b in range(n_blocks):
        out = transformer_block(params, f"{prefix}.block{b}", x, r, p_x, p_r, hw_shape, n_heads)
        x, r = out.x_l, out.r_l
        result.aux_masks.append(out.m_l)
        result.blocks.append(out)
    result.r_out, result.x_out = r, x
    return result


def register_transformer_params(
    reg: ParamRegistry,
    c: int,
    n_queries: int,
    n_blocks: int,
    prefix: str = "object_transformer",
) -> None:
    """Register every transformer weight under the dotted naming scheme."""
    reg.add_trunc_normal(f"{prefix}.queries", (n_queries, c))
    reg.add_trunc_normal(f"{prefix}.query_pos", (n_queries, c))
    for emb in ("obj_embed", "pix_embed"):
        reg.add_trunc_normal(f"{prefix}.{emb}.weight", (c, c))
        reg.add_zeros(f"{prefix}.{emb}.bias", (c,))
    for b in range(n_blocks):
        base = f"{prefix}.block{b}"
        reg.add_trunc_normal(f"{base}.aux_mask.weight", (1, c))
        reg.add_zeros(f"{base}.aux_mask.bias", (1,))
        for attn in ("cross_attn", "self_attn", "reverse_attn"):
            reg.add_ones(f"{base}.{attn}.norm.weight", (c,))
            reg.add_zeros(f"{base}.{attn}.norm.bias", (c,))
            for proj in ("q_proj", "k_proj", "v_proj", "out_proj"):
                reg.add_trunc_normal(f"{base}.{attn}.{proj}.weight", (c, c))
                reg.add_zeros(f"{base}.{attn}.{proj}.bias", (c,))
        reg.add_ones(f"{base}.query_ffn.norm.weight", (c,))
        reg.add_zeros(f"{base}.query_ffn.norm.bias", (c,))
        reg.add_trunc_normal(f"{base}.query_ffn.fc1.weight", (8 * c, c))
        reg.add_zeros(f"{base}.query_ffn.fc1.bias", (8 * c,))
        reg.add_trunc_normal(f"{base}.query_ffn.fc2.weight", (c, 8 * c))
        reg.add_zeros(f"{base}.query_ffn.fc2.bias", (c,))
        reg.add_trunc_normal(f"{base}.pixel_ffn.conv1.weight", (c, c, 3, 3))
        reg.add_zeros(f"{base}.pixel_ffn.conv1.bias", (c,))
        reg.add_trunc_normal(f"{base}.pixel_ffn.conv2.weight", (c, c, 3, 3))
        reg.add_zeros(f"{base}.pixel_ffn.conv2.bias", (c,))
        reg.add_trunc_normal(f"{base}.pixel_ffn.eca.weight", (3,))
        reg.add_zeros(f"{base}.pixel_ffn.eca.bias", (1,))
