"""Reusable neural layers on top of the tensor kernels.

All forwards are pure functions of (registry, inputs); weights are looked up
by dotted name.  Linear weights are stored as [dout, din] so y = x @ W.T + b.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError
from .registry import ParamRegistry
from .tensor import NEG_INF, conv2d, masked_softmax_rows, relu, sigmoid

LN_EPS = 1e-5


def linear(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    w = params[f"{name}.weight"]
    b = params[f"{name}.bias"]
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"{name}: input dim {x.shape[-1]} != weight in-dim {w.shape[1]}")
    return x @ w.T + b


def layer_norm(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    """Normalize over the channel (last) dim with learned scale/shift."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    xn = (x - mean) / np.sqrt(var + LN_EPS)
    return xn * params[f"{name}.weight"] + params[f"{name}.bias"]


def mlp_2layer(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    """fc1 -> ReLU -> fc2; hidden size is fixed by the registered weights."""
    return linear(params, f"{name}.fc2", relu(linear(params, f"{name}.fc1", x)))


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, n_heads, c // n_heads).transpose(1, 0, 2)  # [h, n, d]


def multi_head_attention(
    params: ParamRegistry,
    name: str,
    q_in: np.ndarray,
    k_in: np.ndarray,
    v_in: np.ndarray,
    n_heads: int,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention without the residual.

    ``mask`` is an additive {0,-inf} array of shape [nq, nk], shared across
    heads.  A query row with no allowed key returns the zero vector (the
    output projection bias is suppressed for saturated rows so that a
    caller's residual is exactly the identity there).
    """
    nq, c = q_in.shape
    nk = k_in.shape[0]
    if c % n_heads:
        raise ConfigError(f"{name}: n_heads {n_heads} does not divide dim {c}")
    if k_in.shape != (nk, c) or v_in.shape != (nk, c):
        raise DimensionError(f"{name}: k/v shapes {k_in.shape}/{v_in.shape} inconsistent with dim {c}")
    if mask is not None and mask.shape != (nq, nk):
        raise DimensionError(f"{name}: mask shape {mask.shape} != ({nq},{nk})")
    d = c // n_heads
    q = _split_heads(linear(params, f"{name}.q_proj", q_in), n_heads)
    k = _split_heads(linear(params, f"{name}.k_proj", k_in), n_heads)
    v = _split_heads(linear(params, f"{name}.v_proj", v_in), n_heads)
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(d)  # [h, nq, nk]
    if mask is None:
        mask = np.zeros((nq, nk), dtype=logits.dtype)
    attn = masked_softmax_rows(logits, np.broadcast_to(mask, logits.shape))
    ctx = attn @ v  # [h, nq, d]
    merged = ctx.transpose(1, 0, 2).reshape(nq, c)
    out = linear(params, f"{name}.out_proj", merged)
    saturated = ~(mask == 0).any(axis=1)
    if saturated.any():
        out = out.copy()
        out[saturated] = 0.0
    if return_weights:
        return out, attn
    return out


@lru_cache(maxsize=32)
def _sinusoidal_pe_2d_cached(h: int, w: int, c: int) -> np.ndarray:
    quarter = c // 4
    freqs = 10000.0 ** (-np.arange(quarter, dtype=np.float64) / quarter)

    def axis_embed(coords: np.ndarray) -> np.ndarray:
        ang = 2.0 * np.pi * coords[:, None] * freqs[None, :]
        out = np.empty((coords.size, 2 * quarter), dtype=np.float64)
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    ys = axis_embed(np.arange(h, dtype=np.float64) / h)  # [H, C/2]
    xs = axis_embed(np.arange(w, dtype=np.float64) / w)  # [W, C/2]
    pe = np.concatenate(
        [
            np.repeat(ys, w, axis=0),
            np.tile(xs, (h, 1)),
        ],
        axis=1,
    ).astype(np.float32)
    pe.flags.writeable = False
    return pe


def sinusoidal_pe_2d(h: int, w: int, c: int) -> np.ndarray:
    """Fixed 2D sinusoidal embedding over normalized coordinates, [HW, C].

    Row-major over (y, x); coordinate i maps to i/extent so the embedding is
    resolution-invariant at matching normalized positions.  First C/2
    channels encode y, last C/2 encode x, sin/cos interleaved per frequency.
    """
    if c % 4:
        raise ConfigError(f"embedding dim must be divisible by 4, got {c}")
    if h < 1 or w < 1:
        raise DimensionError(f"invalid grid {h}x{w}")
    return _sinusoidal_pe_2d_cached(h, w, c)


def eca_channel_attention(params: ParamRegistry, name: str, x: np.ndarray) -> np.ndarray:
    """Efficient channel attention: gate channels by a 1D conv over the
    global-average channel descriptor."""
    if x.ndim != 3:
        raise DimensionError(f"{name}: expected [C,H,W], got {x.shape}")
    kernel = params[f"{name}.weight"]
    bias = params[f"{name}.bias"]
    desc = x.mean(axis=(1, 2))  # [C]
    k = kernel.shape[0]
    padded = np.pad(desc, (k // 2, k // 2))
    windows = np.lib.stride_tricks.sliding_window_view(padded, k)
    gate = sigmoid(windows @ kernel + bias[0])
    return x * gate[:, None, None]


def conv_gru_update(params: ParamRegistry, name: str, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Convolutional GRU step on [C,H,W] maps.

    z = sig(conv_z[h;x]); r = sig(conv_r[h;x]); cand = tanh(conv_c[r*h;x]);
    h' = (1-z)*h + z*cand.  Gate convs are 3x3 same-pad.
    """
    if h.shape != x.shape:
        raise DimensionError(f"{name}: hidden {h.shape} != input {x.shape}")
    hx = np.concatenate([h, x], axis=0)
    z = sigmoid(conv2d(hx, params[f"{name}.update.weight"], params[f"{name}.update.bias"]))
    r = sigmoid(conv2d(hx, params[f"{name}.reset.weight"], params[f"{name}.reset.bias"]))
    rhx = np.concatenate([r * h, x], axis=0)
    cand = np.tanh(conv2d(rhx, params[f"{name}.cand.weight"], params[f"{name}.cand.bias"]))
    return (1.0 - z) * h + z * cand


def residual_conv_block(params: ParamRegistry, name: str, x: np.ndarray, channel_attention: bool = False) -> np.ndarray:
    """x + conv2(relu(conv1(x))), optionally gated by ECA before the add."""
    y = conv2d(x, params[f"{name}.conv1.weight"], params[f"{name}.conv1.bias"])
    y = conv2d(relu(y), params[f"{name}.conv2.weight"], params[f"{name}.conv2.bias"])
    if channel_attention:
        y = eca_channel_attention(params, f"{name}.eca", y)
    return x + y
