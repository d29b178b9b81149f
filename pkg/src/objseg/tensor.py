"""Dense tensor kernels: matmul, masked softmax, 2D convolution, bilinear resize.

Tensors are plain C-contiguous ``numpy.ndarray``s, float32 by default and
float64 in test oracles.  All kernels are pure functions, deterministic for
fixed inputs on one machine, and preserve the input dtype.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

NEG_INF = float("-inf")


def require_finite(name: str, x: np.ndarray) -> np.ndarray:
    """Raise if ``x`` contains NaN/Inf.  Used at public module boundaries."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product of a [m,k] by b [k,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def masked_softmax_rows(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax under an additive {0, -inf} mask.

    Masked entries are exactly 0 in the output.  A fully-masked row saturates
    to all zeros instead of raising: the caller's residual path then carries
    the input through unchanged.
    """
    if logits.shape != mask.shape:
        raise DimensionError(f"logits {logits.shape} vs mask {mask.shape}")
    finite_mask = mask == 0.0
    if not np.all(finite_mask | np.isneginf(mask)):
        raise ValueError("mask entries must be exactly 0 or -inf")
    allowed = finite_mask
    any_allowed = allowed.any(axis=-1, keepdims=True)
    # Row max over allowed entries only; placeholder 0 for saturated rows.
    shifted = np.where(allowed, logits, NEG_INF)
    row_max = np.max(logits, axis=-1, keepdims=True, initial=NEG_INF, where=allowed)
    row_max = np.where(any_allowed, row_max, 0.0)
    e = np.exp((shifted - row_max).astype(np.float64))
    denom = e.sum(axis=-1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    return out.astype(logits.dtype, copy=False)


def conv2d(
    x: np.ndarray,
    w: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    pad: int | None = None,
) -> np.ndarray:
    """2D convolution of x [Cin,H,W] with w [Cout,Cin,kh,kw].

    ``pad=None`` means same-padding ((k-1)//2 per side); kernels must be odd.
    Output dims follow floor((H + 2p - kh)/stride) + 1.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects x [C,H,W], w [O,C,kh,kw]; got {x.shape}, {w.shape}")
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.shape[0] != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape[0]}, weight {cin}")
    ph = (kh - 1) // 2 if pad is None else pad
    pw = (kw - 1) // 2 if pad is None else pad
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [Cin, H', W', kh, kw]
    out = np.tensordot(w, windows, axes=([1, 2, 3], [0, 3, 4]))
    out = np.ascontiguousarray(out, dtype=x.dtype)
    if bias is not None:
        out += bias[:, None, None].astype(x.dtype, copy=False)
    return out


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of x [C,H,W] to [C,out_h,out_w], align_corners=false.

    Sample points sit at pixel centers: src = (dst + 0.5) * (in/out) - 0.5,
    clamped at the borders.  Constant inputs map to the same constant.
    """
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resize expects [C,H,W], got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"target extents must be >= 1, got {out_h}x{out_w}")
    _, h, w = x.shape

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src)
        frac = src - lo
        i0 = np.clip(lo, 0, n_in - 1).astype(np.intp)
        i1 = np.clip(lo + 1, 0, n_in - 1).astype(np.intp)
        return i0, i1, frac

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = x[:, y0][:, :, x0] * (1 - fx) + x[:, y0][:, :, x1] * fx
    bot = x[:, y1][:, :, x0] * (1 - fx) + x[:, y1][:, :, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out.astype(x.dtype, copy=False)


def area_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool x [C,H,W] by an integer factor along both spatial axes."""
    c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"extents {h}x{w} not divisible by factor {factor}")
    return x.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4)).astype(x.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x).astype(x.dtype, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)
