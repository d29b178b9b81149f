"""Frame and mask image files.

Masks travel as indexed-palette PNGs (or ASCII PGM); pixel values are the
object labels themselves and the palette is a fixed deterministic color
table, so files written here render identically everywhere.
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image

from .errors import FormatError, InputError


def label_palette(n: int = 256) -> np.ndarray:
    """Deterministic color table [n,3] u8; label 0 is black.

    Colors are generated by distributing the label's bits over the channel
    bit-planes (the mapping commonly used for segmentation label images), so
    the same label always gets the same color.
    """
    pal = np.zeros((n, 3), dtype=np.uint8)
    for label in range(n):
        value = label
        r = g = b = 0
        for shift in range(8):
            r |= ((value >> 0) & 1) << (7 - shift)
            g |= ((value >> 1) & 1) << (7 - shift)
            b |= ((value >> 2) & 1) << (7 - shift)
            value >>= 3
        pal[label] = (r, g, b)
    return pal


def mask_png_bytes(labels: np.ndarray) -> bytes:
    """Encode a 2-D integer label map as indexed-palette PNG bytes."""
    if labels.ndim != 2:
        raise InputError(f"label map must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"label map must be integer, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() > 255:
        raise InputError("labels must fit in [0, 255]")
    img = Image.fromarray(labels.astype(np.uint8), mode="P")
    img.putpalette(label_palette().reshape(-1).tolist())
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> np.ndarray:
    """Decode indexed or grayscale PNG bytes into an int32 label map."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise FormatError(f"could not decode mask image: {exc}") from None
    if img.mode not in ("P", "L"):
        raise FormatError(f"mask must be indexed or grayscale, got mode {img.mode}")
    return np.asarray(img, dtype=np.int32)


def frame_from_bytes(data: bytes) -> np.ndarray:
    """Decode image bytes into a float32 RGB [3,H,W] array in [0,1]."""
    try:
        img = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise FormatError(f"could not decode frame image: {exc}") from None
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_mask(labels: np.ndarray, path: str) -> None:
    if path.lower().endswith(".pgm"):
        if labels.ndim != 2:
            raise InputError(f"label map must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InputError(f"label map must be integer, got dtype {labels.dtype}")
        if labels.min() < 0 or labels.max() > 255:
            raise InputError("labels must fit in [0, 255]")
        arr = labels.astype(np.uint8)
        lines = [f"P2", f"{arr.shape[1]} {arr.shape[0]}", "255"]
        lines += [" ".join(str(v) for v in row) for row in arr]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(mask_png_bytes(labels))


def read_mask(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise InputError(f"mask file not found: {path}")
    if path.lower().endswith(".pgm"):
        with open(path) as fh:
            tokens = []
            for line in fh:
                hash_pos = line.find("#")
                if hash_pos >= 0:
                    line = line[:hash_pos]
                tokens.extend(line.split())
        if not tokens or tokens[0] != "P2":
            raise FormatError(f"{path}: expected ASCII PGM (P2)")
        try:
            w, h, maxval = (int(t) for t in tokens[1:4])
            values = np.array([int(t) for t in tokens[4:]], dtype=np.int32)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PGM: {exc}") from None
        if values.size != w * h:
            raise FormatError(f"{path}: PGM payload has {values.size} values, expected {w * h}")
        if maxval < 1 or values.max(initial=0) > maxval or values.min(initial=0) < 0:
            raise FormatError(f"{path}: PGM values exceed declared range")
        return values.reshape(h, w)
    img = Image.open(path)
    if img.mode not in ("P", "L"):
        raise FormatError(f"{path}: mask must be indexed or grayscale, got mode {img.mode}")
    return np.asarray(img, dtype=np.int32)


def load_frame(path: str) -> np.ndarray:
    """Read an image file as float32 RGB [3,H,W] in [0,1]."""
    if not os.path.exists(path):
        raise InputError(f"frame file not found: {path}")
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_frame(image: np.ndarray, path: str) -> None:
    """Write a float [3,H,W] image in [0,1] as an 8-bit RGB file."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise InputError(f"expected [3,H,W] image, got shape {image.shape}")
    arr = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
