"""First-layer filter grids written as plain PGM/PPM images."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError

MID_GRAY = 128
BACKGROUND = 0


def grid_shape(n: int) -> tuple[int, int]:
    """(rows, cols) with ``cols = ceil(sqrt(n))``; 32 filters give 6 x 6."""
    if n < 1:
        raise DimensionError("need at least one filter")
    cols = math.ceil(math.sqrt(n))
    return math.ceil(n / cols), cols


def normalize_filter(f: np.ndarray) -> np.ndarray:
    """Min-max scale one filter to 0..255; a constant filter is mid-gray."""
    f = np.asarray(f, dtype=np.float64)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.full(f.shape, MID_GRAY, dtype=np.uint8)
    return np.rint((f - lo) / (hi - lo) * 255).astype(np.uint8)


def filter_grid(weight: np.ndarray, scale: int = 1, pad: int = 1) -> np.ndarray:
    """Tile conv weights ``[kH, kW, Cin, Cout]`` into one image.

    One input channel yields a gray (H, W) image, three yield RGB (H, W, 3);
    any other channel count is averaged down to gray. Cells are separated by
    ``pad`` background pixels and each pixel is repeated ``scale`` times.
    """
    weight = np.asarray(weight)
    if weight.ndim != 4:
        raise DimensionError(f"expected conv weights [kH, kW, Cin, Cout], got shape {weight.shape}")
    kh, kw, cin, n = weight.shape
    if cin not in (1, 3):
        weight = weight.mean(axis=2, keepdims=True)
        cin = 1
    rows, cols = grid_shape(n)
    ch, cw = kh * scale, kw * scale
    out = np.full((rows * ch + (rows + 1) * pad, cols * cw + (cols + 1) * pad, cin), BACKGROUND, dtype=np.uint8)
    for k in range(n):
        r, c = divmod(k, cols)
        cell = normalize_filter(weight[..., k]).repeat(scale, 0).repeat(scale, 1)
        y, x = pad + r * (ch + pad), pad + c * (cw + pad)
        out[y : y + ch, x : x + cw] = cell
    return out[..., 0] if cin == 1 else out


def write_pnm(path: str | Path, image: np.ndarray) -> Path:
    """Plain (ASCII) PGM for 2-D arrays, PPM for (H, W, 3)."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        magic, h, w = "P2", *image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        magic, (h, w) = "P3", image.shape[:2]
    else:
        raise DimensionError(f"cannot write image of shape {image.shape}")
    values = image.reshape(h, -1)
    lines = [magic, f"{w} {h}", "255"] + [" ".join(map(str, row)) for row in values]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pnm(path: str | Path) -> np.ndarray:
    """Parse a plain PGM/PPM (``#`` comments allowed)."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] not in ("P2", "P3"):
        raise FormatError(f"{path}: not a plain PGM/PPM file")
    w, h, maxval = (int(t) for t in tokens[1:4])
    depth = 3 if tokens[0] == "P3" else 1
    data = np.array(tokens[4:], dtype=np.int64)
    if data.size != w * h * depth or maxval != 255:
        raise FormatError(f"{path}: expected {w * h * depth} samples at maxval 255, found {data.size} at {maxval}")
    data = data.astype(np.uint8)
    return data.reshape(h, w) if depth == 1 else data.reshape(h, w, 3)


def first_conv_weight(params: dict[str, np.ndarray]) -> np.ndarray:
    names = sorted(k for k in params if k.endswith(".conv.weight"))
    if not names:
        raise FormatError("checkpoint holds no convolution weights")
    return np.asarray(params[names[0]])
