"""Grayscale PGM rendering of spectrograms and discriminating maps.

Images are laid out with time left to right and the highest mel bin on the top
row.  Map values go through ``pixel = round(255 * clip(v, 0, 1))``; the input
spectrogram is first mapped affinely from the log clamp range onto [0, 1].
"""

from __future__ import annotations

import os

import numpy as np

from .data import LOG_MAX, LOG_MIN
from .discriminators import Discriminator
from .tensor import Tensor, no_grad


def to_pixels(values: np.ndarray) -> np.ndarray:
    """Affine 0 -> 0, 1 -> 255, clamped, rounded half to even."""
    return np.rint(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a 2-D uint8 array of ``rows x cols``."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError(f"expected a 2-D uint8 image, got {pixels.dtype} {pixels.shape}")
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    cols, rows = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=rows * cols).reshape(rows, cols)


def upsample_coarse(coarse: np.ndarray, t: int, n: int, factor: int = 8) -> np.ndarray:
    """Nearest-neighbour ``factor``-fold upsampling of a coarse map, cropped to ``(t, n)``.

    1-D maps (time only) are broadcast across the ``n`` bins.
    """
    c = np.asarray(coarse)
    if c.ndim == 3:
        up = np.repeat(np.repeat(c[0], factor, axis=0), factor, axis=1)
    else:
        up = np.broadcast_to(np.repeat(c.reshape(-1, 1), factor, axis=0), (c.size * factor, n))
    return np.ascontiguousarray(up[:t, :n])


def fine_as_grid(fine: np.ndarray, t: int, n: int) -> np.ndarray:
    f = np.asarray(fine)
    if f.ndim == 3:
        return f.reshape(t, n)
    return np.ascontiguousarray(np.broadcast_to(f.reshape(t, 1), (t, n)))


def discriminating_maps(disc: Discriminator, spec: np.ndarray) -> dict[str, np.ndarray]:
    """Float ``(T, N)`` grids: ``input``, ``coarse`` (upsampled) and, if present, ``fine``."""
    spec = np.asarray(spec, dtype=np.float64)
    _, t, n = spec.shape
    with no_grad():
        out = disc(Tensor(spec))
    maps = {"input": (spec[0] - LOG_MIN) / (LOG_MAX - LOG_MIN),
            "coarse": upsample_coarse(out.coarse.data, t, n)}
    if out.fine is not None:
        maps["fine"] = fine_as_grid(out.fine.data, t, n)
    return maps


def grid_to_image(grid: np.ndarray) -> np.ndarray:
    """``(T, N)`` values -> ``N x T`` pixels with the top bin first."""
    return to_pixels(np.asarray(grid).T[::-1])


def write_heatmaps(maps: dict[str, np.ndarray], out_dir: str, stem: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name in ("input", "fine", "coarse"):
        if name in maps:
            paths[name] = os.path.join(out_dir, f"{stem}_{name}.pgm")
            write_pgm(paths[name], grid_to_image(maps[name]))
    return paths


def distinct_per_block(grid: np.ndarray, block: int = 8) -> int:
    """Sum over aligned ``block x block`` tiles of the number of distinct values in each tile."""
    g = np.asarray(grid)
    total = 0
    for i in range(0, g.shape[0], block):
        for j in range(0, g.shape[1], block):
            total += np.unique(g[i : i + block, j : j + block]).size
    return total
