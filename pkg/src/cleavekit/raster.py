"""Polygon rasterization on the square image grid.

Pixel (row=y, col=x) covers [x, x+1) x [y, y+1). Each pixel is sampled on a
``supersample`` x ``supersample`` sub-grid so that sub-pixel shifts of a
contour change its raster.
"""
from __future__ import annotations

import numpy as np

DEFAULT_IMAGE_SIZE = 500
DEFAULT_SUPERSAMPLE = 16


def bbox(contour: np.ndarray, image_size: int = DEFAULT_IMAGE_SIZE) -> tuple[int, int, int, int]:
    """Integer pixel window (x0, y0, x1, y1), end-exclusive, clipped to the image."""
    lo = np.floor(contour.min(axis=0)).astype(int)
    hi = np.ceil(contour.max(axis=0)).astype(int) + 1
    x0, y0 = np.clip(lo, 0, image_size)
    x1, y1 = np.clip(hi, 0, image_size)
    return int(x0), int(y0), int(x1), int(y1)


def union_window(boxes) -> tuple[int, int, int, int]:
    boxes = list(boxes)
    return (
        min(b[0] for b in boxes),
        min(b[1] for b in boxes),
        max(b[2] for b in boxes),
        max(b[3] for b in boxes),
    )


def fill_polygon(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill; grid point (i, j) sits at row i, column j.

    Edges are half-open in the row direction, so a vertex shared by two
    edges is counted once.
    """
    h, w = shape
    y0, x0 = rows, cols
    y1, x1 = np.roll(rows, -1), np.roll(cols, -1)
    i = np.arange(h, dtype=float)[:, None]
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    hits = (i >= lo) & (i < hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (i - y0) * (x1 - x0) / (y1 - y0)
    r, e = np.nonzero(hits)
    # toggle at the first column at or right of each crossing
    k = np.clip(np.ceil(xc[r, e]), 0, w).astype(int)
    toggles = np.zeros((h, w + 1), dtype=np.int32)
    np.add.at(toggles, (r, k), 1)
    return (np.cumsum(toggles[:, :w], axis=1) & 1).astype(bool)


def subsample_mask(contour: np.ndarray, window, supersample: int = DEFAULT_SUPERSAMPLE) -> np.ndarray:
    """Boolean sub-pixel mask of the filled polygon over ``window``."""
    x0, y0, x1, y1 = window
    s = supersample
    shape = ((y1 - y0) * s, (x1 - x0) * s)
    if shape[0] <= 0 or shape[1] <= 0:
        return np.zeros(shape, dtype=bool)
    # sub-pixel (i, j) is sampled at its centre ((j + .5)/s + x0, (i + .5)/s + y0)
    cols = (contour[:, 0] - x0) * s - 0.5
    rows = (contour[:, 1] - y0) * s - 0.5
    return fill_polygon(rows, cols, shape)


def coverage(contour: np.ndarray, window, supersample: int = DEFAULT_SUPERSAMPLE) -> np.ndarray:
    """Fractional pixel coverage in [0, 1] over ``window`` at image resolution."""
    m = subsample_mask(contour, window, supersample)
    s = supersample
    h, w = m.shape[0] // s, m.shape[1] // s
    return m.reshape(h, s, w, s).mean(axis=(1, 3))
