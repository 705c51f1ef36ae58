"""Blastomere symmetry scores for cohorts of equal lineage-code length.

SizeS = 100 / (1 + cv) where cv is the coefficient of variation of mask
areas. ContS = 100 * (1 - mean pairwise min(d, 1)) with d the I1 Hu-moment
distance between rasterized masks.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MaskRegion
from .errors import DegenerateCohort, ZeroArea
from .raster import DEFAULT_IMAGE_SIZE, DEFAULT_SUPERSAMPLE, bbox, coverage
from .tracking import Track, render_id

HU_EPS = 1e-30


def size_symmetry(areas: Sequence[float]) -> float:
    a = np.asarray(areas, dtype=float)
    if a.size < 2:
        raise DegenerateCohort("size symmetry needs at least two areas")
    if np.any(a <= 0):
        raise ZeroArea("areas must be positive")
    cv = a.std() / a.mean()
    return 100.0 / (1.0 + cv)


def raster_moments(mask: MaskRegion, image_size: int = DEFAULT_IMAGE_SIZE, supersample: int = DEFAULT_SUPERSAMPLE) -> dict:
    """Raw moments m_pq (p + q <= 3) of the filled mask, pixel centres at +0.5."""
    window = bbox(mask.contour, image_size)
    img = coverage(mask.contour, window, supersample)
    x0, y0 = window[0], window[1]
    ys = np.arange(img.shape[0], dtype=float) + y0 + 0.5
    xs = np.arange(img.shape[1], dtype=float) + x0 + 0.5
    m = {}
    for p in range(4):
        for q in range(4 - p):
            m[p, q] = float((xs[None, :] ** p * ys[:, None] ** q * img).sum())
    return m


def hu_invariants(mask: MaskRegion, image_size: int = DEFAULT_IMAGE_SIZE, supersample: int = DEFAULT_SUPERSAMPLE) -> np.ndarray:
    m = raster_moments(mask, image_size, supersample)
    m00 = m[0, 0]
    if m00 <= 0:
        raise ZeroArea("mask covers no pixels")
    xc, yc = m[1, 0] / m00, m[0, 1] / m00
    # central moments from raw moments
    mu20 = m[2, 0] - xc * m[1, 0]
    mu02 = m[0, 2] - yc * m[0, 1]
    mu11 = m[1, 1] - xc * m[0, 1]
    mu30 = m[3, 0] - 3 * xc * m[2, 0] + 2 * xc * xc * m[1, 0]
    mu03 = m[0, 3] - 3 * yc * m[0, 2] + 2 * yc * yc * m[0, 1]
    mu21 = m[2, 1] - 2 * xc * m[1, 1] - yc * m[2, 0] + 2 * xc * xc * m[0, 1]
    mu12 = m[1, 2] - 2 * yc * m[1, 1] - xc * m[0, 2] + 2 * yc * yc * m[1, 0]

    def eta(mu, order):
        return mu / m00 ** (1 + order / 2)

    n20, n02, n11 = eta(mu20, 2), eta(mu02, 2), eta(mu11, 2)
    n30, n03, n21, n12 = eta(mu30, 3), eta(mu03, 3), eta(mu21, 3), eta(mu12, 3)
    a, b = n30 + n12, n21 + n03
    h1 = n20 + n02
    h2 = (n20 - n02) ** 2 + 4 * n11 ** 2
    h3 = (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2
    h4 = a ** 2 + b ** 2
    h5 = (n30 - 3 * n12) * a * (a ** 2 - 3 * b ** 2) + (3 * n21 - n03) * b * (3 * a ** 2 - b ** 2)
    h6 = (n20 - n02) * (a ** 2 - b ** 2) + 4 * n11 * a * b
    h7 = (3 * n21 - n03) * a * (a ** 2 - 3 * b ** 2) - (n30 - 3 * n12) * b * (3 * a ** 2 - b ** 2)
    return np.array([h1, h2, h3, h4, h5, h6, h7])


def _log_hu(h: np.ndarray) -> np.ndarray:
    out = np.full(h.shape, np.nan)
    ok = np.abs(h) >= HU_EPS
    out[ok] = np.sign(h[ok]) * np.log10(np.abs(h[ok]))
    return out


def hu_distance(ha: np.ndarray, hb: np.ndarray) -> float:
    """I1 metric: sum |1/ma - 1/mb| with m = sign(h) log10|h|; near-zero terms skipped."""
    ma, mb = _log_hu(np.asarray(ha)), _log_hu(np.asarray(hb))
    ok = ~np.isnan(ma) & ~np.isnan(mb) & (ma != 0) & (mb != 0)
    return float(np.abs(1.0 / ma[ok] - 1.0 / mb[ok]).sum())


def shape_distance(a: MaskRegion, b: MaskRegion, image_size: int = DEFAULT_IMAGE_SIZE) -> float:
    return hu_distance(hu_invariants(a, image_size), hu_invariants(b, image_size))


def contour_symmetry_from_distances(distances: Sequence[float]) -> float:
    d = np.minimum(np.asarray(distances, dtype=float), 1.0)
    if d.size == 0:
        raise DegenerateCohort("contour symmetry needs at least one pair")
    return 100.0 * (1.0 - float(d.mean()))


def contour_symmetry(masks: Sequence[MaskRegion], image_size: int = DEFAULT_IMAGE_SIZE) -> float:
    if len(masks) < 2:
        raise DegenerateCohort("contour symmetry needs at least two masks")
    hus = [hu_invariants(m, image_size) for m in masks]
    return contour_symmetry_from_distances([hu_distance(a, b) for a, b in itertools.combinations(hus, 2)])


@dataclass(frozen=True)
class PairScore:
    a: str
    b: str
    size_s: float
    cont_s: float


@dataclass(frozen=True)
class SymmetryReport:
    n: int
    size_s: float
    cont_s: float
    members: tuple[str, ...]
    pairs: tuple[PairScore, ...] = field(default_factory=tuple)
    frame_index: int = -1


def cohort_reports(tracks: Sequence[Track], frame_index: int = -1, image_size: int = DEFAULT_IMAGE_SIZE) -> list[SymmetryReport]:
    """One report per lineage-code length shared by two or more tracks.

    Sibling pairs (same code up to the last bit) also get their own scores.
    """
    by_len: dict[int, list[Track]] = {}
    for t in tracks:
        by_len.setdefault(len(t.tcode), []).append(t)
    reports = []
    for n in sorted(by_len):
        group = sorted(by_len[n], key=lambda t: t.tcode)
        if len(group) < 2:
            continue
        masks = [t.mask for t in group]
        hus = [hu_invariants(m, image_size) for m in masks]
        dists = {(i, j): hu_distance(hus[i], hus[j]) for i, j in itertools.combinations(range(len(group)), 2)}
        pairs = []
        for (i, j), d in dists.items():
            if group[i].tcode[:-1] == group[j].tcode[:-1]:
                pairs.append(PairScore(
                    group[i].id, group[j].id,
                    size_symmetry([group[i].area, group[j].area]),
                    contour_symmetry_from_distances([d]),
                ))
        reports.append(SymmetryReport(
            n=n,
            size_s=size_symmetry([t.area for t in group]),
            cont_s=contour_symmetry_from_distances(list(dists.values())),
            members=tuple(t.id for t in group),
            pairs=tuple(pairs),
            frame_index=frame_index,
        ))
    return reports


def tracks_at(tracks: Sequence[Track], frame_index: int) -> list[Track]:
    """Tracks observed at ``frame_index``, truncated so their last observation is that frame."""
    out = []
    for t in tracks:
        if frame_index in t.frames:
            i = t.frames.index(frame_index)
            snap = Track(t.tcode, t.parent, t.frames[: i + 1], t.centroids[: i + 1], t.areas[: i + 1], t.masks[: i + 1])
            out.append(snap)
    return out


def symmetry_table(tracks: Sequence[Track], image_size: int = DEFAULT_IMAGE_SIZE, every: int = 1) -> list[SymmetryReport]:
    """Cohort reports for each frame present in the track histories."""
    frames = sorted({f for t in tracks for f in t.frames})
    out = []
    for f in frames[::every]:
        out += cohort_reports(tracks_at(tracks, f), f, image_size)
    return out


__all__ = [
    "size_symmetry", "hu_invariants", "hu_distance", "shape_distance", "contour_symmetry",
    "cohort_reports", "SymmetryReport", "PairScore", "symmetry_table", "tracks_at", "render_id",
]
