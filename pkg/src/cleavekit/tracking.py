"""Blastomere lineage tracking with binary lineage codes.

Every blastomere carries a code that starts with the root bit 0; a division
appends bits to the parent's code. Equal blastomere counts between frames are
matched by minimum total centroid distance; a count increase is explained by
the set of dividing parents that best fits the new centroids.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import FrameObservation, MaskRegion
from .errors import ValidationError

Tcode = tuple[int, ...]
ROOT: Tcode = (0,)


def validate_tcode(tcode: Sequence[int]) -> Tcode:
    t = tuple(int(b) for b in tcode)
    if not t or t[0] != 0 or any(b not in (0, 1) for b in t):
        raise ValidationError(f"invalid lineage code {tcode!r}")
    return t


def render_id(tcode: Sequence[int]) -> str:
    """(0,) -> 'zygote'; second bit picks A/B; later bits are appended as digits."""
    t = validate_tcode(tcode)
    if len(t) == 1:
        return "zygote"
    return ("A" if t[1] == 0 else "B") + "".join(str(b) for b in t[2:])


def tcode_to_str(tcode: Sequence[int]) -> str:
    return "".join(str(b) for b in tcode)


def tcode_from_str(text: str) -> Tcode:
    return validate_tcode([int(ch) for ch in text.strip()])


@dataclass
class Track:
    tcode: Tcode
    parent: Optional[Tcode] = None
    frames: list[int] = field(default_factory=list)
    centroids: list[tuple[float, float]] = field(default_factory=list)
    areas: list[float] = field(default_factory=list)
    masks: list[MaskRegion] = field(default_factory=list)

    @property
    def id(self) -> str:
        return render_id(self.tcode)

    @property
    def centroid(self) -> tuple[float, float]:
        return self.centroids[-1]

    @property
    def area(self) -> float:
        return self.areas[-1]

    @property
    def mask(self) -> Optional[MaskRegion]:
        return self.masks[-1] if self.masks else None

    @property
    def centroid_history(self) -> list[tuple[int, tuple[float, float]]]:
        return list(zip(self.frames, self.centroids))

    def observe(self, frame_index: int, mask: MaskRegion):
        if self.frames and frame_index <= self.frames[-1]:
            raise ValidationError("track frames must be strictly increasing")
        self.frames.append(frame_index)
        self.centroids.append(mask.centroid)
        self.areas.append(mask.area)
        self.masks.append(mask)

    def to_dict(self, with_contours: bool = True) -> dict:
        hist = []
        for i, f in enumerate(self.frames):
            rec = {"frame_index": f, "centroid": list(self.centroids[i]), "area": self.areas[i]}
            if with_contours and i < len(self.masks):
                rec["contour"] = self.masks[i].to_dict()["contour"]
            hist.append(rec)
        return {
            "tcode": tcode_to_str(self.tcode),
            "id": self.id,
            "parent": None if self.parent is None else tcode_to_str(self.parent),
            "history": hist,
        }

    @classmethod
    def from_dict(cls, d) -> "Track":
        tr = cls(tcode_from_str(d["tcode"]), None if d.get("parent") is None else tcode_from_str(d["parent"]))
        for rec in d.get("history", []):
            tr.frames.append(int(rec["frame_index"]))
            tr.centroids.append(tuple(rec["centroid"]))
            tr.areas.append(float(rec["area"]))
            if "contour" in rec:
                tr.masks.append(MaskRegion(np.asarray(rec["contour"], dtype=float), tuple(rec["centroid"]), float(rec["area"])))
        return tr


@dataclass(frozen=True)
class IrcEvent:
    frame_index: int
    parent_tcode: Tcode
    child_count: int

    @property
    def parent_id(self) -> str:
        return render_id(self.parent_tcode)

    def to_dict(self) -> dict:
        return {"frame_index": self.frame_index, "parent": tcode_to_str(self.parent_tcode), "child_count": self.child_count}


@dataclass
class Division:
    parent: int
    children: list[int]


def _points(xs) -> np.ndarray:
    return np.asarray(xs, dtype=float).reshape(-1, 2)


def match_same_count(prev_centroids, curr_centroids) -> np.ndarray:
    """Index of the previous blastomere matched to each current one.

    Minimises the total Euclidean centroid distance over all one-to-one
    assignments.
    """
    p, c = _points(prev_centroids), _points(curr_centroids)
    if len(p) != len(c) or len(p) == 0:
        raise ValidationError("equal, non-zero blastomere counts required")
    cost = np.linalg.norm(p[:, None, :] - c[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(len(c), dtype=int)
    out[cols] = rows
    return out


def _extra_splits(n_parents: int, extra: int):
    """All ways to hand ``extra`` additional cells to ``n_parents`` parents."""
    for bars in itertools.combinations(range(extra + n_parents - 1), n_parents - 1):
        prev = -1
        parts = []
        for b in bars + (extra + n_parents - 1,):
            parts.append(b - prev - 1)
            prev = b
        yield tuple(parts)


def explain_division(prev_centroids, curr_centroids) -> tuple[list[Division], float]:
    """Best assignment of current blastomeres to parents when the count grows.

    Each parent that receives one blastomere is a non-dividing match; a parent
    receiving k >= 2 divided into k. Candidate splits are scored by the total
    centroid distance of the optimal slot assignment.
    """
    p, c = _points(prev_centroids), _points(curr_centroids)
    extra = len(c) - len(p)
    if len(p) == 0 or extra <= 0:
        raise ValidationError("division needs more current than previous blastomeres")
    dist = np.linalg.norm(p[:, None, :] - c[None, :, :], axis=2)
    best = None
    for parts in _extra_splits(len(p), extra):
        slots = np.repeat(np.arange(len(p)), np.array(parts) + 1)
        rows, cols = linear_sum_assignment(dist[slots])
        total = float(dist[slots][rows, cols].sum())
        if best is None or total < best[0] - 1e-9:
            best = (total, slots[rows], cols)
    total, parents, children = best
    groups: dict[int, list[int]] = {}
    for par, ch in zip(parents, children):
        groups.setdefault(int(par), []).append(int(ch))
    return [Division(par, sorted(chs)) for par, chs in sorted(groups.items())], total


def child_codes(parent: Tcode, masks: Sequence[MaskRegion]) -> list[Tcode]:
    """Codes for the children of ``parent``, in the order of ``masks``.

    Larger area gets the lower bit pattern (ties by centroid); k children
    receive ceil(log2 k) appended bits.
    """
    k = len(masks)
    bits = max(1, math.ceil(math.log2(k)))
    order = sorted(range(k), key=lambda i: (-masks[i].area, masks[i].centroid))
    codes: list[Tcode] = [()] * k
    for rank, i in enumerate(order):
        codes[i] = tuple(parent) + tuple(int(b) for b in format(rank, f"0{bits}b"))
    return codes


class LineageTracker:
    """Single-embryo tracker; feed frames in order through :meth:`step`."""

    def __init__(self):
        self.frame_index: Optional[int] = None
        self.active: list[Track] = []
        self.retired: list[Track] = []
        self.irc_events: list[IrcEvent] = []
        self.anomalies: list[int] = []
        self.divisions: list[tuple[int, Tcode, int]] = []

    @property
    def tracks(self) -> list[Track]:
        return self.retired + self.active

    def step(self, frame: FrameObservation) -> "LineageTracker":
        masks = list(frame.masks)
        self.frame_index = frame.frame_index
        if not masks:
            self.anomalies.append(frame.frame_index)
            return self
        if not self.active:
            self._start(frame.frame_index, masks)
        elif len(masks) == len(self.active):
            self._match(frame.frame_index, masks)
        elif len(masks) > len(self.active):
            self._divide(frame.frame_index, masks)
        else:
            self.anomalies.append(frame.frame_index)
        return self

    def run(self, frames: Iterable[FrameObservation]) -> "LineageTracker":
        for f in frames:
            self.step(f)
        return self

    def _start(self, frame_index, masks):
        if len(masks) == 1:
            tr = Track(ROOT)
            tr.observe(frame_index, masks[0])
            self.active = [tr]
            return
        # sequence starts after the first cleavage: divide a virtual zygote
        pts = _points([m.centroid for m in masks])
        root = Track(ROOT)
        root.frames.append(frame_index - 1)
        root.centroids.append(tuple(pts.mean(axis=0)))
        root.areas.append(float(sum(m.area for m in masks)))
        self.active = [root]
        self._divide(frame_index, masks)

    def _match(self, frame_index, masks):
        assign = match_same_count([t.centroid for t in self.active], [m.centroid for m in masks])
        for j, i in enumerate(assign):
            self.active[i].observe(frame_index, masks[j])

    def _divide(self, frame_index, masks):
        divisions, _ = explain_division([t.centroid for t in self.active], [m.centroid for m in masks])
        new_active: list[Track] = []
        for div in divisions:
            parent = self.active[div.parent]
            if len(div.children) == 1:
                parent.observe(frame_index, masks[div.children[0]])
                new_active.append(parent)
                continue
            kids = [masks[j] for j in div.children]
            for code, m in zip(child_codes(parent.tcode, kids), kids):
                tr = Track(code, parent.tcode)
                tr.observe(frame_index, m)
                new_active.append(tr)
            self.retired.append(parent)
            self.divisions.append((frame_index, parent.tcode, len(kids)))
            if len(kids) > 2:
                self.irc_events.append(IrcEvent(frame_index, parent.tcode, len(kids)))
        self.active = sorted(new_active, key=lambda t: t.tcode)

    def detect_irc(self) -> list[IrcEvent]:
        return list(self.irc_events)

    @property
    def irc(self) -> bool:
        return bool(self.irc_events)

    def to_dict(self, with_contours: bool = True) -> dict:
        return {
            "tracks": [t.to_dict(with_contours) for t in self.tracks],
            "active": [tcode_to_str(t.tcode) for t in self.active],
            "irc_events": [e.to_dict() for e in self.irc_events],
            "anomalies": list(self.anomalies),
        }


def detect_irc(tracker: LineageTracker) -> list[IrcEvent]:
    return tracker.detect_irc()


def is_prefix_free(codes: Sequence[Tcode]) -> bool:
    codes = [tuple(c) for c in codes]
    if len(set(codes)) != len(codes):
        return False
    for a in codes:
        for b in codes:
            if a != b and len(a) < len(b) and b[: len(a)] == a:
                return False
    return True


def track_sequence(frames: Iterable[FrameObservation]) -> LineageTracker:
    return LineageTracker().run(frames)
