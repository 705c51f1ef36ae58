"""Domain types and elementary morphokinetic arithmetic.

All times are hours in double precision. Relative times are measured from
pronuclear fading (tPNf); absolute times come from the incubator clock.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ValidationError

SQRT_2PI = math.sqrt(2.0 * math.pi)


class ActLabel(str, enum.Enum):
    TPNA = "tPNa"
    TPNF = "tPNf"
    T2 = "t2"
    T3 = "t3"
    T4 = "t4"
    T5 = "t5"
    T6 = "t6"
    T7 = "t7"
    T8 = "t8"

    @property
    def order(self) -> int:
        return _ORDER[self]

    def __lt__(self, other):
        if not isinstance(other, ActLabel):
            return NotImplemented
        return self.order < other.order

    def __le__(self, other):
        if not isinstance(other, ActLabel):
            return NotImplemented
        return self.order <= other.order

    def __gt__(self, other):
        if not isinstance(other, ActLabel):
            return NotImplemented
        return self.order > other.order

    def __ge__(self, other):
        if not isinstance(other, ActLabel):
            return NotImplemented
        return self.order >= other.order

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "ActLabel":
        for label in cls:
            if label.value.lower() == str(text).strip().lower():
                return label
        raise ValidationError(f"unknown label {text!r}")


ALL_LABELS: tuple[ActLabel, ...] = tuple(ActLabel)
_ORDER = {label: i for i, label in enumerate(ALL_LABELS)}
EM_MODES: tuple[ActLabel, ...] = (ActLabel.T2, ActLabel.T3, ActLabel.T4, ActLabel.T5, ActLabel.T8)
CLEAVAGE_LABELS: tuple[ActLabel, ...] = ALL_LABELS[2:]

# Output of the 8-cell sub-classifier that does not separate t6 from t7.
MERGED_T67 = "t6/t7"


class Absence(str, enum.Enum):
    """Why a timing has no value: skipped by direct cleavage, or never reached."""

    PASS = "pass"
    NA = "n/a"

    def __str__(self) -> str:
        return self.value


TimeValue = Union[float, Absence]


def parse_time_value(text) -> TimeValue:
    if isinstance(text, Absence):
        return text
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().lower()
    if s == Absence.PASS.value:
        return Absence.PASS
    if s in ("n/a", "na", ""):
        return Absence.NA
    return float(s)


def is_time(value) -> bool:
    return not isinstance(value, Absence) and value is not None


@dataclass(frozen=True)
class GaussianComponent:
    mean: float
    std: float
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValidationError(f"non-finite component {self}")
        if not self.std > 0:
            raise ValidationError(f"std must be > 0, got {self.std}")
        if not 0 < self.weight <= 1 + 1e-12:
            raise ValidationError(f"weight must be in (0, 1], got {self.weight}")

    @property
    def var(self) -> float:
        return self.std * self.std

    def pdf(self, x):
        return gaussian_pdf(x, self)

    def shifted(self, d: float) -> "GaussianComponent":
        return GaussianComponent(self.mean + d, self.std, self.weight)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "weight": self.weight}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GaussianComponent":
        return cls(float(d["mean"]), float(d["std"]), float(d.get("weight", 1.0)))


@dataclass(frozen=True)
class ActMixture:
    """Five-mode Gaussian model over tPNf-relative cleavage times.

    ``components`` holds the modes used for timing prediction. When the model
    came from an EM fit, ``t3_fitted`` keeps the raw fitted t3 mode (the one
    in ``components`` is the t4-derived surrogate) and ``t3_submixture`` the
    two-component fit of the t3 cluster.
    """

    components: Mapping[ActLabel, GaussianComponent]
    t3_submixture: Optional[tuple[GaussianComponent, GaussianComponent]] = None
    t3_fitted: Optional[GaussianComponent] = None

    def __post_init__(self):
        comps = {ActLabel(k): v for k, v in dict(self.components).items()}
        if set(comps) != set(EM_MODES):
            missing = sorted(set(EM_MODES) - set(comps))
            raise ValidationError(f"mixture must have exactly the modes t2,t3,t4,t5,t8; missing {missing}")
        ordered = {label: comps[label] for label in EM_MODES}
        means = [c.mean for c in ordered.values()]
        if any(b <= a for a, b in zip(means, means[1:])):
            raise ValidationError(f"component means must be strictly increasing, got {means}")
        total = sum(c.weight for c in ordered.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"mode weights must sum to 1, got {total!r}")
        if self.t3_submixture is not None:
            sub = tuple(self.t3_submixture)
            if len(sub) != 2:
                raise ValidationError("t3 submixture must have two components")
            if abs(sum(c.weight for c in sub) - 1.0) > 1e-9:
                raise ValidationError("t3 submixture weights must sum to 1")
            object.__setattr__(self, "t3_submixture", sub)
        object.__setattr__(self, "components", ordered)

    def __getitem__(self, label) -> GaussianComponent:
        return self.components[ActLabel(label)]

    @property
    def means(self) -> dict[ActLabel, float]:
        return {k: c.mean for k, c in self.components.items()}

    @property
    def stds(self) -> dict[ActLabel, float]:
        return {k: c.std for k, c in self.components.items()}

    def shifted(self, d: float) -> "ActMixture":
        """All mode means moved by ``d``; stds, weights and intervals unchanged."""
        return ActMixture(
            {k: c.shifted(d) for k, c in self.components.items()},
            None if self.t3_submixture is None else tuple(c.shifted(d) for c in self.t3_submixture),
            None if self.t3_fitted is None else self.t3_fitted.shifted(d),
        )

    def to_dict(self) -> dict:
        out = {
            "modes": [{"label": k.value, **c.to_dict()} for k, c in self.components.items()],
            "t3_submixture": [] if self.t3_submixture is None else [c.to_dict() for c in self.t3_submixture],
        }
        if self.t3_fitted is not None:
            out["t3_fitted"] = self.t3_fitted.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ActMixture":
        try:
            comps = {ActLabel.parse(m["label"]): GaussianComponent.from_dict(m) for m in d["modes"]}
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model: {exc}") from exc
        sub = d.get("t3_submixture") or None
        fitted = d.get("t3_fitted")
        return cls(
            comps,
            None if not sub else tuple(GaussianComponent.from_dict(c) for c in sub),
            None if fitted is None else GaussianComponent.from_dict(fitted),
        )

    @classmethod
    def from_params(cls, means: Sequence[float], stds: Sequence[float], weights=None) -> "ActMixture":
        if weights is None:
            weights = [1.0 / len(EM_MODES)] * len(EM_MODES)
        return cls({label: GaussianComponent(m, s, w) for label, m, s, w in zip(EM_MODES, means, stds, weights)})


# Five-mode model reported for the VGHTC cohort (local EM result).
REFERENCE_MEANS = (2.56, 8.49, 14.13, 29.34, 36.02)
REFERENCE_STDS = (0.45, 5.38, 1.21, 3.21, 6.93)


def reference_mixture() -> ActMixture:
    return ActMixture.from_params(REFERENCE_MEANS, REFERENCE_STDS)


def _polygon_area_centroid(contour: np.ndarray) -> tuple[float, float, float]:
    x, y = contour[:, 0], contour[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if a == 0:
        return 0.0, float(x.mean()), float(y.mean())
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return abs(float(a)), float(cx), float(cy)


def _segments_intersect(contour: np.ndarray) -> bool:
    """True if any two non-adjacent edges of the closed polygon cross."""
    p = contour
    q = np.roll(contour, -1, axis=0)
    n = len(p)

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    P1, Q1 = p[:, None, :], q[:, None, :]
    P2, Q2 = p[None, :, :], q[None, :, :]
    o1 = orient(P1, Q1, np.broadcast_to(P2, (n, n, 2)))
    o2 = orient(P1, Q1, np.broadcast_to(Q2, (n, n, 2)))
    o3 = orient(P2, Q2, np.broadcast_to(P1, (n, n, 2)))
    o4 = orient(P2, Q2, np.broadcast_to(Q1, (n, n, 2)))
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
    i, j = np.indices((n, n))
    adjacent = (np.abs(i - j) <= 1) | (np.abs(i - j) == n - 1)
    return bool((crossing & ~adjacent).any())


@dataclass(frozen=True, eq=False)
class MaskRegion:
    """One segmented blastomere: closed polygon in pixel coordinates (x, y)."""

    contour: np.ndarray
    centroid: tuple[float, float]
    area: float
    confidence: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.contour, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 3:
            raise ValidationError("contour needs at least 3 (x, y) vertices")
        c.setflags(write=False)
        object.__setattr__(self, "contour", c)
        object.__setattr__(self, "centroid", (float(self.centroid[0]), float(self.centroid[1])))
        if not self.area > 0:
            raise ValidationError(f"mask area must be > 0, got {self.area}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must be in [0, 1], got {self.confidence}")
        lo, hi = c.min(axis=0), c.max(axis=0)
        cx, cy = self.centroid
        if not (lo[0] <= cx <= hi[0] and lo[1] <= cy <= hi[1]):
            raise ValidationError("centroid outside contour bounding box")

    @classmethod
    def from_contour(cls, contour, confidence: float = 1.0, check_simple: bool = True) -> "MaskRegion":
        c = np.asarray(contour, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 3:
            raise ValidationError("contour needs at least 3 (x, y) vertices")
        if check_simple and _segments_intersect(c):
            raise ValidationError("contour is self-intersecting")
        area, cx, cy = _polygon_area_centroid(c)
        return cls(c, (cx, cy), area, confidence)

    def is_simple(self) -> bool:
        return not _segments_intersect(self.contour)

    def translated(self, dx: float, dy: float) -> "MaskRegion":
        return MaskRegion(self.contour + (dx, dy), (self.centroid[0] + dx, self.centroid[1] + dy), self.area, self.confidence)

    def to_dict(self) -> dict:
        return {
            "contour": [[round(float(x), 4), round(float(y), 4)] for x, y in self.contour],
            "centroid": [self.centroid[0], self.centroid[1]],
            "area": self.area,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MaskRegion":
        return cls(np.asarray(d["contour"], dtype=float), tuple(d["centroid"]), float(d["area"]), float(d.get("confidence", 1.0)))

    def __eq__(self, other):
        if not isinstance(other, MaskRegion):
            return NotImplemented
        return (
            np.array_equal(self.contour, other.contour)
            and self.centroid == other.centroid
            and self.area == other.area
            and self.confidence == other.confidence
        )

    __hash__ = None


@dataclass(frozen=True)
class FrameObservation:
    frame_index: int
    time_hours: float
    classifier_label: Optional[Union[ActLabel, str]] = None
    masks: tuple[MaskRegion, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        lab = self.classifier_label
        if lab is not None and not isinstance(lab, ActLabel):
            object.__setattr__(self, "classifier_label", MERGED_T67 if lab == MERGED_T67 else ActLabel.parse(lab))

    @property
    def count(self) -> int:
        return len(self.masks)

    def to_dict(self) -> dict:
        lab = self.classifier_label
        return {
            "frame_index": self.frame_index,
            "time_hours": self.time_hours,
            "classifier_label": None if lab is None else str(lab),
            "masks": [m.to_dict() for m in self.masks],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FrameObservation":
        return cls(
            int(d["frame_index"]),
            float(d["time_hours"]),
            d.get("classifier_label"),
            tuple(MaskRegion.from_dict(m) for m in d.get("masks", ())),
        )


def check_frame_order(frames: Sequence[FrameObservation]) -> None:
    for a, b in zip(frames, frames[1:]):
        if b.frame_index <= a.frame_index or b.time_hours < a.time_hours:
            raise ValidationError(f"frames out of order at index {b.frame_index}")


@dataclass(frozen=True)
class IntervalSet:
    cc2: Optional[float] = None
    cc3: Optional[float] = None
    s2: Optional[float] = None
    s3: Optional[float] = None

    def as_dict(self) -> dict[str, Optional[float]]:
        return {"cc2": self.cc2, "cc3": self.cc3, "s2": self.s2, "s3": self.s3}


def relative_time(t_abs: float, tpnf_abs: float) -> float:
    return t_abs - tpnf_abs


def intervals(timeline: Mapping) -> IntervalSet:
    """cc2 = t3-t2, s2 = t4-t3, cc3 = t5-t4, s3 = t8-t5; absent operands give None."""
    t = {ActLabel(k): v for k, v in timeline.items() if is_time(v)}

    def diff(a, b):
        if a in t and b in t:
            return t[b] - t[a]
        return None

    L = ActLabel
    return IntervalSet(cc2=diff(L.T2, L.T3), cc3=diff(L.T4, L.T5), s2=diff(L.T3, L.T4), s3=diff(L.T5, L.T8))


def gaussian_pdf(x, c: GaussianComponent):
    z = (np.asarray(x, dtype=float) - c.mean) / c.std
    out = np.exp(-0.5 * z * z) / (c.std * SQRT_2PI)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_logpdf(x, mean, std):
    z = (np.asarray(x, dtype=float) - mean) / std
    return -0.5 * z * z - np.log(std) - 0.5 * math.log(2.0 * math.pi)
