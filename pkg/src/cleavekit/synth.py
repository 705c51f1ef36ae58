"""Seeded generator of synthetic embryo sequences with ground truth.

Stands in for the incubator plus trained detectors: every frame carries the
clock time, a (possibly corrupted) cascade label and elliptical blastomere
masks whose lineage follows the sampled cleavage times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .core import (
    EM_MODES,
    MERGED_T67,
    Absence,
    ActLabel,
    ActMixture,
    FrameObservation,
    MaskRegion,
    TimeValue,
    is_time,
    parse_time_value,
    reference_mixture,
)
from .em import derive_t3
from .errors import InvalidConfig

L = ActLabel

# Classifier outputs in cascade order; adjacent entries are what label noise confuses.
CLASSIFIER_OUTPUTS = (L.TPNA, L.TPNF, L.T2, L.T3, L.T4, L.T5, MERGED_T67, L.T8)

CELL_COUNT = {L.TPNA: 1, L.TPNF: 1, L.T2: 2, L.T3: 3, L.T4: 4, L.T5: 5, L.T6: 6, L.T7: 7, L.T8: 8}


@dataclass(frozen=True)
class SynthConfig:
    mixture: ActMixture = field(default_factory=reference_mixture)
    frame_period: float = 0.25
    n_embryos: int = 10
    label_noise_rate: float = 0.0
    t67_confusion_rate: float = 0.0
    irc_rate: float = 0.0
    seg_noise_rate: float = 0.0
    centroid_jitter: float = 1.0
    area_cv: float = 0.1
    image_size: int = 500
    zygote_radius: float = 60.0
    tpnf_range: tuple[float, float] = (20.0, 28.0)
    pn_duration_range: tuple[float, float] = (4.0, 8.0)
    tail_hours: float = 3.0
    min_gap_periods: int = 2

    def __post_init__(self):
        for name in ("label_noise_rate", "t67_confusion_rate", "irc_rate", "seg_noise_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1], got {v}")
        if self.image_size <= 0 or self.frame_period <= 0 or self.n_embryos < 0:
            raise InvalidConfig("image_size and frame_period must be > 0, n_embryos >= 0")
        if self.centroid_jitter < 0 or self.area_cv < 0:
            raise InvalidConfig("centroid_jitter and area_cv must be >= 0")
        if self.min_gap_periods < 2:
            raise InvalidConfig("min_gap_periods must be >= 2 so events land on distinct frames")

    @property
    def min_gap(self) -> float:
        return self.min_gap_periods * self.frame_period

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "mixture" in d and isinstance(d["mixture"], Mapping):
            d["mixture"] = ActMixture.from_dict(d["mixture"])
        for key in ("tpnf_range", "pn_duration_range"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown simulation settings {sorted(unknown)}")
        return cls(**d)

    def to_mapping(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "mixture"}
        out["mixture"] = self.mixture.to_dict()
        out["tpnf_range"] = list(self.tpnf_range)
        out["pn_duration_range"] = list(self.pn_duration_range)
        return out


@dataclass(frozen=True)
class GroundTruthTimeline:
    """Absolute first-frame times per label; ``pass``/``n/a`` where absent."""

    embryo_id: str
    times: Mapping[ActLabel, TimeValue]
    irc: bool = False

    def __post_init__(self):
        times = {L(k): parse_time_value(v) for k, v in dict(self.times).items()}
        for label in L:
            times.setdefault(label, Absence.NA)
        present = [times[label] for label in L if is_time(times[label])]
        if any(b <= a for a, b in zip(present, present[1:])):
            raise InvalidConfig(f"ground truth times for {self.embryo_id} are not strictly increasing")
        object.__setattr__(self, "times", {label: times[label] for label in L})

    def relative(self) -> dict[ActLabel, float]:
        tpnf = self.times[L.TPNF]
        return {k: v - tpnf for k, v in self.times.items() if is_time(v) and k >= L.T2}

    def to_dict(self) -> dict:
        return {
            "embryo_id": self.embryo_id,
            "irc": self.irc,
            "times": {k.value: (v if is_time(v) else str(v)) for k, v in self.times.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruthTimeline":
        return cls(str(d.get("embryo_id", "")), {L.parse(k): v for k, v in d["times"].items()}, bool(d.get("irc", False)))


@dataclass(frozen=True)
class EmbryoSequence:
    embryo_id: str
    frames: tuple[FrameObservation, ...]
    # latent (true) cell count per frame, before segmentor noise
    true_counts: tuple[int, ...] = ()


# -- event sampling ----------------------------------------------------------------


def sample_relative_events(rng: np.random.Generator, mixture: ActMixture, min_gap: float, irc: bool = False, max_tries: int = 10000) -> dict[ActLabel, float]:
    """Relative (tPNf = 0) event times for t2..t8.

    t2, t4, t5, t8 come from their modes and t3 from the t4-derived rule; the
    chain is resampled until consecutive events are at least ``min_gap`` apart
    (three gaps between t5 and t8 to leave room for t6 and t7). t6 and t7 are
    uniform in (t5, t8).
    """
    t3c = derive_t3(mixture[L.T4])
    comps = [mixture[L.T2], t3c, mixture[L.T4], mixture[L.T5], mixture[L.T8]]
    gaps = [min_gap, min_gap, min_gap, 3 * min_gap]
    for _ in range(max_tries):
        x = [rng.normal(c.mean, c.std) for c in comps]
        if irc:
            ok = x[2] >= min_gap and all(b - a >= g for a, b, g in zip(x[2:], x[3:], gaps[2:]))
        else:
            ok = x[0] >= min_gap and all(b - a >= g for a, b, g in zip(x, x[1:], gaps))
        if ok:
            break
    else:
        raise InvalidConfig("could not sample an ordered event chain; mixture too overlapping")
    t2, t3, t4, t5, t8 = x
    while True:
        t6, t7 = sorted(rng.uniform(t5, t8, size=2))
        if t6 - t5 >= min_gap and t7 - t6 >= min_gap and t8 - t7 >= min_gap:
            break
    out = {L.T4: t4, L.T5: t5, L.T6: t6, L.T7: t7, L.T8: t8}
    if not irc:
        out[L.T2] = t2
        out[L.T3] = t3
    return out


# -- geometry -----------------------------------------------------------------------


@dataclass
class _Cell:
    code: tuple[int, ...]
    centre: np.ndarray
    area: float
    aspect: float
    angle: float


def ellipse_contour(cx: float, cy: float, area: float, aspect: float, angle: float, n: int = 24) -> np.ndarray:
    b = math.sqrt(area / (math.pi * aspect))
    a = aspect * b
    t = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    x, y = a * np.cos(t), b * np.sin(t)
    ca, sa = math.cos(angle), math.sin(angle)
    return np.column_stack([cx + ca * x - sa * y, cy + sa * x + ca * y])


def ellipse_mask(cx, cy, area, aspect, angle, confidence=1.0, n: int = 24) -> MaskRegion:
    contour = ellipse_contour(cx, cy, area, aspect, angle, n)
    # polygon area of the inscribed n-gon, so area/centroid match the contour exactly
    poly_area = 0.5 * n * math.sin(2.0 * math.pi / n) * area / math.pi
    return MaskRegion(contour, (cx, cy), poly_area, confidence)


def _split(rng, cell: _Cell, k: int, cfg: SynthConfig) -> list[_Cell]:
    if k == 2:
        r = math.exp(rng.normal(0.0, cfg.area_cv)) if cfg.area_cv > 0 else 1.0
        fracs = [r / (1 + r), 1 / (1 + r)]
    else:
        w = np.exp(rng.normal(0.0, cfg.area_cv, size=k)) if cfg.area_cv > 0 else np.ones(k)
        fracs = list(w / w.sum())
    theta = rng.uniform(0, 2 * math.pi)
    bits = max(1, math.ceil(math.log2(k)))
    children = []
    for i, f in enumerate(fracs):
        ang = theta + 2 * math.pi * i / k
        area = cell.area * f
        dist = 0.9 * math.sqrt(area / math.pi) * (1.0 if k == 2 else 1.3)
        centre = cell.centre + dist * np.array([math.cos(ang), math.sin(ang)])
        code = cell.code + tuple(int(b) for b in format(i, f"0{bits}b"))
        children.append(_Cell(code, centre, area, rng.uniform(1.0, 1.3), rng.uniform(0, math.pi)))
    return children


# -- frames -------------------------------------------------------------------------


def _true_label(t: float, abs_events: Mapping[ActLabel, float]) -> ActLabel:
    cur = L.TPNA
    for label in L:
        if label in abs_events and abs_events[label] <= t + 1e-9:
            cur = label
    return cur


def _classifier_output(label: ActLabel):
    return MERGED_T67 if label in (L.T6, L.T7) else label


def _corrupt(rng, out, true_label: ActLabel, cfg: SynthConfig):
    if true_label in (L.T6, L.T7) and cfg.t67_confusion_rate > 0 and rng.random() < cfg.t67_confusion_rate:
        return L.T8
    if cfg.label_noise_rate > 0 and rng.random() < cfg.label_noise_rate:
        i = CLASSIFIER_OUTPUTS.index(out)
        j = i + (1 if rng.random() < 0.5 else -1)
        j = min(max(j, 0), len(CLASSIFIER_OUTPUTS) - 1)
        if j == i:
            j = i + 1 if i == 0 else i - 1
        return CLASSIFIER_OUTPUTS[j]
    return out


def _segment_noise(rng, masks: list[MaskRegion], cfg: SynthConfig) -> list[MaskRegion]:
    if cfg.seg_noise_rate <= 0 or rng.random() >= cfg.seg_noise_rate:
        return masks
    i = int(rng.integers(len(masks)))
    if len(masks) >= 2 and rng.random() < 0.5:
        return masks[:i] + masks[i + 1:]
    m = masks[i]
    cx, cy = m.centroid
    half = m.area / 2.0
    d = 0.6 * math.sqrt(half / math.pi)
    ang = rng.uniform(0, math.pi)
    parts = [
        ellipse_mask(cx + s * d * math.cos(ang), cy + s * d * math.sin(ang), half, 1.1, ang, m.confidence)
        for s in (-1, 1)
    ]
    return masks[:i] + parts + masks[i + 1:]


def _snap(t: float, period: float) -> float:
    k = math.ceil(t / period - 1e-9)
    return k * period


def generate_one(rng: np.random.Generator, cfg: SynthConfig, embryo_id: str) -> tuple[EmbryoSequence, GroundTruthTimeline]:
    irc = bool(rng.random() < cfg.irc_rate) if cfg.irc_rate > 0 else False
    tpnf = rng.uniform(*cfg.tpnf_range)
    rel = sample_relative_events(rng, cfg.mixture, cfg.min_gap, irc)
    tpna = tpnf - rng.uniform(*cfg.pn_duration_range)
    period = cfg.frame_period
    abs_events = {L.TPNA: _snap(tpna, period), L.TPNF: _snap(tpnf, period)}
    for label, r in rel.items():
        abs_events[label] = _snap(tpnf + r, period)

    # lineage: which cells divide at each event
    centre = np.array([cfg.image_size / 2.0, cfg.image_size / 2.0]) + rng.normal(0, 5.0, size=2)
    zygote = _Cell((0,), centre, math.pi * cfg.zygote_radius ** 2, rng.uniform(1.0, 1.15), rng.uniform(0, math.pi))
    divisions: list[tuple[float, int]] = []  # (time, number of new cells)
    if irc:
        divisions.append((abs_events[L.T4], 3))
    else:
        divisions += [(abs_events[L.T2], 1), (abs_events[L.T3], 1), (abs_events[L.T4], 1)]
    divisions += [(abs_events[lab], 1) for lab in (L.T5, L.T6, L.T7, L.T8)]

    start_k = int(round(abs_events[L.TPNA] / period))
    end_k = int(math.ceil((abs_events[L.T8] + cfg.tail_hours) / period))
    cells = [zygote]
    pending = list(divisions)
    order_rng = np.random.default_rng(rng.integers(2 ** 63))
    frames, counts = [], []
    for k in range(start_k, end_k + 1):
        t = k * period
        while pending and pending[0][0] <= t + 1e-9:
            _, new = pending.pop(0)
            if new == 3:
                cells = _split(rng, cells[0], 4, cfg)
            else:
                # divide one of the least-divided cells
                depth = min(len(c.code) for c in cells)
                candidates = [i for i, c in enumerate(cells) if len(c.code) == depth]
                i = candidates[int(order_rng.integers(len(candidates)))]
                cells = cells[:i] + _split(rng, cells[i], 2, cfg) + cells[i + 1:]
        true = _true_label(t, abs_events)
        masks = []
        for c in cells:
            jitter = rng.normal(0.0, cfg.centroid_jitter, size=2) if cfg.centroid_jitter > 0 else np.zeros(2)
            x, y = c.centre + jitter
            masks.append(ellipse_mask(float(x), float(y), c.area, c.aspect, c.angle, float(rng.uniform(0.7, 1.0))))
        counts.append(len(masks))
        masks = _segment_noise(rng, masks, cfg)
        label = _corrupt(rng, _classifier_output(true), true, cfg)
        frames.append(FrameObservation(k, t, label, tuple(masks)))

    times: dict[ActLabel, TimeValue] = dict(abs_events)
    if irc:
        times[L.T2] = Absence.PASS
        times[L.T3] = Absence.PASS
    gt = GroundTruthTimeline(embryo_id, times, irc)
    return EmbryoSequence(embryo_id, tuple(frames), tuple(counts)), gt


def generate(config: SynthConfig, seed: int = 0) -> list[tuple[EmbryoSequence, GroundTruthTimeline]]:
    """``config.n_embryos`` independent embryos; bit-reproducible for a given seed."""
    children = np.random.SeedSequence(seed).spawn(config.n_embryos)
    return [generate_one(np.random.default_rng(ss), config, f"embryo_{i:03d}") for i, ss in enumerate(children)]


def relative_samples(gts) -> list[tuple[ActLabel, float]]:
    """Labelled tPNf-relative times of the five modes, i.e. the EM training data."""
    out = []
    for gt in gts:
        rel = gt.relative()
        out += [(label, rel[label]) for label in EM_MODES if label in rel]
    return out


def noiseless(config: SynthConfig) -> SynthConfig:
    return replace(config, label_noise_rate=0.0, t67_confusion_rate=0.0, seg_noise_rate=0.0)
