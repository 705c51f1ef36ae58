"""Cleavage timing prediction.

Per frame the classifier label and the segment-count label are fused; when
they disagree the calibrated global mixture decides. The mixture is
calibrated per embryo by shifting every mode by the offset between the
observed anchor time and the model mean of the anchor label, which leaves
all inter-mode intervals untouched.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import (
    ALL_LABELS,
    CLEAVAGE_LABELS,
    EM_MODES,
    MERGED_T67,
    Absence,
    ActLabel,
    ActMixture,
    FrameObservation,
    GaussianComponent,
    IntervalSet,
    TimeValue,
    check_frame_order,
    gaussian_pdf,
    is_time,
    relative_time,
)
from .errors import AnchorMissing, NoPnfFound, ValidationError

L = ActLabel
ONE_CELL = (L.TPNA, L.TPNF)


class Source(str, enum.Enum):
    CONSISTENT = "consistent"
    CLASSIFIER = "classifier-won"
    SEGMENTOR = "segmentor-won"
    COUNT_ONLY = "count-only"


@dataclass(frozen=True)
class ResolvedFrame:
    frame_index: int
    time_hours: float
    label: ActLabel
    source: Source


def two_sum(a: float, b: float) -> tuple[float, float]:
    """Error-free addition: a + b == hi + lo exactly."""
    hi = a + b
    bb = hi - a
    lo = (a - (hi - bb)) + (b - bb)
    return hi, lo


@dataclass(frozen=True)
class CalibratedMeans:
    """Per-embryo model: every global mode mean shifted by ``offset``.

    ``residuals`` holds the rounding error of each shifted mean, so
    :meth:`intervals` recovers the global model's intervals bit for bit.
    """

    anchor: ActLabel
    offset: float
    mixture: ActMixture
    residuals: Mapping[ActLabel, float] = field(default_factory=dict)

    @property
    def means(self) -> dict[ActLabel, float]:
        return self.mixture.means

    def intervals(self) -> IntervalSet:
        m, r = self.mixture.means, self.residuals

        def diff(a, b):
            return math.fsum([m[b], r.get(b, 0.0), -m[a], -r.get(a, 0.0)])

        return IntervalSet(cc2=diff(L.T2, L.T3), cc3=diff(L.T4, L.T5), s2=diff(L.T3, L.T4), s3=diff(L.T5, L.T8))


def shift_model(mixture: ActMixture, d: float) -> tuple[ActMixture, dict[ActLabel, float]]:
    shifted = mixture.shifted(d)
    residuals = {k: two_sum(c.mean, d)[1] for k, c in mixture.components.items()}
    return shifted, residuals


@dataclass
class CtpReport:
    times: dict[ActLabel, TimeValue]
    irc: bool = False
    errors: Optional[dict[ActLabel, Union[float, str]]] = None
    embryo_id: str = ""

    def rows(self) -> list[tuple[str, str, str]]:
        out = []
        for label in ALL_LABELS:
            v = self.times.get(label, Absence.NA)
            hours = f"{v:.2f}" if is_time(v) else str(v)
            err = ""
            if self.errors is not None:
                e = self.errors.get(label, "n/a")
                err = f"{e:.2f}" if isinstance(e, float) else str(e)
            out.append((label.value, hours, err))
        return out


def segment_count_label(count: int) -> Optional[ActLabel]:
    """Label implied by a blastomere count; ``None`` for one cell (tPNa/tPNf undecidable)."""
    if count < 1:
        raise ValidationError("blastomere count must be >= 1")
    if count == 1:
        return None
    return (L.T2, L.T3, L.T4, L.T5, L.T6, L.T7, L.T8)[min(count, 8) - 2]


def t67_surrogates(mixture: ActMixture) -> dict[ActLabel, GaussianComponent]:
    """t6/t7 pseudo-modes at 1/3 and 2/3 of the way from t5 to t8."""
    c5, c8 = mixture[L.T5], mixture[L.T8]
    std = (c5.std + c8.std) / 2.0
    span = c8.mean - c5.mean
    return {
        L.T6: GaussianComponent(c5.mean + span / 3.0, std),
        L.T7: GaussianComponent(c5.mean + 2.0 * span / 3.0, std),
    }


def label_density(label, rel_time: float, mixture: ActMixture) -> float:
    if label == MERGED_T67:
        return max(label_density(L.T6, rel_time, mixture), label_density(L.T7, rel_time, mixture))
    label = L(label)
    if label in EM_MODES:
        return gaussian_pdf(rel_time, mixture[label])
    if label in (L.T6, L.T7):
        return gaussian_pdf(rel_time, t67_surrogates(mixture)[label])
    # one-cell pseudo-mode at the tPNf reference with the t2 spread
    return gaussian_pdf(rel_time, GaussianComponent(0.0, mixture[L.T2].std))


def _pick_t67(rel_time, mixture) -> ActLabel:
    return L.T6 if label_density(L.T6, rel_time, mixture) >= label_density(L.T7, rel_time, mixture) else L.T7


def arbitrate(classifier, seg_label: Optional[ActLabel], rel_time: float, mixture: ActMixture) -> tuple[ActLabel, Source]:
    """Fuse the two label channels for one frame.

    ``seg_label`` is None for a one-cell frame. t6 and t7 follow the segment
    count (the classifier cannot separate them and tends to call them t8);
    other conflicts go to the label whose mode density at ``rel_time`` is
    larger, ties to the segmentor.
    """
    if classifier is None:
        return (seg_label or L.TPNF), Source.COUNT_ONLY
    if seg_label is None:
        if classifier in ONE_CELL:
            return L(classifier), Source.CONSISTENT
        seg_label = L.TPNF
    elif classifier == MERGED_T67:
        # the merged class is a deferral to the count
        return seg_label, (Source.CONSISTENT if seg_label in (L.T6, L.T7) else Source.SEGMENTOR)
    if classifier == seg_label:
        return seg_label, Source.CONSISTENT
    if seg_label in (L.T6, L.T7):
        return seg_label, Source.SEGMENTOR
    c_label = _pick_t67(rel_time, mixture) if classifier == MERGED_T67 else L(classifier)
    dc = label_density(c_label, rel_time, mixture)
    ds = label_density(seg_label, rel_time, mixture)
    if dc > ds:
        return c_label, Source.CLASSIFIER
    return seg_label, Source.SEGMENTOR


def calibrate(t_i_abs: float, tpnf_abs: float, anchor, mixture: ActMixture) -> CalibratedMeans:
    """Shift every mode by D = (t_i - tPNf) - mean(anchor)."""
    try:
        anchor = L(anchor)
    except ValueError as exc:
        raise AnchorMissing(f"unknown anchor {anchor!r}") from exc
    if anchor not in EM_MODES:
        raise AnchorMissing(f"anchor must be one of the EM modes, got {anchor}")
    r = relative_time(t_i_abs, tpnf_abs)
    d = r - mixture[anchor].mean
    return CalibratedMeans(anchor, d, *shift_model(mixture, d))


def find_tpnf(frames: Sequence[FrameObservation]) -> int:
    """Index of the tPNf frame.

    The tPNa -> tPNf switch point is the split that disagrees with the fewest
    classifier labels (tPNf before it, tPNa after it); the tPNf frame is the
    first one-cell frame labelled tPNf at or after that split.
    """
    labels = [f.classifier_label for f in frames]
    is_f = np.array([lab == L.TPNF for lab in labels], dtype=int)
    is_a = np.array([lab == L.TPNA for lab in labels], dtype=int)
    if not is_f.any():
        raise NoPnfFound("no frame labelled tPNf")
    # cost[s] = tPNf labels before s + tPNa labels from s on
    cost = np.concatenate([[0], np.cumsum(is_f)]) + np.concatenate([np.cumsum(is_a[::-1])[::-1], [0]])
    for split in np.argsort(cost, kind="stable"):
        for i in range(int(split), len(frames)):
            if is_f[i] and frames[i].count == 1:
                return i
    raise NoPnfFound("no frame labelled tPNf with a single blastomere")


def _seg(frame: FrameObservation) -> Optional[ActLabel]:
    return segment_count_label(frame.count) if frame.count >= 1 else None


def find_anchor(frames: Sequence[FrameObservation], tpnf_idx: int) -> tuple[int, ActLabel, Source]:
    """First post-tPNf frame where both channels agree on an EM-mode label.

    The agreement must not be contradicted by the next frame (its count or
    its classifier label must not fall back below the anchor label). Falls
    back to the first count change when the channels never agree.
    """
    for i in range(tpnf_idx + 1, len(frames)):
        f = frames[i]
        s = _seg(f)
        if s is None or s not in EM_MODES or f.classifier_label != s:
            continue
        if i + 1 < len(frames):
            nxt = frames[i + 1]
            ns = _seg(nxt)
            nc = nxt.classifier_label
            if not ((ns is not None and ns >= s) or nc == s):
                continue
        return i, s, Source.CONSISTENT
    for i in range(tpnf_idx + 1, len(frames)):
        s = _seg(frames[i])
        if s is not None and s in EM_MODES:
            return i, s, Source.COUNT_ONLY
    raise AnchorMissing("no post-tPNf frame with an EM-mode label")


# per-frame votes in the monotone fit; ties between the two channels go to the count
SEGMENT_VOTE = 1.0
CLASSIFIER_VOTE = 0.5
ARBITER_VOTE = 0.5


def monotone_fit(cost: np.ndarray) -> list[int]:
    """Non-decreasing level sequence of minimum total cost.

    ``cost[i, k]`` is the price of level ``k`` at frame ``i``. Ties prefer the
    smaller level, so transitions are placed as late as the data allow.
    """
    cost = np.asarray(cost, dtype=float)
    n, k = cost.shape
    if n == 0:
        return []
    acc = cost[0].copy()
    back = np.zeros((n, k), dtype=int)
    for i in range(1, n):
        # best predecessor level <= k, first minimum on ties
        best = np.minimum.accumulate(acc)
        arg = np.zeros(k, dtype=int)
        for j in range(1, k):
            arg[j] = arg[j - 1] if acc[arg[j - 1]] <= acc[j] else j
        acc = best + cost[i]
        back[i] = arg
    level = int(np.argmin(acc))
    out = [0] * n
    for i in range(n - 1, -1, -1):
        out[i] = level
        level = back[i, level]
    return out


def _frame_cost(f: FrameObservation, arbitrated: ActLabel) -> np.ndarray:
    levels = np.arange(len(ALL_LABELS))
    cost = ARBITER_VOTE * (levels != arbitrated.order)
    if f.count:
        seg = _seg(f)
        ok = np.isin(levels, [L.TPNA.order, L.TPNF.order]) if seg is None else levels == seg.order
        cost = cost + SEGMENT_VOTE * ~ok
    cls = f.classifier_label
    if cls == MERGED_T67:
        cost = cost + CLASSIFIER_VOTE * ~np.isin(levels, [L.T6.order, L.T7.order])
    elif cls is not None:
        cost = cost + CLASSIFIER_VOTE * (levels != L(cls).order)
    return cost


def resolve_sequence(frames: Sequence[FrameObservation], mixture: ActMixture, smooth: bool = True) -> tuple[list[ResolvedFrame], CalibratedMeans]:
    """Label every frame and return the per-embryo calibrated model.

    Frames before tPNf are tPNa. After it each frame is arbitrated, then the
    label sequence is made non-decreasing by a minimum-cost fit in which every
    frame votes with its segment count, its classifier label and its
    arbitrated label.
    """
    frames = list(frames)
    check_frame_order(frames)
    ip = find_tpnf(frames)
    tpnf_abs = frames[ip].time_hours
    ia, anchor, _ = find_anchor(frames, ip)
    cal = calibrate(frames[ia].time_hours, tpnf_abs, anchor, mixture)

    labels: list[ActLabel] = []
    sources: list[Source] = []
    for i, f in enumerate(frames):
        if i < ip:
            labels.append(L.TPNA)
            sources.append(Source.CONSISTENT if f.classifier_label == L.TPNA else Source.COUNT_ONLY)
        elif i == ip:
            labels.append(L.TPNF)
            sources.append(Source.CONSISTENT)
        elif f.count == 0:
            cls = f.classifier_label
            labels.append(L(cls) if cls not in (None, MERGED_T67) else labels[-1])
            sources.append(Source.CLASSIFIER)
        else:
            lab, src = arbitrate(f.classifier_label, _seg(f), relative_time(f.time_hours, tpnf_abs), cal.mixture)
            labels.append(L.TPNF if lab == L.TPNA else lab)
            sources.append(src)

    if smooth:
        cost = np.array([_frame_cost(f, lab) for f, lab in zip(frames[ip:], labels[ip:])])
        cost[:, : L.TPNF.order] = np.inf
        cost[0] = np.inf
        cost[0, L.TPNF.order] = 0.0
        fitted = [ALL_LABELS[k] for k in monotone_fit(cost)]
        for j, lab in enumerate(fitted, start=ip):
            if lab != labels[j]:
                f = frames[j]
                sources[j] = Source.SEGMENTOR if f.count and _seg(f) == lab else Source.CLASSIFIER
                labels[j] = lab
    resolved = [ResolvedFrame(f.frame_index, f.time_hours, lab, src) for f, lab, src in zip(frames, labels, sources)]
    return resolved, cal


def _first_times(seq: Sequence[tuple[float, ActLabel]]) -> dict[ActLabel, TimeValue]:
    times: dict[ActLabel, TimeValue] = {}
    for t, lab in seq:
        if lab not in times:
            times[lab] = t
    reached = [lab for lab in ALL_LABELS if lab in times]
    last = max(reached, key=lambda x: x.order) if reached else None
    out: dict[ActLabel, TimeValue] = {}
    for lab in ALL_LABELS:
        if lab in times:
            out[lab] = times[lab]
        elif last is not None and lab < last:
            out[lab] = Absence.PASS
        else:
            out[lab] = Absence.NA
    return out


def timeline(resolved: Sequence[ResolvedFrame], irc: Optional[bool] = None) -> CtpReport:
    """Absolute time of the first frame of every label; pass if skipped, n/a if never reached."""
    times = _first_times([(r.time_hours, r.label) for r in resolved])
    if irc is None:
        irc = times[L.T2] == Absence.PASS and is_time(times[L.T4])
    return CtpReport(times, bool(irc))


def report_frames(report: CtpReport) -> list[ResolvedFrame]:
    """One resolved frame per timed label; feeding these to :func:`timeline` reproduces ``report``."""
    timed = sorted(((v, k) for k, v in report.times.items() if is_time(v)), key=lambda p: (p[0], p[1].order))
    return [ResolvedFrame(i, t, lab, Source.CONSISTENT) for i, (t, lab) in enumerate(timed)]


def count_only_timeline(frames: Sequence[FrameObservation]) -> CtpReport:
    """Baseline without arbitration or calibration: segment count alone."""
    seq = []
    for f in frames:
        if f.count == 0:
            continue
        lab = segment_count_label(f.count)
        seq.append((f.time_hours, lab or L.TPNF))
    return CtpReport(_first_times(seq))


def percent_error(pred: float, gt: float) -> float:
    return 100.0 * abs(pred - gt) / gt


def error_report(pred: CtpReport, gt) -> dict[ActLabel, Union[float, str]]:
    """Per-label 100*|pred - gt|/gt; categorical outcome when either side has no time."""
    gt_times = gt.times if hasattr(gt, "times") else gt
    out: dict[ActLabel, Union[float, str]] = {}
    for lab in ALL_LABELS:
        p = pred.times.get(lab, Absence.NA)
        g = gt_times.get(lab, Absence.NA)
        if is_time(p) and is_time(g):
            out[lab] = percent_error(p, g)
        elif not is_time(p) and not is_time(g):
            out[lab] = "n/a"
        else:
            out[lab] = f"mismatch ({p} vs {g})"
    return out


def timing_errors(pred: CtpReport, gt, labels: Sequence[ActLabel] = CLEAVAGE_LABELS) -> tuple[list[float], int]:
    """Absolute hour errors where both sides are timed, plus the count of categorical mismatches."""
    gt_times = gt.times if hasattr(gt, "times") else gt
    errs, mismatches = [], 0
    for lab in labels:
        p, g = pred.times.get(lab, Absence.NA), gt_times.get(lab, Absence.NA)
        if is_time(p) and is_time(g):
            errs.append(abs(p - g))
        elif is_time(p) != is_time(g) or p != g:
            mismatches += 1
    return errs, mismatches


def feedback_update(mixture: ActMixture, confirmed: Sequence[tuple[float, float]]) -> ActMixture:
    """Shift all modes by the mean offset of confirmed (tPNf, t2) absolute pairs from the t2 mode."""
    if not confirmed:
        return mixture
    offsets = [relative_time(t2, tpnf) - mixture[L.T2].mean for tpnf, t2 in confirmed]
    d = float(np.mean(offsets))
    if d == 0.0:
        return mixture
    return mixture.shifted(d)


def predict(frames: Sequence[FrameObservation], mixture: ActMixture, irc: Optional[bool] = None, gt=None) -> tuple[CtpReport, CalibratedMeans]:
    resolved, cal = resolve_sequence(frames, mixture)
    report = timeline(resolved, irc)
    if gt is not None:
        report.errors = error_report(report, gt)
    return report, cal
