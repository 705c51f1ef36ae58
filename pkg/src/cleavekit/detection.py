"""Segmentor post-processing and classifier cascade routing.

The trained detectors are out of scope; these functions operate on whatever
masks and labels a provider (or the synthetic generator) supplies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import math

from .core import MERGED_T67, ActLabel, MaskRegion
from .errors import MissingSubLabel, ValidationError
from .raster import DEFAULT_IMAGE_SIZE, DEFAULT_SUPERSAMPLE, bbox, subsample_mask, union_window

DEFAULT_IOU_THRESHOLD = 0.65


@dataclass(frozen=True)
class ScoredCandidate:
    mask: MaskRegion
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValidationError("candidate score must be finite")


def iou(a: MaskRegion, b: MaskRegion, image_size: int = DEFAULT_IMAGE_SIZE, supersample: int = DEFAULT_SUPERSAMPLE) -> float:
    """Intersection over union of the two rasterized masks."""
    ba, bb = bbox(a.contour, image_size), bbox(b.contour, image_size)
    if ba[0] >= bb[2] or bb[0] >= ba[2] or ba[1] >= bb[3] or bb[1] >= ba[3]:
        return 0.0
    window = union_window([ba, bb])
    ma = subsample_mask(a.contour, window, supersample)
    mb = subsample_mask(b.contour, window, supersample)
    union = int((ma | mb).sum())
    if union == 0:
        return 0.0
    return int((ma & mb).sum()) / union


def nms(cands: Sequence[ScoredCandidate], iou_threshold: float = DEFAULT_IOU_THRESHOLD, image_size: int = DEFAULT_IMAGE_SIZE) -> list[ScoredCandidate]:
    """Greedy non-maximum suppression.

    Candidates are visited by descending score (ties by centroid); one is
    dropped when its IoU with an already kept candidate exceeds the threshold.
    """
    if not 0 < iou_threshold <= 1:
        raise ValidationError(f"iou threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(cands, key=lambda c: (-c.score, c.mask.centroid))
    kept: list[ScoredCandidate] = []
    for cand in order:
        if all(iou(cand.mask, k.mask, image_size) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


_STAGE_ALIASES = {"1": 1, "2": 2, "4": 4, "8": 8}
_SUBLABELS = {
    1: (ActLabel.TPNA, ActLabel.TPNF),
    4: (ActLabel.T3, ActLabel.T4),
    8: (ActLabel.T5, MERGED_T67, ActLabel.T8),
}


def _stage(stage) -> int:
    if isinstance(stage, int) and stage in (1, 2, 4, 8):
        return stage
    key = str(stage).lower().replace("-cell", "").replace("cell", "").strip()
    if key not in _STAGE_ALIASES:
        raise ValidationError(f"unknown cell stage {stage!r}")
    return _STAGE_ALIASES[key]


def _sub(label):
    if label is None:
        return None
    if isinstance(label, (tuple, list)) and {str(x) for x in label} == {"t6", "t7"}:
        return MERGED_T67
    if str(label).replace(" ", "").strip("()") in ("t6,t7", "t6/t7"):
        return MERGED_T67
    return ActLabel.parse(label)


def route_cascade(stage_label, sub_label=None) -> Union[ActLabel, str]:
    """Combine the stage classifier with the per-stage sub-classifier output.

    Returns an ``ActLabel``, or ``MERGED_T67`` when the 8-cell sub-classifier
    reports the joint (t6, t7) class; that case is settled by segment count.
    """
    stage = _stage(stage_label)
    if stage == 2:
        return ActLabel.T2
    sub = _sub(sub_label)
    if sub is None:
        raise MissingSubLabel(f"{stage}-cell stage needs a sub-classifier label")
    if sub not in _SUBLABELS[stage]:
        raise ValidationError(f"sub-label {sub} is not produced at the {stage}-cell stage")
    return sub


def cascade_stage(label: Union[ActLabel, str]) -> tuple[int, Optional[Union[ActLabel, str]]]:
    """Inverse of :func:`route_cascade`: the (stage, sub-label) that yields ``label``."""
    if label == MERGED_T67 or label in (ActLabel.T6, ActLabel.T7):
        return 8, MERGED_T67
    label = ActLabel(label)
    if label == ActLabel.T2:
        return 2, None
    for stage, subs in _SUBLABELS.items():
        if label in subs:
            return stage, label
    raise ValidationError(f"no cascade path for {label}")
