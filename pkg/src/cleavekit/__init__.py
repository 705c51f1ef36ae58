"""Federated EM calibration, lineage tracking and cleavage timing prediction."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Absence,
    ActLabel,
    ActMixture,
    FrameObservation,
    GaussianComponent,
    IntervalSet,
    MaskRegion,
    gaussian_pdf,
    intervals,
    reference_mixture,
    relative_time,
)
from .em import EmConfig, fit  # noqa: E402

__all__ = [
    "Absence",
    "ActLabel",
    "ActMixture",
    "EmConfig",
    "FrameObservation",
    "GaussianComponent",
    "IntervalSet",
    "MaskRegion",
    "fit",
    "gaussian_pdf",
    "intervals",
    "reference_mixture",
    "relative_time",
]
