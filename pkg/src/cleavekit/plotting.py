"""Figures for the ``report`` command."""
from __future__ import annotations

from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import ActMixture, gaussian_pdf  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "cleavekit",
    "svg.fonttype": "none",
}

MODE_COLORS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e")


def plot_mixture(mixture: ActMixture, path, samples: Optional[Sequence[float]] = None, title: str = "ACT distribution"):
    """Five mode densities over tPNf-relative hours, optionally over a sample histogram."""
    lo = min(c.mean - 4 * c.std for c in mixture.components.values())
    hi = max(c.mean + 4 * c.std for c in mixture.components.values())
    x = np.linspace(min(lo, 0.0), hi, 800)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.2))
        if samples is not None and len(samples):
            ax.hist(samples, bins=60, density=True, color="0.85", edgecolor="none", label="samples")
        for (label, comp), color in zip(mixture.components.items(), MODE_COLORS):
            ax.plot(x, comp.weight * gaussian_pdf(x, comp), color=color, lw=1.4,
                    label=f"{label.value}  μ={comp.mean:.2f} σ={comp.std:.2f}")
        if mixture.t3_fitted is not None:
            c = mixture.t3_fitted
            ax.plot(x, c.weight * gaussian_pdf(x, c), color=MODE_COLORS[1], lw=1.0, ls="--", label="t3 (fitted)")
        ax.set_xlabel("hours after tPNf")
        ax.set_ylabel("density")
        ax.set_title(title)
        ax.legend(frameon=False, loc="upper right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
