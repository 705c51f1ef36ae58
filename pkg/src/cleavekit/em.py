"""Local EM fitting of the five-mode cleavage-time mixture.

Samples are unlabeled tPNf-relative hours pooled over t2, t3, t4, t5 and t8.
After convergence the components are sorted by mean and named in cleavage
order; the t3 mode used downstream is then replaced by a surrogate derived
from t4 (see :func:`derive_t3`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import EM_MODES, ActLabel, ActMixture, GaussianComponent, gaussian_logpdf
from .errors import NumericalUnderflow, TooFewSamples, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 500
    loglik_tol: float = 1e-6
    min_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not self.loglik_tol > 0:
            raise ValidationError("loglik_tol must be > 0")
        if not self.min_std > 0:
            raise ValidationError("min_std must be > 0")


@dataclass
class EmTrace:
    loglik: list[float] = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValidationError("samples must be finite")
    return x


def _params(components: Sequence[GaussianComponent]):
    mu = np.array([c.mean for c in components])
    sd = np.array([c.std for c in components])
    w = np.array([c.weight for c in components])
    return mu, sd, w


def init_components(samples, k: int = 5, min_std: float = 0.05) -> list[GaussianComponent]:
    """Split the sorted samples into ``k`` equal-count groups and take each group's moments."""
    x = _as_samples(samples)
    if len(x) < k:
        raise TooFewSamples(f"need at least {k} samples, got {len(x)}")
    groups = np.array_split(np.sort(x), k)
    return [GaussianComponent(float(g.mean()), max(float(g.std()), min_std), 1.0 / k) for g in groups]


def _log_weighted(x, mu, sd, w) -> np.ndarray:
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return gaussian_logpdf(x[:, None], mu[None, :], sd[None, :]) + logw[None, :]


def log_likelihood(samples, components) -> float:
    x = _as_samples(samples)
    return float(logsumexp(_log_weighted(x, *_params(components)), axis=1).sum())


def e_step(samples, components) -> np.ndarray:
    """Posterior membership probabilities, shape (n, k); rows sum to one."""
    x = _as_samples(samples)
    with np.errstate(over="ignore"):
        lw = _log_weighted(x, *_params(components))
    norm = logsumexp(lw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalUnderflow("a sample has zero density under every component")
    return np.exp(lw - norm)


def m_step(samples, responsibilities, min_std: float = 0.05) -> list[GaussianComponent]:
    x = _as_samples(samples)
    r = np.asarray(responsibilities, dtype=float)
    n, k = r.shape
    nk = r.sum(axis=0)
    if np.any(nk < 1e-12):
        r = r.copy()
        for j in np.flatnonzero(nk < 1e-12):
            # re-seed an empty component at the worst-explained sample
            covered = r.sum(axis=1)
            i = int(np.argmin(covered)) if np.ptp(covered) > 0 else int(np.argmax(np.abs(x - x.mean())))
            log.warning("EM component %d emptied; re-seeding at sample %.4f", j, x[i])
            r[i, :] = 0.0
            r[i, j] = 1.0
        nk = r.sum(axis=0)
    mu = (r * x[:, None]).sum(axis=0) / nk
    var = (r * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
    sd = np.maximum(np.sqrt(var), min_std)
    w = nk / n
    w = w / w.sum()
    return [GaussianComponent(float(m), float(s), float(wt)) for m, s, wt in zip(mu, sd, w)]


def run_em(samples, components, config: EmConfig) -> tuple[list[GaussianComponent], EmTrace]:
    """Iterate E/M steps from ``components`` until the log-likelihood settles."""
    x = _as_samples(samples)
    trace = EmTrace()
    comps = list(components)
    prev = log_likelihood(x, comps)
    trace.loglik.append(prev)
    for it in range(config.max_iters):
        comps = m_step(x, e_step(x, comps), config.min_std)
        cur = log_likelihood(x, comps)
        trace.loglik.append(cur)
        trace.iterations_run = it + 1
        if abs(cur - prev) < config.loglik_tol:
            trace.converged = True
            break
        prev = cur
    return comps, trace


def derive_t3(t4: GaussianComponent, min_std: float = 0.05) -> GaussianComponent:
    """t3 surrogate: mean one t4 std before t4, half of t4's spread."""
    return GaussianComponent(t4.mean - t4.std, max(t4.std / 2.0, min_std), t4.weight)


def _fit_t3_submixture(x, comps, config):
    members = x[np.argmax(e_step(x, comps), axis=1) == 1]
    if len(members) < 2 or np.ptp(members) == 0:
        return None
    sub, _ = run_em(members, init_components(members, 2, config.min_std), config)
    return tuple(sorted(sub, key=lambda c: c.mean))


def fit(samples, config: EmConfig | None = None) -> tuple[ActMixture, EmTrace]:
    """Fit the five-mode mixture to pooled relative cleavage times.

    Raises ``TooFewSamples`` below five samples and ``ValidationError`` when
    the fit is degenerate: BIC prefers a single Gaussian, or the modes (with
    the derived t3) are not in strictly increasing order.
    """
    config = config or EmConfig()
    x = _as_samples(samples)
    k = len(EM_MODES)
    if len(x) < k:
        raise TooFewSamples(f"need at least {k} samples, got {len(x)}")
    comps, trace = run_em(x, init_components(x, k, config.min_std), config)
    comps = sorted(comps, key=lambda c: c.mean)
    # a five-mode fit that BIC does not prefer over one Gaussian is degenerate
    n = len(x)
    one = [GaussianComponent(float(x.mean()), max(float(x.std()), config.min_std))]
    delta_bic = 2.0 * (log_likelihood(x, one) - log_likelihood(x, comps)) + (3 * k - 1 - 2) * np.log(n)
    if delta_bic >= 0:
        raise ValidationError(f"degenerate EM fit: five modes not supported over a single Gaussian (dBIC={delta_bic:.1f})")
    if not trace.converged:
        log.info("EM stopped after %d iterations without meeting tol %g", trace.iterations_run, config.loglik_tol)
    named = dict(zip(EM_MODES, comps))
    fitted_t3 = named[ActLabel.T3]
    named[ActLabel.T3] = derive_t3(named[ActLabel.T4], config.min_std)
    named[ActLabel.T3] = GaussianComponent(named[ActLabel.T3].mean, named[ActLabel.T3].std, fitted_t3.weight)
    try:
        sub = _fit_t3_submixture(x, comps, config)
        mixture = ActMixture(named, sub, fitted_t3)
    except ValidationError as exc:
        raise ValidationError(f"degenerate EM fit: {exc}") from exc
    return mixture, trace


def label_samples(samples, mixture: ActMixture) -> list[ActLabel]:
    """Most probable mode for each sample under ``mixture``."""
    x = _as_samples(samples)
    comps = list(mixture.components.values())
    idx = np.argmax(e_step(x, comps), axis=1)
    return [EM_MODES[i] for i in idx]
