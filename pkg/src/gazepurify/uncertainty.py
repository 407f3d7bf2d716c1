"""Triplet-label consistency metrics and mixture-based confidence scores.

For each sample we measure the pairwise angular distances among its training
label, its predicted (pseudo) label, and its neighboring label. Two scalar
metrics summarize them:

* label inconsistency: min(d_pg, d_ng) / (d_pn + epsilon) — large when the
  training label disagrees with both other labels while those two agree;
* image inconsistency: min(d_pg, d_pn, d_ng) — large only when all three
  labels disagree pairwise, the signature of an uninformative input.

A two-component 1-D Gaussian mixture is fitted to each metric over the whole
training set; a sample's confidence is the posterior probability of the
lower-mean (reliable) component at its metric value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGmmError
from .geometry import GazeLabel, angular_distance_deg, angular_distance_deg_array

__all__ = [
    "TripletDistances",
    "UncertaintyConfig",
    "GmmFit",
    "ConfidencePair",
    "ConfidenceResult",
    "triplet_distances",
    "triplet_distances_arrays",
    "tuple_md",
    "triple_md",
    "fit_gmm_1d",
    "posterior_reliable",
    "confidences",
]

logger = logging.getLogger(__name__)

MAX_EM_ITERATIONS = 200
LL_TOLERANCE = 1e-6
VARIANCE_FLOOR = 1e-6
# Below this separation (relative to the value range) the mixture is treated
# as unimodal and every sample is considered reliable.
UNIMODAL_MEAN_GAP = 1e-3


@dataclass(frozen=True)
class TripletDistances:
    """Pairwise angular distances in degrees: pseudo-truth (pg),
    pseudo-neighboring (pn), neighboring-truth (ng)."""

    d_pg: float
    d_pn: float
    d_ng: float


@dataclass
class UncertaintyConfig:
    epsilon: float = 1.0

    def validate(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def triplet_distances(y: GazeLabel, y_p: GazeLabel, y_n: GazeLabel) -> TripletDistances:
    return TripletDistances(
        d_pg=angular_distance_deg(y_p, y),
        d_pn=angular_distance_deg(y_p, y_n),
        d_ng=angular_distance_deg(y_n, y),
    )


def triplet_distances_arrays(
    y: np.ndarray, y_p: np.ndarray, y_n: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (d_pg, d_pn, d_ng) for (N, 2) label arrays."""
    return (
        angular_distance_deg_array(y_p, y),
        angular_distance_deg_array(y_p, y_n),
        angular_distance_deg_array(y_n, y),
    )


def tuple_md(d: TripletDistances, epsilon: float = 1.0) -> float:
    """Label-inconsistency metric: min(d_pg, d_ng) / (d_pn + epsilon)."""
    return min(d.d_pg, d.d_ng) / (d.d_pn + epsilon)


def triple_md(d: TripletDistances) -> float:
    """Image-inconsistency metric: min over all three pairwise distances."""
    return min(d.d_pg, d.d_pn, d.d_ng)


def tuple_md_array(d_pg, d_pn, d_ng, epsilon: float = 1.0) -> np.ndarray:
    return np.minimum(d_pg, d_ng) / (np.asarray(d_pn) + epsilon)


def triple_md_array(d_pg, d_pn, d_ng) -> np.ndarray:
    return np.minimum(np.minimum(d_pg, d_pn), d_ng)


@dataclass
class GmmFit:
    """Two-component 1-D Gaussian mixture. ``reliable_component`` indexes the
    component with the smaller mean."""

    means: np.ndarray
    variances: np.ndarray
    mixing_weights: np.ndarray
    reliable_component: int
    converged: bool
    iterations: int
    log_likelihoods: list[float] = field(default_factory=list)


def _log_densities(fit_means, fit_vars, fit_weights, values: np.ndarray) -> np.ndarray:
    # (N, 2) of log(pi_c) + log N(v; mu_c, var_c)
    v = values[:, None]
    return (
        np.log(fit_weights)[None, :]
        - 0.5 * np.log(2.0 * np.pi * fit_vars)[None, :]
        - 0.5 * (v - fit_means[None, :]) ** 2 / fit_vars[None, :]
    )


def fit_gmm_1d(values, seed: int = 0) -> GmmFit:
    """EM fit of a two-component mixture to 1-D data.

    Initialization is deterministic (means at the 10th/90th percentiles,
    shared variance, equal mixing weights), so the fit does not depend on
    ``seed``; the parameter is kept for interface stability. Raises
    :class:`DegenerateGmmError` when fewer than two distinct finite values
    are supplied.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2 or not np.all(np.isfinite(values)):
        raise DegenerateGmmError("need at least 2 finite values")
    if np.unique(values).size < 2:
        raise DegenerateGmmError("need at least 2 distinct values")

    means = np.percentile(values, [10.0, 90.0]).astype(float)
    if means[0] == means[1]:
        means = np.array([values.min(), values.max()], dtype=float)
    variances = np.full(2, max(values.var(), VARIANCE_FLOOR))
    weights = np.array([0.5, 0.5])

    log_likelihoods: list[float] = []
    converged = False
    iterations = 0
    for _ in range(MAX_EM_ITERATIONS):
        logd = _log_densities(means, variances, weights, values)
        m = logd.max(axis=1, keepdims=True)
        log_norm = m[:, 0] + np.log(np.exp(logd - m).sum(axis=1))
        ll = float(log_norm.sum())
        resp = np.exp(logd - log_norm[:, None])

        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        new_means = resp.T @ values / nk
        new_vars = (resp * (values[:, None] - new_means[None, :]) ** 2).sum(axis=0) / nk
        new_vars = np.maximum(new_vars, VARIANCE_FLOOR)
        new_weights = nk / values.size
        new_weights = new_weights / new_weights.sum()

        means, variances, weights = new_means, new_vars, new_weights
        iterations += 1
        if log_likelihoods and ll - log_likelihoods[-1] < LL_TOLERANCE:
            log_likelihoods.append(ll)
            converged = True
            break
        log_likelihoods.append(ll)

    return GmmFit(
        means=means,
        variances=variances,
        mixing_weights=weights,
        reliable_component=int(np.argmin(means)),
        converged=converged,
        iterations=iterations,
        log_likelihoods=log_likelihoods,
    )


def posterior_reliable(fit: GmmFit, value) -> np.ndarray | float:
    """Posterior probability of the reliable (smaller-mean) component.

    Computed in log space so values far in both tails still yield the correct
    limit instead of 0/0.
    """
    values = np.atleast_1d(np.asarray(value, dtype=float))
    logd = _log_densities(fit.means, fit.variances, fit.mixing_weights, values)
    m = logd.max(axis=1, keepdims=True)
    norm = np.exp(logd - m)
    post = norm[:, fit.reliable_component] / norm.sum(axis=1)
    if np.isscalar(value) or np.asarray(value).ndim == 0:
        return float(post[0])
    return post


@dataclass(frozen=True)
class ConfidencePair:
    label_confidence: float
    image_confidence: float


@dataclass
class ConfidenceResult:
    label_confidence: np.ndarray
    image_confidence: np.ndarray
    label_fit: GmmFit | None
    image_fit: GmmFit | None
    label_degenerate: bool
    image_degenerate: bool

    @property
    def pairs(self) -> list[ConfidencePair]:
        return [
            ConfidencePair(float(l), float(i))
            for l, i in zip(self.label_confidence, self.image_confidence)
        ]


def _confidence_for_metric(values: np.ndarray, name: str) -> tuple[np.ndarray, GmmFit | None, bool]:
    try:
        fit = fit_gmm_1d(values)
    except DegenerateGmmError:
        logger.info("%s metric degenerate; treating all samples as reliable", name)
        return np.ones(values.size), None, True
    gap = abs(fit.means[0] - fit.means[1])
    spread = values.max() - values.min()
    if gap < UNIMODAL_MEAN_GAP * spread:
        logger.info(
            "%s mixture collapsed (mean gap %.3g); treating all samples as reliable",
            name,
            gap,
        )
        return np.ones(values.size), fit, True
    return np.asarray(posterior_reliable(fit, values)), fit, False


def confidences(metrics_tuple, metrics_triple, seed: int = 0) -> ConfidenceResult:
    """Fit one mixture per metric over the training set and evaluate
    per-sample posteriors. A degenerate or collapsed fit falls back to
    confidence 1 for every sample on that metric only."""
    metrics_tuple = np.asarray(metrics_tuple, dtype=float).ravel()
    metrics_triple = np.asarray(metrics_triple, dtype=float).ravel()
    if metrics_tuple.size != metrics_triple.size:
        raise ValueError("metric lists must have equal length")
    label_conf, label_fit, label_deg = _confidence_for_metric(metrics_tuple, "label")
    image_conf, image_fit, image_deg = _confidence_for_metric(metrics_triple, "image")
    return ConfidenceResult(
        label_confidence=label_conf,
        image_confidence=image_conf,
        label_fit=label_fit,
        image_fit=image_fit,
        label_degenerate=label_deg,
        image_degenerate=image_deg,
    )
