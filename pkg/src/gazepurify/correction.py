"""Confidence truncation, corrected-label composition, and sample weights.

Confidences at or below the threshold are truncated to zero. A sample's
corrected label blends its training label with the mean of a family of
pseudo labels, weighted by the truncated label confidence; the truncated
image confidence becomes the sample's loss weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GazeLabel, flip_label_array
from .neighbors import NeighborSet, combine_neighbor_values

__all__ = [
    "CorrectionConfig",
    "CorrectedBatch",
    "PseudoLabelFamily",
    "truncate",
    "truncate_array",
    "pseudo_label_family",
    "corrected_label",
    "blend_labels",
    "build_corrected_batch",
]

# How the corrected label's pseudo part is composed. "full" averages all five
# pseudo labels; "subset" drops the flip-augmented and neighbor-projected
# variants; "pair" has no neighbor machinery at all; "none" disables
# correction (corrected label = training label).
COMPOSITIONS = ("full", "subset", "pair", "none")


@dataclass
class CorrectionConfig:
    tau_label: float = 0.5
    tau_image: float = 0.5

    def validate(self) -> None:
        for name in ("tau_label", "tau_image"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass
class CorrectedBatch:
    corrected_labels: np.ndarray
    sample_weights: np.ndarray
    truncated_label_conf: np.ndarray
    truncated_image_conf: np.ndarray


@dataclass
class PseudoLabelFamily:
    """Per-sample (N, 2) pseudo-label variants: the prediction, the
    flip-augmented prediction, and their neighbor-weighted projections."""

    pseudo: np.ndarray
    pseudo_aug: np.ndarray
    neighbor_pseudo: np.ndarray
    neighbor_pseudo_aug: np.ndarray


def truncate(conf: float, tau: float) -> float:
    """Zero out a confidence unless it strictly exceeds the threshold."""
    return conf if conf > tau else 0.0


def truncate_array(conf: np.ndarray, tau: float) -> np.ndarray:
    conf = np.asarray(conf, dtype=float)
    return np.where(conf > tau, conf, 0.0)


def pseudo_label_family(
    inputs: np.ndarray,
    flipped_inputs: np.ndarray,
    regressor,
    neighbor_sets: list[NeighborSet] | None,
    row_of_id: dict[int, int] | None,
) -> PseudoLabelFamily:
    """Evaluate the four model-derived pseudo-label variants for all samples.

    The flip-augmented prediction runs the regressor on the flipped input and
    mirrors the resulting yaw back. Neighbor projections reuse the
    reconstruction weights; with ``neighbor_sets=None`` they degenerate to
    the unprojected variants (used when neighboring is disabled).
    """
    pseudo = regressor.predict(inputs)
    pseudo_aug = flip_label_array(regressor.predict(flipped_inputs))
    if neighbor_sets is None:
        neighbor_pseudo = pseudo.copy()
        neighbor_pseudo_aug = pseudo_aug.copy()
    else:
        neighbor_pseudo = combine_neighbor_values(neighbor_sets, pseudo, pseudo, row_of_id)
        neighbor_pseudo_aug = combine_neighbor_values(
            neighbor_sets, pseudo_aug, pseudo_aug, row_of_id
        )
    return PseudoLabelFamily(pseudo, pseudo_aug, neighbor_pseudo, neighbor_pseudo_aug)


def blend_labels(labels: np.ndarray, pseudo_mean: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Componentwise convex blend: gamma * label + (1 - gamma) * pseudo_mean."""
    g = np.asarray(gamma, dtype=float)[:, None]
    return g * labels + (1.0 - g) * pseudo_mean


def corrected_label(
    y: GazeLabel,
    family: tuple[GazeLabel, GazeLabel, GazeLabel, GazeLabel],
    y_n: GazeLabel,
    label_confidence: float,
) -> GazeLabel:
    """Scalar corrected label from the full five-label composition."""
    stack = np.array([[l.yaw, l.pitch] for l in (y_n, *family)])
    mean = stack.mean(axis=0)
    out = label_confidence * y.as_array() + (1.0 - label_confidence) * mean
    return GazeLabel(float(out[0]), float(out[1]))


def _pseudo_mean(
    composition: str,
    neighboring: np.ndarray,
    family: PseudoLabelFamily,
) -> np.ndarray:
    if composition == "full":
        return (
            neighboring
            + family.pseudo
            + family.pseudo_aug
            + family.neighbor_pseudo
            + family.neighbor_pseudo_aug
        ) / 5.0
    if composition == "subset":
        return (neighboring + family.pseudo) / 2.0
    if composition == "pair":
        return (family.pseudo + family.pseudo_aug) / 2.0
    raise ValueError(f"unknown composition {composition!r}")


def build_corrected_batch(
    labels: np.ndarray,
    label_confidence: np.ndarray,
    image_confidence: np.ndarray,
    family: PseudoLabelFamily,
    neighboring: np.ndarray,
    config: CorrectionConfig,
    composition: str = "full",
    unit_weights: bool = False,
) -> CorrectedBatch:
    """Truncate both confidences, compose corrected labels, assign weights.

    ``unit_weights`` forces every sample weight to 1 (sample-weighting
    ablation); the truncated image confidence is still recorded for audit.
    """
    config.validate()
    if composition not in COMPOSITIONS:
        raise ValueError(f"composition must be one of {COMPOSITIONS}")
    t_label = truncate_array(label_confidence, config.tau_label)
    t_image = truncate_array(image_confidence, config.tau_image)
    if composition == "none":
        corrected = np.array(labels, dtype=float, copy=True)
    else:
        corrected = blend_labels(labels, _pseudo_mean(composition, neighboring, family), t_label)
    weights = np.ones(len(labels)) if unit_weights else t_image
    return CorrectedBatch(
        corrected_labels=corrected,
        sample_weights=weights,
        truncated_label_conf=t_label,
        truncated_image_conf=t_image,
    )
