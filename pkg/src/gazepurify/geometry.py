"""Gaze-angle geometry: (yaw, pitch) labels, 3-D directions, angular distance.

Labels are stored in radians; angular distances are reported in degrees.
Array variants operate on ``(..., 2)`` float arrays laid out as
``[yaw, pitch]`` and are used throughout the training pipeline; the scalar
variants wrap single :class:`GazeLabel` values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GazeLabel",
    "gaze_to_3d",
    "gaze_to_3d_array",
    "angular_distance_deg",
    "angular_distance_deg_array",
    "flip_label",
    "flip_label_array",
]


@dataclass(frozen=True)
class GazeLabel:
    """A gaze direction parameterized as (yaw, pitch) in radians."""

    yaw: float
    pitch: float

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch], dtype=float)

    @staticmethod
    def from_array(arr) -> "GazeLabel":
        return GazeLabel(float(arr[0]), float(arr[1]))


def _require_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr!r}")


def gaze_to_3d_array(labels: np.ndarray) -> np.ndarray:
    """Convert ``(..., 2)`` yaw/pitch angles to unit 3-D direction vectors."""
    labels = np.asarray(labels, dtype=float)
    _require_finite("labels", labels)
    yaw = labels[..., 0]
    pitch = labels[..., 1]
    cos_pitch = np.cos(pitch)
    return np.stack(
        [-cos_pitch * np.sin(yaw), -np.sin(pitch), -cos_pitch * np.cos(yaw)],
        axis=-1,
    )


def gaze_to_3d(label: GazeLabel) -> np.ndarray:
    """Convert one gaze label to its unit 3-D direction vector."""
    return gaze_to_3d_array(label.as_array())


def angular_distance_deg_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angular distance in degrees between paired ``(..., 2)`` label arrays.

    The cosine argument is clamped to [-1, 1] before arccos so that identical
    or antipodal directions cannot produce NaN through rounding.
    """
    va = gaze_to_3d_array(a)
    vb = gaze_to_3d_array(b)
    dot = np.sum(va * vb, axis=-1)
    norms = np.linalg.norm(va, axis=-1) * np.linalg.norm(vb, axis=-1)
    cos = np.clip(dot / norms, -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def angular_distance_deg(a: GazeLabel, b: GazeLabel) -> float:
    """Angular distance in degrees between two gaze labels; in [0, 180]."""
    return float(angular_distance_deg_array(a.as_array(), b.as_array()))


def flip_label(label: GazeLabel) -> GazeLabel:
    """Mirror a label horizontally: negate yaw, keep pitch."""
    _require_finite("label", label.as_array())
    return GazeLabel(-label.yaw, label.pitch)


def flip_label_array(labels: np.ndarray) -> np.ndarray:
    """Vectorized horizontal mirror of ``(..., 2)`` label arrays."""
    labels = np.asarray(labels, dtype=float)
    out = labels.copy()
    out[..., 0] = -out[..., 0]
    return out
