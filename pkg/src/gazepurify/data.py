"""Dataset model, JSON-lines I/O, and the synthetic noisy-label generator.

A dataset is a list of samples, each carrying a raw input vector, a person
id, and a (yaw, pitch) training label. Simulated datasets additionally carry
the uncorrupted label and per-sample corruption flags so that detection and
correction quality can be scored against ground truth.

Synthetic inputs come from a frozen random smooth map ``g(label, person)``
built so that negating yaw corresponds exactly to negating a fixed block of
input coordinates ("odd block"). That gives the pipeline an input-space
involution playing the role of horizontal image flipping.

File format (documented in README): JSON lines. Line 1 is a header object::

    {"format": "gaze-dataset-jsonl", "version": 1, "input_dim": D,
     "flip_negate_indices": [...], "metadata": {...}}

Every following line is one sample::

    {"id": 7, "person_id": 2, "input": [...],
     "label": {"yaw": 0.1, "pitch": -0.2},
     "clean_label": {...}, "label_corrupted": false, "input_corrupted": false}

The three oracle fields are either present on every sample (simulated data)
or absent everywhere (real exports). Floats are serialized with full
round-trip precision.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DatasetFormatError
from .geometry import GazeLabel, angular_distance_deg_array

__all__ = [
    "Sample",
    "Dataset",
    "NoiseSpec",
    "SyntheticMap",
    "generate_synthetic",
    "generate_splits",
    "load_dataset",
    "save_dataset",
    "datasets_equal",
]

FORMAT_NAME = "gaze-dataset-jsonl"
FORMAT_VERSION = 1

# Clean labels are drawn from this box (radians); corrupted labels are clamped
# to the full valid range [-pi, pi] x [-pi/2, pi/2].
YAW_RANGE = (-1.0, 1.0)
PITCH_RANGE = (-0.6, 0.6)

_MAP_HIDDEN = 32
_MAP_EMBED = 4


@dataclass
class Sample:
    id: int
    person_id: int
    input: np.ndarray
    label: GazeLabel
    clean_label: Optional[GazeLabel] = None
    label_corrupted: Optional[bool] = None
    input_corrupted: Optional[bool] = None


@dataclass
class Dataset:
    """Immutable after construction; the array accessors cache read-only
    views, so shared access from concurrent readers is safe."""

    samples: list[Sample]
    input_dim: int
    metadata: dict = field(default_factory=dict)
    flip_negate_indices: list[int] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def has_oracle(self) -> bool:
        return bool(self.samples) and self.samples[0].clean_label is not None

    def _cached(self, key: str, build) -> np.ndarray:
        if key not in self._cache:
            arr = build()
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]

    def ids(self) -> np.ndarray:
        return self._cached("ids", lambda: np.array([s.id for s in self.samples], dtype=int))

    def person_ids(self) -> np.ndarray:
        return self._cached(
            "person_ids", lambda: np.array([s.person_id for s in self.samples], dtype=int)
        )

    def inputs(self) -> np.ndarray:
        return self._cached(
            "inputs", lambda: np.stack([s.input for s in self.samples]).astype(float)
        )

    def labels(self) -> np.ndarray:
        """Training labels as an (N, 2) [yaw, pitch] array."""
        return self._cached(
            "labels",
            lambda: np.array([[s.label.yaw, s.label.pitch] for s in self.samples]),
        )

    def clean_labels(self) -> np.ndarray:
        if not self.has_oracle:
            raise ValueError("dataset carries no oracle labels")
        return np.array(
            [[s.clean_label.yaw, s.clean_label.pitch] for s in self.samples]
        )

    def label_corrupted_mask(self) -> np.ndarray:
        if not self.has_oracle:
            raise ValueError("dataset carries no oracle flags")
        return np.array([bool(s.label_corrupted) for s in self.samples])

    def input_corrupted_mask(self) -> np.ndarray:
        if not self.has_oracle:
            raise ValueError("dataset carries no oracle flags")
        return np.array([bool(s.input_corrupted) for s in self.samples])

    def person_group_sizes(self) -> dict[int, int]:
        sizes: dict[int, int] = {}
        for s in self.samples:
            sizes[s.person_id] = sizes.get(s.person_id, 0) + 1
        return sizes

    def flip_input(self, x) -> np.ndarray:
        """Involutive input transform corresponding to yaw negation.

        Accepts a :class:`Sample`, a single (D,) vector, or an (N, D) batch.
        """
        if isinstance(x, Sample):
            x = x.input
        x = np.asarray(x, dtype=float)
        out = x.copy()
        if self.flip_negate_indices:
            out[..., self.flip_negate_indices] = -out[..., self.flip_negate_indices]
        return out

    def validate(self) -> None:
        if not self.samples:
            raise DatasetFormatError("empty dataset")
        seen = set()
        oracle = self.samples[0].clean_label is not None
        for s in self.samples:
            if s.id in seen:
                raise DatasetFormatError(f"duplicate sample id {s.id}")
            seen.add(s.id)
            if len(s.input) != self.input_dim:
                raise DatasetFormatError(
                    f"sample id {s.id}: input dimension {len(s.input)} != {self.input_dim}"
                )
            if (s.clean_label is not None) != oracle:
                raise DatasetFormatError(
                    "oracle fields must be present for all samples or for none"
                )


@dataclass
class NoiseSpec:
    """Controlled corruption applied by the synthetic generator."""

    label_noise_fraction: float = 0.0
    label_noise_min_deg: float = 0.0
    label_noise_max_deg: float = 0.0
    input_corrupt_fraction: float = 0.0
    input_corrupt_scale: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.label_noise_fraction <= 1.0:
            raise ConfigError(
                f"label_noise_fraction must be in [0, 1], got {self.label_noise_fraction}"
            )
        if not 0.0 <= self.input_corrupt_fraction <= 1.0:
            raise ConfigError(
                f"input_corrupt_fraction must be in [0, 1], got {self.input_corrupt_fraction}"
            )
        if self.label_noise_min_deg < 0:
            raise ConfigError(
                f"label_noise_min_deg must be >= 0, got {self.label_noise_min_deg}"
            )
        if self.label_noise_min_deg > self.label_noise_max_deg:
            raise ConfigError(
                "label_noise_min_deg must be <= label_noise_max_deg, got "
                f"{self.label_noise_min_deg} > {self.label_noise_max_deg}"
            )


class SyntheticMap:
    """Frozen random two-layer map from (label, person) to an input vector.

    The first ``input_dim // 2`` output coordinates (the odd block) are
    multiplied by sin(yaw); the remaining coordinates depend on yaw only
    through cos(yaw). Hence ``g(-yaw, pitch, p)`` equals ``g(yaw, pitch, p)``
    with the odd block negated, exactly.
    """

    def __init__(self, seed: int, input_dim: int, n_persons: int):
        self.seed = seed
        self.input_dim = input_dim
        self.n_persons = n_persons
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        in_dim = 2 + _MAP_EMBED
        self.embeddings = rng.standard_normal((n_persons, _MAP_EMBED))
        self.w1 = rng.standard_normal((_MAP_HIDDEN, in_dim)) / math.sqrt(in_dim)
        self.b1 = 0.1 * rng.standard_normal(_MAP_HIDDEN)
        self.w2 = rng.standard_normal((input_dim, _MAP_HIDDEN)) / math.sqrt(_MAP_HIDDEN)
        self.b2 = 0.1 * rng.standard_normal(input_dim)
        self.n_odd = input_dim // 2

    @property
    def flip_negate_indices(self) -> list[int]:
        return list(range(self.n_odd))

    def evaluate(self, labels: np.ndarray, person_ids: np.ndarray) -> np.ndarray:
        """Noise-free inputs for (N, 2) labels and (N,) person ids."""
        labels = np.asarray(labels, dtype=float)
        yaw = labels[:, 0]
        pitch = labels[:, 1]
        u = np.concatenate(
            [np.cos(yaw)[:, None], pitch[:, None], self.embeddings[person_ids]], axis=1
        )
        hidden = np.tanh(u @ self.w1.T + self.b1)
        out = hidden @ self.w2.T + self.b2
        out[:, : self.n_odd] *= np.sin(yaw)[:, None]
        return out


def _offset_scale_for_distance(label: np.ndarray, direction: np.ndarray, target_deg: float) -> float:
    """Step size along ``direction`` in (yaw, pitch) space giving the target
    angular distance, found by bisection (the chart contracts yaw by cos(pitch),
    so distance grows monotonically but sub-linearly in the step size)."""
    base = label[None, :]

    def dist(s):
        moved = base + s * direction[None, :]
        return float(angular_distance_deg_array(base, moved)[0])

    hi = math.radians(target_deg)
    while dist(hi) < target_deg and hi < math.pi:
        hi *= 1.5
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if dist(mid) < target_deg:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _clamp_label(yaw: float, pitch: float) -> tuple[float, float]:
    return (
        float(np.clip(yaw, -math.pi, math.pi)),
        float(np.clip(pitch, -math.pi / 2, math.pi / 2)),
    )


def _generate(
    n_samples: int,
    n_persons: int,
    input_dim: int,
    synth_map: SyntheticMap,
    noise: Optional[NoiseSpec],
    label_rng: np.random.Generator,
    jitter_rng: np.random.Generator,
    jitter_scale: float,
    id_offset: int = 0,
) -> Dataset:
    person_ids = np.arange(n_samples) % n_persons
    yaw = label_rng.uniform(*YAW_RANGE, size=n_samples)
    pitch = label_rng.uniform(*PITCH_RANGE, size=n_samples)
    clean = np.stack([yaw, pitch], axis=1)
    inputs = synth_map.evaluate(clean, person_ids)
    inputs += jitter_scale * jitter_rng.standard_normal(inputs.shape)

    labels = clean.copy()
    label_flags = np.zeros(n_samples, dtype=bool)
    input_flags = np.zeros(n_samples, dtype=bool)

    if noise is not None:
        noise.validate()
        noise_rng = np.random.default_rng(noise.seed)
        n_label = round(n_samples * noise.label_noise_fraction)
        if n_label:
            idx = noise_rng.choice(n_samples, size=n_label, replace=False)
            label_flags[idx] = True
            for i in idx:
                magnitude = noise_rng.uniform(
                    noise.label_noise_min_deg, noise.label_noise_max_deg
                )
                phi = noise_rng.uniform(0.0, 2.0 * math.pi)
                direction = np.array([math.cos(phi), math.sin(phi)])
                s = _offset_scale_for_distance(clean[i], direction, magnitude)
                labels[i] = _clamp_label(*(clean[i] + s * direction))
        # Independent draw: a sample may carry both corruptions.
        n_input = round(n_samples * noise.input_corrupt_fraction)
        if n_input:
            idx = noise_rng.choice(n_samples, size=n_input, replace=False)
            input_flags[idx] = True
            for i in idx:
                inputs[i] = noise.input_corrupt_scale * noise_rng.standard_cauchy(input_dim)

    samples = [
        Sample(
            id=id_offset + i,
            person_id=int(person_ids[i]),
            input=inputs[i],
            label=GazeLabel(float(labels[i, 0]), float(labels[i, 1])),
            clean_label=GazeLabel(float(clean[i, 0]), float(clean[i, 1])),
            label_corrupted=bool(label_flags[i]),
            input_corrupted=bool(input_flags[i]),
        )
        for i in range(n_samples)
    ]
    ds = Dataset(
        samples=samples,
        input_dim=input_dim,
        metadata={
            "generator_seed": synth_map.seed,
            "n_persons": n_persons,
            "jitter_scale": jitter_scale,
            "noise": None if noise is None else vars(noise).copy(),
        },
        flip_negate_indices=synth_map.flip_negate_indices,
    )
    ds.validate()
    return ds


def _role_rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(role,)))


def generate_synthetic(
    n_samples: int,
    n_persons: int,
    input_dim: int,
    noise: Optional[NoiseSpec],
    seed: int,
    jitter_scale: float = 0.02,
) -> Dataset:
    """Generate a synthetic dataset with controlled label/input corruption.

    Clean labels are uniform over the label box; inputs come from the frozen
    map for ``seed`` plus Gaussian jitter. Exactly ``round(N * fraction)``
    samples receive each corruption type; the two index draws are independent.
    """
    if n_persons < 1 or n_samples < n_persons:
        raise ConfigError(
            f"need n_samples >= n_persons >= 1, got {n_samples}, {n_persons}"
        )
    if input_dim < 2:
        raise ConfigError(f"input_dim must be >= 2, got {input_dim}")
    synth_map = SyntheticMap(seed, input_dim, n_persons)
    return _generate(
        n_samples,
        n_persons,
        input_dim,
        synth_map,
        noise,
        label_rng=_role_rng(seed, 1),
        jitter_rng=_role_rng(seed, 2),
        jitter_scale=jitter_scale,
    )


def generate_splits(
    n_train: int,
    n_test: int,
    n_persons: int,
    input_dim: int,
    noise: Optional[NoiseSpec],
    seed: int,
    jitter_scale: float = 0.02,
) -> tuple[Dataset, Dataset]:
    """Train split with injected noise plus a noise-free test split.

    Both splits share the same frozen input map, so a model trained on the
    train split is evaluated on the same input-label relationship.
    """
    train = generate_synthetic(n_train, n_persons, input_dim, noise, seed, jitter_scale)
    synth_map = SyntheticMap(seed, input_dim, n_persons)
    test = _generate(
        n_test,
        n_persons,
        input_dim,
        synth_map,
        None,
        label_rng=_role_rng(seed, 3),
        jitter_rng=_role_rng(seed, 4),
        jitter_scale=jitter_scale,
        id_offset=n_train,
    )
    test.metadata["split"] = "test"
    train.metadata["split"] = "train"
    return train, test


def _label_to_json(label: GazeLabel) -> dict:
    return {"yaw": float(label.yaw), "pitch": float(label.pitch)}


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as JSON lines (header line + one sample per line)."""
    dataset.validate()
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "input_dim": dataset.input_dim,
        "flip_negate_indices": list(dataset.flip_negate_indices),
        "metadata": dataset.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in dataset.samples:
            row = {
                "id": int(s.id),
                "person_id": int(s.person_id),
                "input": [float(v) for v in s.input],
                "label": _label_to_json(s.label),
            }
            if s.clean_label is not None:
                row["clean_label"] = _label_to_json(s.clean_label)
                row["label_corrupted"] = bool(s.label_corrupted)
                row["input_corrupted"] = bool(s.input_corrupted)
            fh.write(json.dumps(row) + "\n")


def _parse_label(obj, lineno, what) -> GazeLabel:
    try:
        yaw = float(obj["yaw"])
        pitch = float(obj["pitch"])
    except (KeyError, TypeError, ValueError):
        raise DatasetFormatError(f"line {lineno}: malformed {what}") from None
    if not (math.isfinite(yaw) and math.isfinite(pitch)):
        raise DatasetFormatError(f"line {lineno}: non-finite {what}")
    if not (-math.pi <= yaw <= math.pi) or not (-math.pi / 2 <= pitch <= math.pi / 2):
        raise DatasetFormatError(
            f"line {lineno}: {what} outside valid range (yaw in [-pi, pi], "
            "pitch in [-pi/2, pi/2])"
        )
    return GazeLabel(yaw, pitch)


def load_dataset(path) -> Dataset:
    """Load and validate a JSON-lines dataset; errors name the failing line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DatasetFormatError("empty dataset")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: invalid JSON header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetFormatError("line 1: missing or unrecognized dataset header")
    try:
        input_dim = int(header["input_dim"])
    except (KeyError, TypeError, ValueError):
        raise DatasetFormatError("line 1: header lacks a valid input_dim") from None
    flip_indices = [int(i) for i in header.get("flip_negate_indices", [])]
    if any(i < 0 or i >= input_dim for i in flip_indices):
        raise DatasetFormatError("line 1: flip_negate_indices out of range")

    samples = []
    seen_ids = set()
    oracle: Optional[bool] = None
    if len(lines) < 2:
        raise DatasetFormatError("empty dataset")
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        try:
            sid = int(row["id"])
            person = int(row["person_id"])
            vec = np.array([float(v) for v in row["input"]], dtype=float)
        except (KeyError, TypeError, ValueError):
            raise DatasetFormatError(f"line {lineno}: malformed sample row") from None
        if sid in seen_ids:
            raise DatasetFormatError(f"line {lineno}: duplicate sample id {sid}")
        seen_ids.add(sid)
        if vec.size != input_dim:
            raise DatasetFormatError(
                f"line {lineno}: input dimension {vec.size} != {input_dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise DatasetFormatError(f"line {lineno}: non-finite input values")
        label = _parse_label(row.get("label", {}), lineno, "label")
        has_oracle = "clean_label" in row
        if oracle is None:
            oracle = has_oracle
        elif oracle != has_oracle:
            raise DatasetFormatError(
                f"line {lineno}: oracle fields must be present on all samples or none"
            )
        clean = flags = None
        if has_oracle:
            clean = _parse_label(row["clean_label"], lineno, "clean_label")
            try:
                flags = (bool(row["label_corrupted"]), bool(row["input_corrupted"]))
            except KeyError:
                raise DatasetFormatError(
                    f"line {lineno}: clean_label present but corruption flags missing"
                ) from None
        samples.append(
            Sample(
                id=sid,
                person_id=person,
                input=vec,
                label=label,
                clean_label=clean,
                label_corrupted=None if flags is None else flags[0],
                input_corrupted=None if flags is None else flags[1],
            )
        )
    ds = Dataset(
        samples=samples,
        input_dim=input_dim,
        metadata=header.get("metadata", {}) or {},
        flip_negate_indices=flip_indices,
    )
    ds.validate()
    return ds


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-for-field equality with bit-exact float comparison."""
    if len(a) != len(b) or a.input_dim != b.input_dim:
        return False
    if a.flip_negate_indices != b.flip_negate_indices or a.metadata != b.metadata:
        return False
    for sa, sb in zip(a.samples, b.samples):
        if (sa.id, sa.person_id) != (sb.id, sb.person_id):
            return False
        if not np.array_equal(sa.input, sb.input):
            return False
        if sa.label != sb.label or sa.clean_label != sb.clean_label:
            return False
        if (sa.label_corrupted, sa.input_corrupted) != (
            sb.label_corrupted,
            sb.input_corrupted,
        ):
            return False
    return True
