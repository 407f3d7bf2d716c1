"""End-to-end training loop: warm-up, per-epoch uncertainty estimation,
label correction, sample weighting, and two-network co-training.

Every epoch after warm-up recomputes, per network and over the full training
set: encoder features, pseudo labels, same-person neighbor sets, neighboring
labels (always from the immutable training labels), the two consistency
metrics, mixture confidences, corrected labels, and sample weights. In
co-training mode the networks then swap corrected labels and weights, after
averaging both networks' corrected labels for samples whose truncated label
confidence is zero.

Ablation flags reproduce the reduced variants: no neighboring labels, uniform
neighbor weights, no sample weighting, no label correction, and the two-label
pseudo composition.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .correction import (
    CorrectionConfig,
    CorrectedBatch,
    build_corrected_batch,
    pseudo_label_family,
)
from .data import Dataset
from .errors import ConfigError
from .geometry import angular_distance_deg_array
from .model import MlpConfig, MlpRegressor
from .neighbors import NeighborConfig, build_neighbor_sets, combine_neighbor_values
from .uncertainty import (
    ConfidenceResult,
    confidences,
    triple_md_array,
    triplet_distances_arrays,
    tuple_md_array,
)

__all__ = [
    "TrainConfig",
    "EpochState",
    "RunReport",
    "warm_up",
    "epoch_pass",
    "cotrain_exchange",
    "evaluate",
    "run",
    "auc_score",
]

logger = logging.getLogger(__name__)

MODES = ("suge_cotrain", "suge_selftrain", "baseline")


@dataclass
class TrainConfig:
    max_epochs: int = 40
    warmup_epochs: int = 10
    k_neighbors: int = 4
    epsilon: float = 1.0
    tau_label: float = 0.5
    tau_image: float = 0.5
    ridge_lambda: float = 1e-3
    seed: int = 0
    mode: str = "suge_cotrain"
    no_neighboring: bool = False
    no_reconstruction_weighting: bool = False
    no_sample_weighting: bool = False
    no_label_correction: bool = False
    subset_label_composition: bool = False
    hidden_dims: tuple[int, ...] = (64, 32)
    feat_dim: int = 16
    learning_rate: float = 5e-4
    batch_size: int = 64

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.warmup_epochs < self.max_epochs:
            raise ConfigError(
                "need 0 <= warmup_epochs < max_epochs, got "
                f"warmup_epochs={self.warmup_epochs}, max_epochs={self.max_epochs}"
            )
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("tau_label", "tau_image"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.ridge_lambda < 0:
            raise ConfigError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def composition(self) -> str:
        if self.no_label_correction:
            return "none"
        if self.no_neighboring:
            return "pair"
        if self.subset_label_composition:
            return "subset"
        return "full"


@dataclass
class EpochState:
    """All per-sample quantities one network derives in one epoch."""

    features: np.ndarray
    pseudo: np.ndarray
    pseudo_aug: np.ndarray
    neighboring: np.ndarray
    neighbor_sets: Optional[list]
    d_pg: np.ndarray
    d_pn: np.ndarray
    d_ng: np.ndarray
    tuple_md: np.ndarray
    triple_md: np.ndarray
    confidence: ConfidenceResult
    batch: CorrectedBatch

    @property
    def corrected(self) -> np.ndarray:
        return self.batch.corrected_labels

    @property
    def weights(self) -> np.ndarray:
        return self.batch.sample_weights

    @property
    def truncated_label_conf(self) -> np.ndarray:
        return self.batch.truncated_label_conf


def _child_seed(seed: int, role: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(role,)).generate_state(1)[0])


def _child_rng(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(role,)))


def warm_up(dataset: Dataset, regressor: MlpRegressor, epochs: int,
            rng: Optional[np.random.Generator] = None) -> MlpRegressor:
    """Plain supervised training on the raw labels with unit weights."""
    if rng is None:
        rng = _child_rng(regressor.config.seed, 7)
    x = dataset.inputs()
    y = dataset.labels()
    ones = np.ones(len(dataset))
    for _ in range(epochs):
        regressor.train_epoch(x, y, ones, rng)
    return regressor


def epoch_pass(dataset: Dataset, regressor: MlpRegressor, cfg: TrainConfig,
               inputs: Optional[np.ndarray] = None,
               flipped_inputs: Optional[np.ndarray] = None) -> EpochState:
    """One network's full-dataset estimation pass for the current epoch."""
    x = dataset.inputs() if inputs is None else inputs
    xf = dataset.flip_input(x) if flipped_inputs is None else flipped_inputs
    y = dataset.labels()
    sample_ids = dataset.ids()
    row_of_id = {int(sid): i for i, sid in enumerate(sample_ids)}

    features = regressor.encode(x)

    if cfg.no_neighboring:
        neighbor_sets = None
        family = pseudo_label_family(x, xf, regressor, None, None)
        neighboring = family.pseudo.copy()
    else:
        neighbor_sets = build_neighbor_sets(
            features,
            dataset.person_ids(),
            sample_ids,
            NeighborConfig(k=cfg.k_neighbors, ridge_lambda=cfg.ridge_lambda),
            uniform_weights=cfg.no_reconstruction_weighting,
        )
        family = pseudo_label_family(x, xf, regressor, neighbor_sets, row_of_id)
        neighboring = combine_neighbor_values(neighbor_sets, y, y, row_of_id)

    d_pg, d_pn, d_ng = triplet_distances_arrays(y, family.pseudo, neighboring)
    tuple_vals = tuple_md_array(d_pg, d_pn, d_ng, cfg.epsilon)
    triple_vals = triple_md_array(d_pg, d_pn, d_ng)
    confidence = confidences(tuple_vals, triple_vals)

    batch = build_corrected_batch(
        y,
        confidence.label_confidence,
        confidence.image_confidence,
        family,
        neighboring,
        CorrectionConfig(tau_label=cfg.tau_label, tau_image=cfg.tau_image),
        composition=cfg.composition,
        unit_weights=cfg.no_sample_weighting,
    )
    return EpochState(
        features=features,
        pseudo=family.pseudo,
        pseudo_aug=family.pseudo_aug,
        neighboring=neighboring,
        neighbor_sets=neighbor_sets,
        d_pg=d_pg,
        d_pn=d_pn,
        d_ng=d_ng,
        tuple_md=tuple_vals,
        triple_md=triple_vals,
        confidence=confidence,
        batch=batch,
    )


def cotrain_exchange(state1: EpochState, state2: EpochState):
    """Zero-confidence label averaging followed by the network swap.

    Both averages use the pre-exchange corrected labels. Returns the
    (labels, weights) each network trains on: network 1 consumes network 2's
    outputs and vice versa.
    """
    avg = 0.5 * (state1.corrected + state2.corrected)
    y1 = state1.corrected.copy()
    zero1 = state1.truncated_label_conf == 0.0
    y1[zero1] = avg[zero1]
    y2 = state2.corrected.copy()
    zero2 = state2.truncated_label_conf == 0.0
    y2[zero2] = avg[zero2]
    return (y2, state2.weights), (y1, state1.weights)


def evaluate(regressors, dataset: Dataset) -> dict:
    """Mean angular error in degrees on a dataset.

    Accepts one regressor or a sequence; with several, also reports the
    error of the averaged prediction ("ensemble").
    """
    if hasattr(regressors, "predict"):
        regressors = [regressors]
    x = dataset.inputs()
    labels = dataset.labels()
    preds = [r.predict(x) for r in regressors]
    result = {}
    for i, p in enumerate(preds, start=1):
        result[f"net{i}"] = float(np.mean(angular_distance_deg_array(p, labels)))
    ensemble = np.mean(preds, axis=0)
    result["ensemble"] = float(np.mean(angular_distance_deg_array(ensemble, labels)))
    return result


def auc_score(scores, flags) -> float:
    """Rank-based AUC of ``scores`` against boolean ``flags`` (ties by midrank)."""
    flags = np.asarray(flags, dtype=bool)
    n_pos = int(flags.sum())
    n_neg = flags.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(np.asarray(scores, dtype=float))
    return float((ranks[flags].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _detection_block(flags: np.ndarray, confidence: np.ndarray, truncated: np.ndarray) -> dict:
    detected = truncated == 0.0
    tp = int(np.sum(detected & flags))
    fp = int(np.sum(detected & ~flags))
    fn = int(np.sum(~detected & flags))
    return {
        "auc": auc_score(1.0 - confidence, flags),
        "precision": tp / (tp + fp) if (tp + fp) else float("nan"),
        "recall": tp / (tp + fn) if (tp + fn) else float("nan"),
        "flagged": int(detected.sum()),
    }


def _correction_block(dataset: Dataset, corrected: np.ndarray) -> dict:
    mask = dataset.label_corrupted_mask()
    if not mask.any():
        return {"original_err": float("nan"), "corrected_err": float("nan"),
                "reduction": float("nan")}
    clean = dataset.clean_labels()[mask]
    original = float(np.mean(angular_distance_deg_array(dataset.labels()[mask], clean)))
    after = float(np.mean(angular_distance_deg_array(corrected[mask], clean)))
    return {
        "original_err": original,
        "corrected_err": after,
        "reduction": 1.0 - after / original if original else float("nan"),
    }


def _gmm_summary(confidence: ConfidenceResult) -> dict:
    def fit_dict(fit):
        if fit is None:
            return None
        return {
            "means": [float(v) for v in fit.means],
            "variances": [float(v) for v in fit.variances],
            "mixing_weights": [float(v) for v in fit.mixing_weights],
            "reliable_component": fit.reliable_component,
            "converged": fit.converged,
            "iterations": fit.iterations,
        }

    return {
        "label_fit": fit_dict(confidence.label_fit),
        "image_fit": fit_dict(confidence.image_fit),
        "label_degenerate": confidence.label_degenerate,
        "image_degenerate": confidence.image_degenerate,
    }


@dataclass
class RunReport:
    """Structured record of one training run; serializes to stable JSON."""

    config: dict
    dataset_summary: dict
    epochs: list = field(default_factory=list)
    confidence_history: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    detection_first_epoch: Optional[dict] = None
    schema_version: int = 1
    # Trained networks, for checkpointing by the caller; never serialized.
    nets: Optional[list] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "dataset": self.dataset_summary,
            "epochs": self.epochs,
            "confidence_history": self.confidence_history,
            "final": self.final,
            "detection_first_epoch": self.detection_first_epoch,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def _dataset_summary(dataset: Dataset) -> dict:
    summary = {
        "n_samples": len(dataset),
        "input_dim": dataset.input_dim,
        "n_persons": len(dataset.person_group_sizes()),
        "person_group_sizes": {str(k): v for k, v in sorted(dataset.person_group_sizes().items())},
        "has_oracle": dataset.has_oracle,
    }
    if dataset.has_oracle:
        summary["label_corrupted"] = int(dataset.label_corrupted_mask().sum())
        summary["input_corrupted"] = int(dataset.input_corrupted_mask().sum())
    return summary


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden_dims"] = list(d["hidden_dims"])
    return d


def _check_group_sizes(dataset: Dataset, cfg: TrainConfig) -> None:
    sizes = dataset.person_group_sizes()
    if max(sizes.values()) < cfg.k_neighbors + 2:
        raise ConfigError(
            "dataset too small for neighbor estimation: every person group has "
            f"fewer than k_neighbors + 2 = {cfg.k_neighbors + 2} samples"
        )


def run(dataset: Dataset, cfg: TrainConfig, test_dataset: Optional[Dataset] = None) -> RunReport:
    """Execute a full training run and return its report.

    ``baseline`` mode trains one plain network on the raw labels for all
    epochs; the purification modes run warm-up on two networks followed by
    the per-epoch estimation, correction, weighting, and (in co-training)
    exchange loop.
    """
    cfg.validate()
    dataset.validate()
    uses_neighbors = cfg.mode != "baseline" and not cfg.no_neighboring
    if uses_neighbors:
        _check_group_sizes(dataset, cfg)

    x = dataset.inputs()
    xf = dataset.flip_input(x)
    y = dataset.labels()
    ones = np.ones(len(dataset))
    sample_ids = [int(v) for v in dataset.ids()]

    # Baseline is plain single-network supervised training; the purification
    # modes maintain the two networks the exchange step needs.
    n_nets = 1 if cfg.mode == "baseline" else 2
    nets = []
    shuffle_rngs = []
    for k in range(n_nets):
        mcfg = MlpConfig(
            input_dim=dataset.input_dim,
            hidden_dims=cfg.hidden_dims,
            feat_dim=cfg.feat_dim,
            learning_rate=cfg.learning_rate,
            batch_size=cfg.batch_size,
            seed=_child_seed(cfg.seed, 10 + k),
        )
        nets.append(MlpRegressor(mcfg))
        shuffle_rngs.append(_child_rng(cfg.seed, 20 + k))

    report = RunReport(config=_config_dict(cfg), dataset_summary=_dataset_summary(dataset))

    def epoch_record(epoch: int, phase: str, losses: list[float]) -> dict:
        rec = {"epoch": epoch, "phase": phase, "loss": [float(v) for v in losses]}
        if test_dataset is not None:
            rec["test_error"] = evaluate(nets, test_dataset)
        return rec

    if cfg.mode == "baseline":
        for epoch in range(cfg.max_epochs):
            losses = [net.train_epoch(x, y, ones, rng) for net, rng in zip(nets, shuffle_rngs)]
            report.epochs.append(epoch_record(epoch, "plain", losses))
    else:
        for epoch in range(cfg.warmup_epochs):
            losses = [net.train_epoch(x, y, ones, rng) for net, rng in zip(nets, shuffle_rngs)]
            report.epochs.append(epoch_record(epoch, "warmup", losses))

        for epoch in range(cfg.warmup_epochs, cfg.max_epochs):
            states = [epoch_pass(dataset, net, cfg, inputs=x, flipped_inputs=xf) for net in nets]

            net_records = []
            for k, state in enumerate(states, start=1):
                rec = {
                    "network": k,
                    "gmm": _gmm_summary(state.confidence),
                    "zero_label_conf_fraction": float(np.mean(state.truncated_label_conf == 0.0)),
                    "zero_image_conf_fraction": float(
                        np.mean(state.batch.truncated_image_conf == 0.0)
                    ),
                }
                if dataset.has_oracle:
                    rec["label_detection"] = _detection_block(
                        dataset.label_corrupted_mask(),
                        state.confidence.label_confidence,
                        state.truncated_label_conf,
                    )
                    rec["image_detection"] = _detection_block(
                        dataset.input_corrupted_mask(),
                        state.confidence.image_confidence,
                        state.batch.truncated_image_conf,
                    )
                    rec["correction"] = _correction_block(dataset, state.corrected)
                net_records.append(rec)

                report.confidence_history.append(
                    {
                        "epoch": epoch,
                        "network": k,
                        "sample_id": sample_ids,
                        "tuple_md": [float(v) for v in state.tuple_md],
                        "triple_md": [float(v) for v in state.triple_md],
                        "label_conf": [float(v) for v in state.confidence.label_confidence],
                        "image_conf": [float(v) for v in state.confidence.image_confidence],
                        "weight": [float(v) for v in state.weights],
                    }
                )

            if cfg.mode == "suge_cotrain":
                (y1, w1), (y2, w2) = cotrain_exchange(states[0], states[1])
            else:
                (y1, w1) = states[0].corrected, states[0].weights
                (y2, w2) = states[1].corrected, states[1].weights

            losses = [
                nets[0].train_epoch(x, y1, w1, shuffle_rngs[0]),
                nets[1].train_epoch(x, y2, w2, shuffle_rngs[1]),
            ]
            rec = epoch_record(epoch, "purify", losses)
            rec["networks"] = net_records
            report.epochs.append(rec)

            if epoch == cfg.warmup_epochs and dataset.has_oracle:
                report.detection_first_epoch = {
                    f"net{k}": {
                        "label": r["label_detection"],
                        "image": r["image_detection"],
                        "correction": r["correction"],
                    }
                    for k, r in enumerate(net_records, start=1)
                }

    if test_dataset is not None:
        final = evaluate(nets, test_dataset)
        single_errors = [final[f"net{k}"] for k in range(1, len(nets) + 1)]
        final["ensemble_not_worse"] = bool(final["ensemble"] <= max(single_errors) + 1e-12)
        report.final = final
    report.final["train_loss_last"] = report.epochs[-1]["loss"] if report.epochs else []
    report.nets = nets
    return report
