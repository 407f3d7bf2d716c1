"""Noisy-label purification for gaze regression on feature-vector datasets.

The pipeline estimates per-sample label and input quality from the
consistency of three labels (training label, model prediction, and a
neighbor-reconstructed label), converts the two consistency metrics into
confidences with a two-component Gaussian mixture, then corrects suspect
labels and down-weights suspect inputs while two networks co-train on each
other's outputs.
"""

from .data import (
    Dataset,
    NoiseSpec,
    Sample,
    SyntheticMap,
    datasets_equal,
    generate_splits,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DatasetFormatError, DegenerateGmmError
from .geometry import GazeLabel, angular_distance_deg, flip_label, gaze_to_3d
from .model import MlpConfig, MlpRegressor
from .neighbors import NeighborConfig, NeighborSet, knn_same_person, reconstruction_weights
from .pipeline import RunReport, TrainConfig, evaluate, run
from .uncertainty import GmmFit, TripletDistances, fit_gmm_1d, posterior_reliable

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Dataset",
    "DatasetFormatError",
    "DegenerateGmmError",
    "GazeLabel",
    "GmmFit",
    "MlpConfig",
    "MlpRegressor",
    "NeighborConfig",
    "NeighborSet",
    "NoiseSpec",
    "RunReport",
    "Sample",
    "SyntheticMap",
    "TrainConfig",
    "TripletDistances",
    "angular_distance_deg",
    "datasets_equal",
    "evaluate",
    "fit_gmm_1d",
    "flip_label",
    "gaze_to_3d",
    "generate_splits",
    "generate_synthetic",
    "knn_same_person",
    "load_dataset",
    "posterior_reliable",
    "reconstruction_weights",
    "run",
    "save_dataset",
]
