"""Probabilistic multi-person body recovery with Bayesian-network heads.

The package is organized as small numpy/scipy modules:

- `so3`: rotations, special Procrustes projection, quasi-uniform SO(3) grids
- `distributions`: matrix Fisher, diagonal Gaussian, log-normal families
- `autodiff`: minimal reverse-mode tape used by the training losses
- `detection`: thresholded 3x3 non-maximum suppression over score grids
- `body`: kinematic body model and pinhole camera geometry
- `graph`: the Bayesian network (presets, MLP heads, densities)
- `synthdata`: synthetic scene generator and dataset (de)serialization
- `inference`: greedy mode extraction, clamping, multi-view fusion, matching
- `training`: losses, hand-derived gradients, Adam loop, checkpoints
- `metrics`: evaluation reports and CSV writers
- `cli`: `bayesbody generate|train|eval|stats`
"""

from __future__ import annotations

from .body import CameraIntrinsics, KinematicBody, default_body
from .detection import Detection, DetectionGrid, detect
from .distributions import (DiagGaussianParams, FisherNormalizer,
                            LogNormalParams, MatrixFisherParams,
                            fisher_log_density, fisher_mode, fisher_normalizer,
                            fisher_sample, gaussian_log_density,
                            lognormal_log_density)
from .errors import BayesBodyError
from .graph import ATTRIBUTE_NODES, PRESETS, BayesNet
from .inference import (FusedPerson, KnownValues, PersonState,
                        extract_mode, fuse_multiview, fuse_pose_multiview,
                        hungarian)
from .metrics import EvalReport, evaluate, write_records_csv
from .so3 import Rotation, So3Grid, build_grid, geodesic_distance, special_procrustes
from .synthdata import (GeneratorConfig, Scene, generate_dataset,
                        generate_scene, load_dataset, save_dataset)
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NODES",
    "BayesBodyError",
    "BayesNet",
    "CameraIntrinsics",
    "Detection",
    "DetectionGrid",
    "DiagGaussianParams",
    "EvalReport",
    "FisherNormalizer",
    "FusedPerson",
    "GeneratorConfig",
    "KinematicBody",
    "KnownValues",
    "LogNormalParams",
    "MatrixFisherParams",
    "PRESETS",
    "PersonState",
    "Rotation",
    "Scene",
    "So3Grid",
    "TrainConfig",
    "build_grid",
    "default_body",
    "detect",
    "evaluate",
    "extract_mode",
    "fisher_log_density",
    "fisher_mode",
    "fisher_normalizer",
    "fisher_sample",
    "fuse_multiview",
    "fuse_pose_multiview",
    "gaussian_log_density",
    "generate_dataset",
    "generate_scene",
    "geodesic_distance",
    "hungarian",
    "load_dataset",
    "lognormal_log_density",
    "save_dataset",
    "special_procrustes",
    "train",
    "write_records_csv",
    "__version__",
]
