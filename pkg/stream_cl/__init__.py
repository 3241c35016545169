from ._logging import configure_logging
from ._stream_cl import StreamCL
from .config import ExperimentConfig, load_config
from .errors import StreamCLError
from .feature_store import (
    BACKBONES,
    DatasetManifest,
    FeatureFile,
    read_feature_file,
    read_manifest,
    synthesize_gaussian_dataset,
    write_feature_file,
)
from .learners import LEARNERS, OnlineLearner, load_learner, make_learner, save_learner
from .metrics import ExperimentRecord, evaluate, harmonic_mean, netscore
from .rng import Xoshiro256
from .stream_orderings import OrderingPlan, make_plan

__version__ = "0.1.0"

__all__ = [
    "BACKBONES",
    "DatasetManifest",
    "ExperimentConfig",
    "ExperimentRecord",
    "FeatureFile",
    "LEARNERS",
    "OnlineLearner",
    "OrderingPlan",
    "StreamCL",
    "StreamCLError",
    "Xoshiro256",
    "configure_logging",
    "evaluate",
    "harmonic_mean",
    "load_config",
    "load_learner",
    "make_learner",
    "make_plan",
    "netscore",
    "read_feature_file",
    "read_manifest",
    "save_learner",
    "synthesize_gaussian_dataset",
    "write_feature_file",
]
