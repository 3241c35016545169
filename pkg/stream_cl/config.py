"""
Experiment configuration: defaults for every hyperparameter and the JSON
config loader.

A config document looks like::

    {
      "datasets": [
        {"name": "toy", "features": "toy.oclf", "manifest": "toy.csv",
         "backbone": "mobilenet_v3_small", "preset": "openloris"}
      ],
      "learners": ["ncm", {"name": "replay_20pc", "hparams": {"lr": 0.01}},
                   {"name": "finetune", "lr_grid": true}],
      "orderings": ["iid", "class_iid", {"kind": "k_shot_class_iid", "k": 5}],
      "seeds": [1, 2, 3],
      "base_seed": 0,
      "out": "results",
      "workers": 1,
      "checkpoints": "auto"
    }
"""

import json
import logging
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, TypeAlias, TypedDict

from stream_cl.errors import ConfigError
from stream_cl.feature_store import BACKBONES, BackboneConstant
from stream_cl.learners import LEARNERS
from stream_cl.stream_orderings import ORDERING_KINDS

logger = logging.getLogger(__name__)

DEFAULT_LR = 1e-3
LR_GRID = (0.1, 0.01, 0.001, 0.0001)
LR_PRESETS: dict[str, float] = {"places365": 1e-4, "places_lt": 1e-3, "openloris": 1e-3}
WEIGHT_DECAY = 1e-5
MOMENTUM = 0.9
REPLAY_SAMPLES = 50
SHRINKAGE = 1e-4
NB_VARIANCE_FLOOR = 1e-4
NB_SAMPLE_VARIANCE = True
CBCL_DISTANCE_THRESHOLD = 17.0
CBCL_MAX_CENTROIDS = 44
DEFAULT_SEEDS = (1, 2, 3)
DEFAULT_K_SHOT = 5

CHECKPOINT_POLICY: TypeAlias = Literal["auto", "all", "final"]


class LearnerHParams(TypedDict, total=False):
    """Union of every learner's hyperparameters; each learner takes its own subset."""

    lr: float
    weight_decay: float
    momentum: float
    quota: int
    replay_samples: int
    shrinkage: float
    covariance: str
    variance_floor: float
    sample_variance: bool
    normalizer: str
    distance_threshold: float
    max_centroids: int
    merge_rule: str


def default_hparams(preset: str | None = None) -> LearnerHParams:
    lr = DEFAULT_LR
    if preset is not None:
        if preset not in LR_PRESETS:
            raise ConfigError(
                f"Unknown preset: {preset}. Please choose one of: {list(LR_PRESETS)}"
            )
        lr = LR_PRESETS[preset]
    return LearnerHParams(
        lr=lr,
        weight_decay=WEIGHT_DECAY,
        momentum=MOMENTUM,
        replay_samples=REPLAY_SAMPLES,
        shrinkage=SHRINKAGE,
        variance_floor=NB_VARIANCE_FLOOR,
        sample_variance=NB_SAMPLE_VARIANCE,
        distance_threshold=CBCL_DISTANCE_THRESHOLD,
        max_centroids=CBCL_MAX_CENTROIDS,
    )


@dataclass(frozen=True)
class NetScoreParams:
    alpha: float = 2.0
    beta: float = 0.25
    gamma: float = 0.25
    s: float = 20.0

    def as_kwargs(self) -> dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "s": self.s}


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    features: Path
    manifest: Path
    backbone: BackboneConstant
    preset: str | None = None


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    hparams: dict[str, typing.Any] = field(default_factory=dict)
    """Overrides on top of :func:`default_hparams`."""
    tag: str = ""
    """Distinguishes several specs of one learner, e.g. a learning-rate sweep."""

    @property
    def label(self) -> str:
        return f"{self.name}@{self.tag}" if self.tag else self.name


def expand_lr_grid(
    spec: LearnerSpec, grid: typing.Sequence[float] = LR_GRID
) -> tuple[LearnerSpec, ...]:
    """One spec per learning rate of ``grid``, tagged ``lr=<value>``."""
    if spec.name not in LEARNERS or "lr" not in LEARNERS[spec.name].cls.HPARAMS:
        raise ConfigError(f"Learner {spec.name} has no learning rate to sweep")
    if not grid:
        raise ConfigError("Learning-rate grid must not be empty")
    return tuple(
        LearnerSpec(spec.name, {**spec.hparams, "lr": float(lr)}, tag=f"lr={lr:g}")
        for lr in grid
    )


@dataclass(frozen=True)
class OrderingSpec:
    kind: str
    k: int = DEFAULT_K_SHOT

    @property
    def label(self) -> str:
        if self.kind == "k_shot_class_iid":
            return f"{self.kind}_{self.k}"
        return self.kind


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetConfig, ...]
    learners: tuple[LearnerSpec, ...]
    orderings: tuple[OrderingSpec, ...]
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    base_seed: int = 0
    out: Path = Path("results")
    workers: int = 1
    checkpoints: CHECKPOINT_POLICY = "auto"
    eval_jobs: int = 1
    netscore: NetScoreParams = field(default_factory=NetScoreParams)

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("Config lists no datasets")
        if not self.learners:
            raise ConfigError("Config lists no learners")
        if not self.orderings:
            raise ConfigError("Config lists no orderings")
        if not self.seeds:
            raise ConfigError("Seed list must not be empty")
        for spec in self.learners:
            if spec.name not in LEARNERS:
                raise ConfigError(
                    f"Unknown learner: {spec.name}. Please choose one of: {list(LEARNERS)}"
                )
        labels = [spec.label for spec in self.learners]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"Learner labels must be unique, got {labels}")
        for spec in self.orderings:
            if spec.kind not in ORDERING_KINDS:
                raise ConfigError(
                    f"Unknown ordering: {spec.kind}. "
                    f"Please choose one of: {list(ORDERING_KINDS)}"
                )
        if self.checkpoints not in typing.get_args(CHECKPOINT_POLICY):
            raise ConfigError(f"Unknown checkpoint policy: {self.checkpoints}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def learner_hparams(self, dataset: DatasetConfig, spec: LearnerSpec) -> dict[str, typing.Any]:
        hp: dict[str, typing.Any] = dict(default_hparams(dataset.preset))
        hp.update(spec.hparams)
        return hp

    def with_overrides(
        self,
        *,
        workers: int | None = None,
        base_seed: int | None = None,
        out: Path | str | None = None,
    ) -> "ExperimentConfig":
        changes: dict[str, typing.Any] = {}
        if workers is not None:
            changes["workers"] = workers
        if base_seed is not None:
            changes["base_seed"] = base_seed
        if out is not None:
            changes["out"] = Path(out)
        return replace(self, **changes) if changes else self


def _parse_backbone(raw: typing.Any) -> BackboneConstant:
    if isinstance(raw, str):
        if raw not in BACKBONES:
            raise ConfigError(
                f"Unknown backbone: {raw}. Please choose one of: {list(BACKBONES)}"
            )
        return BACKBONES[raw]
    if isinstance(raw, dict):
        try:
            return BackboneConstant(
                name=str(raw["name"]),
                feature_dim=int(raw["feature_dim"]),
                param_count=int(raw["param_count"]),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"Invalid backbone entry {raw}: {e}") from e
    raise ConfigError(f"Invalid backbone entry: {raw!r}")


def _parse_dataset(raw: dict[str, typing.Any], root: Path) -> DatasetConfig:
    try:
        features = root / raw["features"]
        manifest = root / raw["manifest"]
    except KeyError as e:
        raise ConfigError(f"Dataset entry missing {e}") from e
    for path in (features, manifest):
        if not path.exists():
            raise ConfigError(f"File not found: {path}")
    return DatasetConfig(
        name=str(raw.get("name", features.stem)),
        features=features,
        manifest=manifest,
        backbone=_parse_backbone(raw.get("backbone", "mobilenet_v3_small")),
        preset=raw.get("preset"),
    )


def _parse_learner(raw: typing.Any) -> tuple[LearnerSpec, ...]:
    if isinstance(raw, str):
        return (LearnerSpec(raw),)
    if isinstance(raw, dict) and "name" in raw:
        spec = LearnerSpec(str(raw["name"]), dict(raw.get("hparams", {})))
        grid = raw.get("lr_grid", False)
        if grid is True:
            return expand_lr_grid(spec)
        if isinstance(grid, list):
            return expand_lr_grid(spec, [float(lr) for lr in grid])
        return (spec,)
    raise ConfigError(f"Invalid learner entry: {raw!r}")


def _parse_ordering(raw: typing.Any) -> OrderingSpec:
    if isinstance(raw, str):
        return OrderingSpec(raw)
    if isinstance(raw, dict) and "kind" in raw:
        return OrderingSpec(str(raw["kind"]), int(raw.get("k", DEFAULT_K_SHOT)))
    raise ConfigError(f"Invalid ordering entry: {raw!r}")


def parse_config(doc: dict[str, typing.Any], root: Path | str = ".") -> ExperimentConfig:
    """Builds a config from a parsed JSON document; paths resolve against ``root``."""
    root = Path(root)
    if not isinstance(doc, dict):
        raise ConfigError("Config must be a JSON object")

    datasets = doc.get("datasets")
    if datasets is None and "dataset" in doc:
        datasets = [doc["dataset"]]
    if not datasets:
        raise ConfigError("Config lists no datasets")

    return ExperimentConfig(
        datasets=tuple(_parse_dataset(d, root) for d in datasets),
        learners=tuple(s for x in doc.get("learners", []) for s in _parse_learner(x)),
        orderings=tuple(_parse_ordering(x) for x in doc.get("orderings", [])),
        seeds=tuple(int(s) for s in doc.get("seeds", DEFAULT_SEEDS)),
        base_seed=int(doc.get("base_seed", 0)),
        out=root / doc.get("out", "results"),
        workers=int(doc.get("workers", 1)),
        checkpoints=doc.get("checkpoints", "auto"),
        eval_jobs=int(doc.get("eval_jobs", 1)),
        netscore=NetScoreParams(**doc.get("netscore", {})),
    )


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"File not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in {path}: {e}") from e
    config = parse_config(doc, root=path.parent)
    logger.debug("Loaded config %s", path)
    return config
