"""
Evaluation and scalar metrics.

NetScore is ``s * ln(a**alpha / (p**beta * c**gamma))`` with the natural
logarithm and accuracy ``a`` in percent. Back-solving the published tables
confirms the base: ``20 * ln(44.2**2 / (950048**0.25 * 1035**0.25))`` is
48.03 while base 10 would give 20.9.
"""

import csv
import json
import logging
import math
import typing
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed

from stream_cl.errors import EmptyPoolError
from stream_cl.feature_store import BackboneConstant

if typing.TYPE_CHECKING:
    from stream_cl.learners import OnlineLearner

logger = logging.getLogger(__name__)

NETSCORE_ALPHA = 2.0
NETSCORE_BETA = 0.25
NETSCORE_GAMMA = 0.25
NETSCORE_SCALE = 20.0

RECORD_CSV_COLUMNS = (
    "learner",
    "ordering",
    "backbone",
    "seed",
    "final_acc",
    "seconds",
    "params",
    "netscore",
)


@dataclass
class ExperimentRecord:
    learner: str
    ordering: str
    backbone: BackboneConstant
    seed: int
    final_accuracy: float
    curve: list[tuple[int, float]]
    wall_seconds: float
    param_count: int
    """Backbone parameters plus the learner's stored scalars."""
    netscore: float | None = None
    dataset: str = ""
    n_classes: int = 0
    dim: int = 0
    train_seconds: float = 0.0
    eval_seconds: float = 0.0
    hparams: dict[str, typing.Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.final_accuracy <= 100.0:
            raise ValueError(f"Accuracy out of range: {self.final_accuracy}")
        if not self.curve:
            raise ValueError("Accuracy curve must not be empty")
        if self.param_count < self.backbone.param_count:
            raise ValueError(
                f"param_count {self.param_count} below backbone "
                f"{self.backbone.param_count}"
            )
        if self.wall_seconds < 0:
            raise ValueError(f"Negative wall time: {self.wall_seconds}")

    @property
    def stored_scalars(self) -> int:
        return self.param_count - self.backbone.param_count

    def to_dict(self) -> dict[str, typing.Any]:
        doc = asdict(self)
        doc["curve"] = [[int(i), float(a)] for i, a in self.curve]
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, typing.Any]) -> "ExperimentRecord":
        doc = dict(doc)
        doc["backbone"] = BackboneConstant(**doc["backbone"])
        doc["curve"] = [(int(i), float(a)) for i, a in doc["curve"]]
        return cls(**doc)

    def csv_row(self) -> dict[str, typing.Any]:
        return {
            "learner": self.learner,
            "ordering": self.ordering,
            "backbone": self.backbone.name,
            "seed": self.seed,
            "final_acc": f"{self.final_accuracy:.4f}",
            "seconds": f"{self.wall_seconds:.4f}",
            "params": self.param_count,
            "netscore": "" if self.netscore is None else f"{self.netscore:.4f}",
        }


class EvaluationPool:
    """Labeled query vectors (the test split, possibly with extra samples)."""

    def __init__(self, features: typing.Any, labels: typing.Any):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64).ravel()
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"Pool shape mismatch: features {self.features.shape}, "
                f"labels {self.labels.shape}"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def filtered(self, classes: typing.Iterable[int] | None) -> "EvaluationPool":
        if classes is None:
            return self
        mask = np.isin(self.labels, np.fromiter(classes, dtype=np.int64))
        return EvaluationPool(self.features[mask], self.labels[mask])


def _predict_chunk(learner: "OnlineLearner", X: npt.NDArray[np.float64]) -> npt.NDArray[np.int64]:
    return learner.predict_batch(X)


def evaluate(
    learner: "OnlineLearner",
    pool: EvaluationPool,
    class_filter: typing.Iterable[int] | None = None,
    *,
    chunk_size: int = 4096,
    n_jobs: int = 1,
) -> float:
    """Top-1 accuracy (percent) over the pool restricted to ``class_filter``."""
    subset = pool.filtered(class_filter)
    if len(subset) == 0:
        raise EmptyPoolError()

    starts = range(0, len(subset), chunk_size)
    if n_jobs == 1 or len(starts) == 1:
        preds = [_predict_chunk(learner, subset.features[i : i + chunk_size]) for i in starts]
    else:
        # Prediction is read-only, threads share the learner without copies
        preds = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_predict_chunk)(learner, subset.features[i : i + chunk_size])
            for i in starts
        )
    predicted = np.concatenate(preds)
    correct = int(np.count_nonzero(predicted == subset.labels))
    return 100.0 * correct / len(subset)


def harmonic_mean(a_iid: float, a_class_iid: float) -> float:
    if a_iid < 0 or a_class_iid < 0:
        raise ValueError(f"Accuracies must be non-negative: {a_iid}, {a_class_iid}")
    total = a_iid + a_class_iid
    if total == 0:
        return 0.0
    return 2.0 * a_iid * a_class_iid / total


def mean_across_backbones(values: typing.Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("Need at least one value")
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def netscore(
    a: float,
    p: float,
    c: float,
    *,
    alpha: float = NETSCORE_ALPHA,
    beta: float = NETSCORE_BETA,
    gamma: float = NETSCORE_GAMMA,
    s: float = NETSCORE_SCALE,
) -> float:
    """
    ``s * ln(a**alpha / (p**beta * c**gamma))`` for accuracy ``a`` (percent),
    ``p`` parameters and ``c`` seconds.
    """
    if a <= 0 or p <= 0 or c <= 0:
        raise ValueError(f"NetScore needs positive inputs, got a={a}, p={p}, c={c}")
    return s * (alpha * math.log(a) - beta * math.log(p) - gamma * math.log(c))


def record_netscore(record: ExperimentRecord, **params: float) -> float | None:
    """NetScore of a record; ``None`` (with a warning) when accuracy is zero."""
    if record.final_accuracy <= 0 or record.wall_seconds <= 0:
        warnings.warn(
            f"NetScore undefined for {record.learner}/{record.ordering} "
            f"(accuracy={record.final_accuracy}, seconds={record.wall_seconds})",
            UserWarning,
            stacklevel=2,
        )
        return None
    return netscore(record.final_accuracy, record.param_count, record.wall_seconds, **params)


def netscore_project_samples(
    record: ExperimentRecord, factor: float, **params: float
) -> float:
    """NetScore with compute scaled by ``factor`` (more training samples)."""
    if factor < 1:
        raise ValueError(f"Scale factor must be >= 1, got {factor}")
    return netscore(
        record.final_accuracy, record.param_count, factor * record.wall_seconds, **params
    )


def netscore_project_classes(
    record: ExperimentRecord,
    memory: str | typing.Callable[[int], int],
    n_classes: int,
    *,
    hparams: dict[str, typing.Any] | None = None,
    **params: float,
) -> float:
    """
    NetScore with parameters recomputed for ``n_classes`` classes.

    ``memory`` is either a registered learner name, whose memory model is
    evaluated at ``(n_classes, record.dim)``, or a callable of the class count.
    """
    from stream_cl.learners import memory_model

    if n_classes < record.n_classes:
        raise ValueError(
            f"Projected class count {n_classes} below current {record.n_classes}"
        )
    if isinstance(memory, str):
        hp = record.hparams if hparams is None else hparams
        scalars = memory_model(memory, n_classes, record.dim, **hp)
    else:
        scalars = memory(n_classes)
    p = record.backbone.param_count + scalars
    return netscore(record.final_accuracy, p, record.wall_seconds, **params)


def normalize_for_summary(values: typing.Sequence[float]) -> list[float]:
    """Affine map to ``[0, 1]``; all-equal inputs map to 0."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return []
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return [0.0] * arr.size
    return ((arr - lo) / (hi - lo)).tolist()


SUMMARY_AXES = ("netscore", "video", "low_shot", "scale", "imbal")


def summary_axes(
    values: dict[str, dict[str, typing.Sequence[float]]],
) -> dict[str, dict[str, float]]:
    """
    Per-learner summary values.

    ``values[axis][learner]`` holds one number per backbone. Each axis is
    averaged across backbones, normalized across learners, and a ``mean``
    entry is added per learner over the axes it has.
    """
    unknown = set(values) - set(SUMMARY_AXES)
    if unknown:
        raise ValueError(
            f"Unknown summary axes {sorted(unknown)}. "
            f"Please choose from: {list(SUMMARY_AXES)}"
        )
    learners = sorted({name for per_axis in values.values() for name in per_axis})
    out: dict[str, dict[str, float]] = {name: {} for name in learners}
    for axis in (a for a in SUMMARY_AXES if a in values):
        per_learner = values[axis]
        names = sorted(per_learner)
        means = [mean_across_backbones(per_learner[n]) for n in names]
        for name, v in zip(names, normalize_for_summary(means)):
            out[name][axis] = v
    for name in learners:
        axes = list(out[name].values())
        out[name]["mean"] = float(np.mean(axes)) if axes else 0.0
    return out


def write_records(
    records: typing.Sequence[ExperimentRecord], directory: Path | str
) -> tuple[Path, Path]:
    """Writes ``records.jsonl`` and the companion ``records.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jsonl_path = directory / "records.jsonl"
    csv_path = directory / "records.csv"

    with open(jsonl_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RECORD_CSV_COLUMNS)
        writer.writeheader()
        for record in records:
            writer.writerow(record.csv_row())

    logger.info("Wrote %d records to %s", len(records), directory)
    return jsonl_path, csv_path


def read_records(path: Path | str) -> list[ExperimentRecord]:
    """Reads a ``records.jsonl`` file (or a directory holding one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "records.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")

    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(ExperimentRecord.from_dict(json.loads(line)))
    return records

