"""
Experiment execution: one cell is ``(dataset, learner, ordering, seed)``.

A cell builds its ordering plan, streams ``fit_one`` over the sequence,
evaluates at every checkpoint on the test data of the classes seen so far
and returns an :class:`~stream_cl.metrics.ExperimentRecord`. The matrix runs
cells in parallel, caches finished cells on disk and aggregates the records
into per-backbone, order-robustness and NetScore tables.
"""

import hashlib
import json
import logging
import time
import typing
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from stream_cl.config import DatasetConfig, ExperimentConfig, LearnerSpec, OrderingSpec
from stream_cl.errors import CellError
from stream_cl.feature_store import DatasetManifest, FeatureFile, read_manifest
from stream_cl.learners import OnlineLearner, make_learner
from stream_cl.metrics import (
    EvaluationPool,
    ExperimentRecord,
    evaluate,
    harmonic_mean,
    mean_across_backbones,
    record_netscore,
    write_records,
)
from stream_cl.rng import derive_seed
from stream_cl.stream_orderings import OrderingPlan, make_plan

logger = logging.getLogger(__name__)

FINAL_ONLY_BY_DEFAULT = ("iid", "class_iid")
STREAM_CHUNK = 4096
_LEARNER_SEED_SALT = 0x5EED


@dataclass(frozen=True)
class Cell:
    dataset: DatasetConfig
    learner: LearnerSpec
    ordering: OrderingSpec
    seed: int
    fingerprint: str = ""
    """Digest of every input that changes the cell's result."""

    @classmethod
    def of(
        cls,
        config: ExperimentConfig,
        dataset: DatasetConfig,
        learner: LearnerSpec,
        ordering: OrderingSpec,
        seed: int,
    ) -> "Cell":
        return cls(
            dataset,
            learner,
            ordering,
            seed,
            cell_fingerprint(config, dataset, learner, ordering, seed),
        )

    @property
    def key(self) -> str:
        key = f"{self.dataset.name}__{self.learner.label}__{self.ordering.label}__s{self.seed}"
        return f"{key}__{self.fingerprint}" if self.fingerprint else key


@dataclass
class LoadedDataset:
    features: FeatureFile
    manifest: DatasetManifest
    test_pool: EvaluationPool

    @classmethod
    def load(cls, dataset: DatasetConfig) -> "LoadedDataset":
        features = FeatureFile(dataset.features)
        dataset.backbone.check_dim(features.dim)
        manifest = read_manifest(dataset.manifest)
        manifest.validate_against(features.n_samples)
        test = manifest.test
        pool = EvaluationPool(
            features.get_rows([r.row_index for r in test]).reshape(len(test), features.dim),
            [r.class_id for r in test],
        )
        return cls(features=features, manifest=manifest, test_pool=pool)

    def pool_for(self, plan: OrderingPlan) -> EvaluationPool:
        if not plan.eval_extra:
            return self.test_pool
        extra = [self.manifest[s] for s in plan.eval_extra]
        X = self.features.get_rows([r.row_index for r in extra])
        return EvaluationPool(
            np.vstack([self.test_pool.features, X]),
            np.concatenate([self.test_pool.labels, [r.class_id for r in extra]]),
        )


def plan_seed(config: ExperimentConfig, seed: int) -> int:
    return derive_seed(config.base_seed, seed)


def learner_seed(config: ExperimentConfig, seed: int) -> int:
    return derive_seed(config.base_seed, seed, _LEARNER_SEED_SALT)


def resolved_hparams(
    config: ExperimentConfig, dataset: DatasetConfig, learner: LearnerSpec, seed: int
) -> dict[str, typing.Any]:
    """Defaults, preset and overrides, plus the derived learner seed."""
    hparams = config.learner_hparams(dataset, learner)
    hparams.setdefault("seed", learner_seed(config, seed))
    return hparams


def cell_fingerprint(
    config: ExperimentConfig,
    dataset: DatasetConfig,
    learner: LearnerSpec,
    ordering: OrderingSpec,
    seed: int,
) -> str:
    """Short digest over everything a cell's record depends on."""
    doc = {
        "base_seed": config.base_seed,
        "seed": seed,
        "features": str(Path(dataset.features).resolve()),
        "manifest": str(Path(dataset.manifest).resolve()),
        "backbone": asdict(dataset.backbone),
        "learner": learner.name,
        "hparams": resolved_hparams(config, dataset, learner, seed),
        "ordering": [ordering.kind, ordering.k],
        "checkpoints": config.checkpoints,
        "netscore": asdict(config.netscore),
    }
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def build_plan(
    config: ExperimentConfig,
    manifest: DatasetManifest,
    ordering: OrderingSpec,
    seed: int,
) -> OrderingPlan:
    plan = make_plan(ordering.kind, manifest, plan_seed(config, seed), k=ordering.k)  # type: ignore[arg-type]
    if config.checkpoints == "final" or (
        config.checkpoints == "auto" and ordering.kind in FINAL_ONLY_BY_DEFAULT
    ):
        plan = plan.final_only()
    return plan


def _stream(
    learner: OnlineLearner,
    dataset: LoadedDataset,
    sample_ids: typing.Sequence[int],
) -> None:
    records = [dataset.manifest[s] for s in sample_ids]
    for start in range(0, len(records), STREAM_CHUNK):
        chunk = records[start : start + STREAM_CHUNK]
        X = dataset.features.get_rows([r.row_index for r in chunk])
        for x, r in zip(X, chunk):
            learner.fit_one(x, r.class_id)


def run_cell(
    config: ExperimentConfig,
    dataset_cfg: DatasetConfig,
    learner_spec: LearnerSpec,
    ordering_spec: OrderingSpec,
    seed: int,
    *,
    dataset: LoadedDataset | None = None,
    plan_dir: Path | None = None,
) -> ExperimentRecord:
    """
    Runs a single cell. Any failure is re-raised as :class:`CellError`
    carrying the cell identity.
    """
    try:
        return _run_cell(
            config, dataset_cfg, learner_spec, ordering_spec, seed, dataset, plan_dir
        )
    except Exception as e:
        raise CellError(
            dataset_cfg.name, learner_spec.label, ordering_spec.label, seed, e
        ) from e


def _run_cell(
    config: ExperimentConfig,
    dataset_cfg: DatasetConfig,
    learner_spec: LearnerSpec,
    ordering_spec: OrderingSpec,
    seed: int,
    dataset: LoadedDataset | None,
    plan_dir: Path | None,
) -> ExperimentRecord:
    # 1. Build the plan and its evaluation pool
    if dataset is None:
        dataset = LoadedDataset.load(dataset_cfg)
    plan = build_plan(config, dataset.manifest, ordering_spec, seed)
    if plan_dir is not None:
        plan_dir.mkdir(parents=True, exist_ok=True)
        cell = Cell.of(config, dataset_cfg, learner_spec, ordering_spec, seed)
        plan.to_json(plan_dir / f"{cell.key}.plan.json")
    pool = dataset.pool_for(plan)

    # 2. Stream up to each checkpoint, then evaluate on the classes seen so far
    hparams = resolved_hparams(config, dataset_cfg, learner_spec, seed)
    n_classes = dataset.manifest.n_classes

    train_seconds = 0.0
    eval_seconds = 0.0
    curve: list[tuple[int, float]] = []

    wall_start = time.perf_counter()
    learner = make_learner(learner_spec.name, n_classes, dataset.features.dim, **hparams)
    consumed = 0
    for cp in plan.checkpoints:
        t0 = time.perf_counter()
        _stream(learner, dataset, plan.sequence[consumed : cp.position])
        t1 = time.perf_counter()
        accuracy = evaluate(learner, pool, cp.seen_classes, n_jobs=config.eval_jobs)
        t2 = time.perf_counter()
        train_seconds += t1 - t0
        eval_seconds += t2 - t1
        consumed = cp.position
        curve.append((cp.position, accuracy))
        logger.debug(
            "%s/%s seed=%d checkpoint %d: %.2f%%",
            learner_spec.label,
            ordering_spec.label,
            seed,
            cp.position,
            accuracy,
        )
    wall_seconds = time.perf_counter() - wall_start

    # 3. Assemble the record
    backbone = dataset_cfg.backbone
    record = ExperimentRecord(
        learner=learner_spec.label,
        ordering=ordering_spec.label,
        backbone=backbone,
        seed=seed,
        final_accuracy=curve[-1][1],
        curve=curve,
        wall_seconds=wall_seconds,
        param_count=backbone.param_count + learner.stored_scalars(),
        dataset=dataset_cfg.name,
        n_classes=n_classes,
        dim=dataset.features.dim,
        train_seconds=train_seconds,
        eval_seconds=eval_seconds,
        hparams=learner.hparams(),
    )
    record.netscore = record_netscore(record, **config.netscore.as_kwargs())
    return record


def iter_cells(config: ExperimentConfig) -> list[Cell]:
    return [
        Cell.of(config, d, learner, ordering, seed)
        for d in config.datasets
        for learner in config.learners
        for ordering in config.orderings
        for seed in config.seeds
    ]


def _cell_files(cache_dir: Path, key: str) -> list[Path]:
    """Cached files of a cell, oldest first (``key.json``, ``key.r1.json``, ...)."""
    files = []
    base = cache_dir / f"{key}.json"
    if base.exists():
        files.append(base)
    reruns = []
    for path in cache_dir.glob(f"{key}.r*.json"):
        suffix = path.name[len(key) + 2 : -len(".json")]
        if suffix.isdigit():
            reruns.append((int(suffix), path))
    files.extend(p for _, p in sorted(reruns))
    return files


def _new_cell_file(cache_dir: Path, key: str) -> Path:
    existing = _cell_files(cache_dir, key)
    if not existing:
        return cache_dir / f"{key}.json"
    return cache_dir / f"{key}.r{len(existing)}.json"


def _read_cell(path: Path) -> ExperimentRecord:
    with open(path, encoding="utf-8") as f:
        return ExperimentRecord.from_dict(json.load(f))


def _write_cell(path: Path, record: ExperimentRecord) -> None:
    # exclusive create: cell files are never rewritten
    with open(path, "x", encoding="utf-8") as f:
        json.dump(record.to_dict(), f, indent=2, sort_keys=True)


def _run_cell_safe(
    config: ExperimentConfig, cell: Cell, plan_dir: Path
) -> tuple[str, ExperimentRecord | None, str | None]:
    try:
        record = run_cell(
            config, cell.dataset, cell.learner, cell.ordering, cell.seed, plan_dir=plan_dir
        )
        return cell.key, record, None
    except CellError as e:
        return cell.key, None, str(e)


@dataclass(frozen=True)
class AggregateTable:
    title: str
    columns: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float | None, ...]], ...]

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "title": self.title,
            "columns": list(self.columns),
            "rows": [{"label": label, "values": list(values)} for label, values in self.rows],
        }

    def row(self, label: str) -> dict[str, float | None]:
        for name, values in self.rows:
            if name == label:
                return dict(zip(self.columns, values))
        raise KeyError(label)


@dataclass
class MatrixResult:
    records: list[ExperimentRecord]
    tables: list[AggregateTable]
    failures: list[dict[str, str]] = field(default_factory=list)
    run_dir: Path | None = None

    @property
    def ok(self) -> bool:
        return not self.failures


def _seed_means(
    records: typing.Iterable[ExperimentRecord],
    value: typing.Callable[[ExperimentRecord], float | None],
) -> dict[tuple[str, str, str], float]:
    """Mean over seeds keyed by ``(learner, ordering, backbone)``."""
    groups: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    for r in records:
        v = value(r)
        if v is not None:
            groups[(r.learner, r.ordering, r.backbone.name)].append(v)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def _per_backbone_table(
    title: str,
    records: list[ExperimentRecord],
    value: typing.Callable[[ExperimentRecord], float | None],
) -> AggregateTable:
    backbones = list(dict.fromkeys(r.backbone.name for r in records))
    rows_keys = list(dict.fromkeys((r.learner, r.ordering) for r in records))
    means = _seed_means(records, value)
    rows = []
    for learner, ordering in rows_keys:
        values = [means.get((learner, ordering, b)) for b in backbones]
        present = [v for v in values if v is not None]
        mean = mean_across_backbones(present) if present else None
        rows.append((f"{learner}/{ordering}", tuple(values) + (mean,)))
    return AggregateTable(title, tuple(backbones) + ("mean",), tuple(rows))


def _order_robustness_table(records: list[ExperimentRecord]) -> AggregateTable | None:
    means = _seed_means(records, lambda r: r.final_accuracy)
    per_learner: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (learner, ordering, _), v in means.items():
        if ordering in ("iid", "class_iid"):
            per_learner[learner][ordering].append(v)

    rows = []
    for learner, by_ordering in per_learner.items():
        if "iid" not in by_ordering or "class_iid" not in by_ordering:
            continue
        a_iid = mean_across_backbones(by_ordering["iid"])
        a_cls = mean_across_backbones(by_ordering["class_iid"])
        rows.append((learner, (a_iid, a_cls, harmonic_mean(a_iid, a_cls))))
    if not rows:
        return None
    return AggregateTable("order robustness", ("iid", "class_iid", "h_mean"), tuple(rows))


def build_tables(records: list[ExperimentRecord]) -> list[AggregateTable]:
    if not records:
        return []
    tables = [
        _per_backbone_table("final accuracy (%)", records, lambda r: r.final_accuracy),
        _per_backbone_table("netscore", records, lambda r: r.netscore),
    ]
    robustness = _order_robustness_table(records)
    if robustness is not None:
        tables.append(robustness)
    return tables


def write_tables(tables: list[AggregateTable], directory: Path) -> Path:
    """Writes ``aggregates.json``; an existing file is never replaced."""
    path = directory / "aggregates.json"
    if path.exists():
        raise FileExistsError(f"Refusing to overwrite {path}")
    with open(path, "x", encoding="utf-8") as f:
        json.dump([t.to_dict() for t in tables], f, indent=2)
    return path


def _new_run_dir(out: Path) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    run_dir = out / f"run-{stamp}"
    n = 1
    while run_dir.exists():
        run_dir = out / f"run-{stamp}-{n}"
        n += 1
    run_dir.mkdir(parents=True)
    return run_dir


def run_matrix(
    config: ExperimentConfig,
    *,
    force: bool = False,
    progress: bool = True,
) -> MatrixResult:
    """
    Runs every ``dataset x learner x ordering x seed`` cell.

    Finished cells found under ``<out>/cells`` are reused unless ``force``;
    forced reruns are written next to the old files, never over them. A
    failing cell is recorded and the rest of the matrix still runs.
    """
    out = Path(config.out)
    cache_dir = out / "cells"
    cache_dir.mkdir(parents=True, exist_ok=True)
    run_dir = _new_run_dir(out)
    plan_dir = run_dir / "plans"

    cells = iter_cells(config)
    by_key: dict[str, ExperimentRecord] = {}
    pending: list[Cell] = []
    for cell in cells:
        cached = _cell_files(cache_dir, cell.key)
        if cached and not force:
            by_key[cell.key] = _read_cell(cached[-1])
            logger.debug("Reusing cached cell %s", cell.key)
        else:
            pending.append(cell)

    logger.info(
        "Running %d of %d cells (%d cached) with %d worker(s)",
        len(pending),
        len(cells),
        len(cells) - len(pending),
        config.workers,
    )

    failures: list[dict[str, str]] = []
    results = Parallel(n_jobs=config.workers, return_as="generator_unordered")(
        delayed(_run_cell_safe)(config, cell, plan_dir) for cell in pending
    )
    for key, record, error in tqdm(
        results, total=len(pending), desc="cells", disable=not progress or not pending
    ):
        if record is None:
            logger.warning("%s", error)
            failures.append({"cell": key, "error": error or ""})
            continue
        _write_cell(_new_cell_file(cache_dir, key), record)
        by_key[key] = record
        logger.info(
            "%s: %.2f%% in %.2fs", key, record.final_accuracy, record.wall_seconds
        )

    records = [by_key[c.key] for c in cells if c.key in by_key]
    tables = build_tables(records)
    write_records(records, run_dir)
    write_tables(tables, run_dir)
    if failures:
        with open(run_dir / "failures.json", "w", encoding="utf-8") as f:
            json.dump(failures, f, indent=2)
        logger.warning("%d cell(s) failed, see %s", len(failures), run_dir / "failures.json")

    return MatrixResult(records=records, tables=tables, failures=failures, run_dir=run_dir)
