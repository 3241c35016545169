import os
from pathlib import Path

from stream_cl.config import ExperimentConfig, NetScoreParams, load_config
from stream_cl.feature_store import (
    FeatureFileHeader,
    SyntheticDataset,
    save_dataset,
    synthesize_gaussian_dataset,
)
from stream_cl.harness import MatrixResult
from stream_cl.learners import OnlineLearner
from stream_cl.metrics import ExperimentRecord


class StreamCL:
    """
    Entry points for building datasets, running experiments and scoring them.
    """

    @staticmethod
    def synthesize(
        output_dir: Path | str,
        *,
        n_classes: int = 10,
        dim: int = 32,
        n_train_per_class: int = 100,
        n_test_per_class: int = 50,
        seed: int = 1,
        name: str = "synthetic",
        **kwargs,
    ) -> tuple[SyntheticDataset, Path, Path]:
        """
        Generates a Gaussian dataset and writes ``<name>.oclf`` + ``<name>.csv``.
        Extra keyword arguments go to the generator.
        """
        ds = synthesize_gaussian_dataset(
            n_classes, dim, n_train_per_class, n_test_per_class, seed=seed, **kwargs
        )
        features_path, manifest_path = save_dataset(
            ds.features, ds.manifest, output_dir, name
        )
        return ds, features_path, manifest_path

    @staticmethod
    def ingest(
        source: Path | str,
        output_path: Path | str,
        manifest_path: Path | str | None = None,
    ) -> FeatureFileHeader:
        from stream_cl.feature_store import ingest

        if not os.path.exists(source):
            raise FileNotFoundError(f"File not found: {source}")
        return ingest(source, output_path, manifest_path=manifest_path)

    @staticmethod
    def run_cell(
        config: ExperimentConfig | Path | str,
        learner: str,
        ordering: str,
        seed: int,
        *,
        dataset: str | None = None,
    ) -> ExperimentRecord:
        """
        Runs one cell of ``config``. ``learner``/``ordering`` must be listed in
        the config; ``dataset`` defaults to the first one.
        """
        from stream_cl.harness import run_cell

        if not isinstance(config, ExperimentConfig):
            config = load_config(config)
        dataset_cfg = (
            config.datasets[0]
            if dataset is None
            else next(d for d in config.datasets if d.name == dataset)
        )
        learner_spec = next(s for s in config.learners if s.label == learner)
        ordering_spec = next(s for s in config.orderings if s.label == ordering)
        return run_cell(config, dataset_cfg, learner_spec, ordering_spec, seed)

    @staticmethod
    def run_matrix(
        config: ExperimentConfig | Path | str, *, force: bool = False
    ) -> MatrixResult:
        from stream_cl.harness import run_matrix

        if not isinstance(config, ExperimentConfig):
            config = load_config(config)
        return run_matrix(config, force=force)

    @staticmethod
    def netscore(
        accuracy: float,
        params: float,
        seconds: float,
        params_weights: NetScoreParams | None = None,
    ) -> float:
        from stream_cl.metrics import netscore

        weights = params_weights or NetScoreParams()
        return netscore(accuracy, params, seconds, **weights.as_kwargs())

    @staticmethod
    def save(learner: OnlineLearner, directory: Path | str) -> Path:
        from stream_cl.learners import save_learner

        return save_learner(learner, directory)

    @staticmethod
    def load(directory: Path | str) -> OnlineLearner:
        from stream_cl.learners import load_learner

        return load_learner(directory)
