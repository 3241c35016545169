"""Tests for cell execution, the experiment matrix and config loading."""

import json
from dataclasses import replace

import pytest

from stream_cl.config import (
    LR_GRID,
    DatasetConfig,
    ExperimentConfig,
    LearnerSpec,
    OrderingSpec,
    default_hparams,
    expand_lr_grid,
    load_config,
    parse_config,
)
from stream_cl.errors import CellError, ConfigError
from stream_cl.feature_store import (
    BackboneConstant,
    long_tail_counts,
    save_dataset,
    synthesize_gaussian_dataset,
)
from stream_cl.harness import LoadedDataset, iter_cells, run_cell, run_matrix
from stream_cl.metrics import harmonic_mean, read_records

TOY_BACKBONE = BackboneConstant("toy32", 32, 10_000)


def _config(files, out, learners=("ncm",), orderings=("iid",), seeds=(1,), **kwargs):
    features, manifest = files
    dataset = DatasetConfig("toy", features, manifest, TOY_BACKBONE)
    return ExperimentConfig(
        datasets=(dataset,),
        learners=tuple(LearnerSpec(name) for name in learners),
        orderings=tuple(OrderingSpec(kind) for kind in orderings),
        seeds=tuple(seeds),
        out=out,
        **kwargs,
    )


@pytest.fixture(scope="module")
def toy_loaded(toy_files):
    config = _config(toy_files, None)
    return config, LoadedDataset.load(config.datasets[0])


def _run(toy_loaded, learner, ordering, seed=1, **hparams):
    config, dataset = toy_loaded
    return run_cell(
        config,
        config.datasets[0],
        LearnerSpec(learner, hparams),
        OrderingSpec(ordering),
        seed,
        dataset=dataset,
    )


class TestRunCell:
    """Single cells on the 10-class toy dataset."""

    def test_ncm_iid(self, toy_loaded):
        record = _run(toy_loaded, "ncm", "iid")
        assert record.final_accuracy > 99.0
        assert len(record.curve) == 1
        assert record.curve[0][0] == 1000
        assert record.param_count == TOY_BACKBONE.param_count + 10 * 32 + 10
        assert record.netscore is not None
        assert record.wall_seconds >= record.train_seconds

    def test_deterministic(self, toy_loaded):
        a = _run(toy_loaded, "replay_2pc", "class_iid", seed=2)
        b = _run(toy_loaded, "replay_2pc", "class_iid", seed=2)
        assert a.final_accuracy == b.final_accuracy
        assert a.curve == b.curve

    def test_low_shot_checkpoint_per_class(self, toy_loaded):
        record = _run(toy_loaded, "ncm", "low_shot_instance")
        assert len(record.curve) == 10
        assert [pos for pos, _ in record.curve] == [10 * i for i in range(1, 11)]

    def test_instance_checkpoints(self, toy_loaded):
        record = _run(toy_loaded, "slda", "instance")
        positions = [pos for pos, _ in record.curve]
        assert positions == sorted(positions)
        assert positions[-1] == 1000

    def test_k_shot(self, toy_loaded):
        config, dataset = toy_loaded
        record = run_cell(
            config,
            config.datasets[0],
            LearnerSpec("ncm"),
            OrderingSpec("k_shot_class_iid", k=5),
            1,
            dataset=dataset,
        )
        assert record.ordering == "k_shot_class_iid_5"
        assert record.curve[-1][0] == 50
        assert record.final_accuracy > 95.0

    def test_forgetting_trend(self, toy_loaded):
        iid = _run(toy_loaded, "finetune", "iid").final_accuracy
        class_iid = _run(toy_loaded, "finetune", "class_iid").final_accuracy
        assert class_iid < 0.4 * iid

    @pytest.mark.parametrize("learner", ["ncm", "slda"])
    def test_order_robust_learners(self, toy_loaded, learner):
        iid = _run(toy_loaded, learner, "iid").final_accuracy
        class_iid = _run(toy_loaded, learner, "class_iid").final_accuracy
        assert abs(iid - class_iid) < 2.0

    def test_seeds_agree_for_order_agnostic_learner(self, toy_loaded):
        accs = [_run(toy_loaded, "ncm", "iid", seed=s).final_accuracy for s in (1, 2, 3)]
        assert max(accs) - min(accs) < 0.1

    @pytest.mark.parametrize("ordering", ["iid", "class_iid"])
    def test_long_tailed_dataset(self, tmp_path, ordering):
        ds = synthesize_gaussian_dataset(
            6, 32, 60, 20, class_mean_scale=20.0, seed=3, imbalance_ratio=20.0
        )
        files = save_dataset(ds.features, ds.manifest, tmp_path, "long_tail")
        config = _config(files, tmp_path)
        record = run_cell(
            config, config.datasets[0], LearnerSpec("ncm"), OrderingSpec(ordering), 1
        )
        assert record.curve[-1][0] == sum(long_tail_counts(60, 6, 20.0))
        assert record.final_accuracy > 95.0

    def test_failure_is_wrapped(self, toy_loaded):
        with pytest.raises(CellError) as info:
            _run(toy_loaded, "cbcl", "iid", max_centroids=3)
        assert info.value.learner == "cbcl"
        assert info.value.seed == 1


class TestMatrix:
    """Matrix execution, caching and aggregation."""

    def test_counts_and_tables(self, toy_files, tmp_path):
        config = _config(toy_files, tmp_path, learners=("ncm", "slda"), seeds=(1, 2, 3))
        assert len(iter_cells(config)) == 6
        result = run_matrix(config, progress=False)
        assert result.ok
        assert len(result.records) == 6
        accuracy = result.tables[0]
        assert accuracy.title == "final accuracy (%)"
        assert accuracy.columns == ("toy32", "mean")
        assert [label for label, _ in accuracy.rows] == ["ncm/iid", "slda/iid"]
        assert read_records(result.run_dir) == result.records
        assert (result.run_dir / "records.csv").exists()
        assert (result.run_dir / "aggregates.json").exists()

    def test_cache_reuse_and_force(self, toy_files, tmp_path):
        config = _config(toy_files, tmp_path, seeds=(1, 2))
        first = run_matrix(config, progress=False)
        cell_files = sorted(p.name for p in (tmp_path / "cells").iterdir())
        assert len(cell_files) == 2

        second = run_matrix(config, progress=False)
        assert [r.wall_seconds for r in second.records] == [r.wall_seconds for r in first.records]
        assert sorted(p.name for p in (tmp_path / "cells").iterdir()) == cell_files

        run_matrix(config, force=True, progress=False)
        names = sorted(p.name for p in (tmp_path / "cells").iterdir())
        assert len(names) == 4
        assert sum(name.endswith(".r1.json") for name in names) == 2

    def test_changed_inputs_are_not_reused(self, toy_files, tmp_path):
        config = _config(toy_files, tmp_path, seeds=(1, 2))
        run_matrix(config, progress=False)
        reseeded = replace(config, base_seed=99)
        assert {c.key for c in iter_cells(reseeded)}.isdisjoint(
            c.key for c in iter_cells(config)
        )
        run_matrix(reseeded, progress=False)
        names = [p.name for p in (tmp_path / "cells").iterdir()]
        assert len(names) == 4
        assert not any(".r1." in name for name in names)

        run_matrix(reseeded, progress=False)
        assert len(list((tmp_path / "cells").iterdir())) == 4

    def test_changed_hparams_are_not_reused(self, toy_files, tmp_path):
        config = replace(
            _config(toy_files, tmp_path),
            learners=(LearnerSpec("finetune", {"lr": 1e-3}),),
        )
        first = run_matrix(config, progress=False)
        assert first.records[0].hparams["lr"] == 1e-3

        frozen = replace(config, learners=(LearnerSpec("finetune", {"lr": 0.0}),))
        second = run_matrix(frozen, progress=False)
        assert second.records[0].hparams["lr"] == 0.0
        assert len(list((tmp_path / "cells").iterdir())) == 2

    def test_failing_cell_does_not_stop_matrix(self, toy_files, tmp_path):
        features, manifest = toy_files
        config = ExperimentConfig(
            datasets=(DatasetConfig("toy", features, manifest, TOY_BACKBONE),),
            learners=(LearnerSpec("ncm"), LearnerSpec("cbcl", {"max_centroids": 2})),
            orderings=(OrderingSpec("iid"),),
            seeds=(1,),
            out=tmp_path,
        )
        result = run_matrix(config, progress=False)
        assert not result.ok
        assert len(result.records) == 1
        assert result.failures[0]["cell"] == iter_cells(config)[1].key
        assert json.loads((result.run_dir / "failures.json").read_text())

    def test_harmonic_mean_column(self, toy_files, tmp_path):
        config = _config(
            toy_files, tmp_path, learners=("ncm", "finetune"), orderings=("iid", "class_iid")
        )
        result = run_matrix(config, progress=False)
        robustness = next(t for t in result.tables if t.title == "order robustness")
        assert robustness.columns == ("iid", "class_iid", "h_mean")
        for label, (a_iid, a_cls, h) in robustness.rows:
            assert h == pytest.approx(harmonic_mean(a_iid, a_cls))
            assert h <= (a_iid + a_cls) / 2 + 1e-9
        finetune = robustness.row("finetune")
        assert finetune["h_mean"] < robustness.row("ncm")["h_mean"]

    def test_plans_saved(self, toy_files, tmp_path):
        config = _config(toy_files, tmp_path, orderings=("class_iid",))
        result = run_matrix(config, progress=False)
        plans = list((result.run_dir / "plans").glob("*.plan.json"))
        assert len(plans) == 1


class TestConfig:
    """JSON config loading."""

    def _write(self, directory, toy_files, **extra):
        features, manifest = toy_files
        doc = {
            "datasets": [
                {
                    "name": "toy",
                    "features": str(features),
                    "manifest": str(manifest),
                    "backbone": {"name": "toy32", "feature_dim": 32, "param_count": 10000},
                    "preset": "places365",
                }
            ],
            "learners": ["ncm", {"name": "replay_20pc", "hparams": {"lr": 0.01}}],
            "orderings": ["iid", {"kind": "k_shot_class_iid", "k": 3}],
            "seeds": [4, 5],
        }
        doc.update(extra)
        path = directory / "config.json"
        path.write_text(json.dumps(doc))
        return path

    def test_load(self, toy_files, tmp_path):
        config = load_config(self._write(tmp_path, toy_files))
        assert config.seeds == (4, 5)
        assert config.datasets[0].backbone == TOY_BACKBONE
        assert [o.label for o in config.orderings] == ["iid", "k_shot_class_iid_3"]
        assert config.out == tmp_path / "results"
        replay = config.learners[1]
        hp = config.learner_hparams(config.datasets[0], replay)
        assert hp["lr"] == 0.01
        assert config.learner_hparams(config.datasets[0], config.learners[0])["lr"] == 1e-4

    def test_overrides(self, toy_files, tmp_path):
        config = load_config(self._write(tmp_path, toy_files)).with_overrides(
            workers=2, base_seed=9, out=tmp_path / "other"
        )
        assert (config.workers, config.base_seed) == (2, 9)
        assert config.out == tmp_path / "other"

    def test_unknown_learner(self, toy_files, tmp_path):
        with pytest.raises(ConfigError, match="Unknown learner"):
            load_config(self._write(tmp_path, toy_files, learners=["nope"]))

    def test_unknown_ordering(self, toy_files, tmp_path):
        with pytest.raises(ConfigError, match="Unknown ordering"):
            load_config(self._write(tmp_path, toy_files, orderings=["shuffled"]))

    def test_lr_grid_expands_learner(self, toy_files, tmp_path):
        config = load_config(
            self._write(
                tmp_path,
                toy_files,
                learners=[
                    {"name": "finetune", "lr_grid": True},
                    {"name": "replay_2pc", "lr_grid": [0.5, 0.05]},
                ],
            )
        )
        labels = [spec.label for spec in config.learners]
        assert labels == [f"finetune@lr={lr:g}" for lr in LR_GRID] + [
            "replay_2pc@lr=0.5",
            "replay_2pc@lr=0.05",
        ]
        dataset = config.datasets[0]
        assert [config.learner_hparams(dataset, s)["lr"] for s in config.learners[:4]] == list(
            LR_GRID
        )

    def test_lr_grid_needs_learning_rate(self):
        with pytest.raises(ConfigError, match="no learning rate"):
            expand_lr_grid(LearnerSpec("ncm"))

    def test_duplicate_learner_labels(self, toy_files, tmp_path):
        with pytest.raises(ConfigError, match="unique"):
            load_config(self._write(tmp_path, toy_files, learners=["ncm", "ncm"]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_missing_features(self, tmp_path):
        doc = {"dataset": {"features": "x.oclf", "manifest": "x.csv"}, "learners": ["ncm"]}
        with pytest.raises(ConfigError, match="File not found"):
            parse_config(doc, tmp_path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="Invalid JSON"):
            load_config(path)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            default_hparams("imagenet")
