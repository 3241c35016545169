"""Tests for evaluation, aggregation and NetScore."""

import math

import numpy as np
import pytest

from stream_cl.errors import EmptyPoolError, MemoryModelUnavailableError
from stream_cl.feature_store import BACKBONES, BackboneConstant
from stream_cl.learners import FineTune, NearestClassMean
from stream_cl.metrics import (
    EvaluationPool,
    ExperimentRecord,
    evaluate,
    harmonic_mean,
    mean_across_backbones,
    netscore,
    netscore_project_classes,
    netscore_project_samples,
    normalize_for_summary,
    read_records,
    record_netscore,
    summary_axes,
    write_records,
)

# (accuracy %, parameters, seconds, published NetScore) with beta = gamma = 0.25
NETSCORE_QUARTER = [
    (44.2, 950048, 1035, 48.0),
    (9.8, 950048, 1041, -12.3),
    (45.0, 1410848, 1052, 46.7),
    (44.5, 1281824, 1040, 46.8),
    (40.5, 996128, 1053, 44.2),
    (47.4, 3010352, 1078, 44.8),
    (53.0, 5082748, 1211, 46.1),
    (51.4, 6564384, 1501, 42.5),
    (46.3, 11196992, 1073, 37.4),
    (44.9, 4058748, 1635, 39.1),
    (2.1, 11237952, 1314, -87.4),
]

# same with beta = gamma = 0.5
NETSCORE_HALF = [
    (9.8, 950048, 1041, -115.9),
    (44.2, 950048, 1035, -55.5),
    (36.6, 3087152, 1329, -77.3),
    (8.2, 11196992, 1076, -147.8),
    (53.0, 7588384, 1513, -72.8),
]


def _record(**overrides) -> ExperimentRecord:
    mnet = BACKBONES["mobilenet_v3_small"]
    fields = dict(
        learner="ncm",
        ordering="iid",
        backbone=mnet,
        seed=1,
        final_accuracy=44.2,
        curve=[(100, 44.2)],
        wall_seconds=1035.0,
        param_count=mnet.param_count + NearestClassMean.memory_model(40, 576),
        n_classes=40,
        dim=576,
    )
    fields.update(overrides)
    return ExperimentRecord(**fields)


class _ConstantLearner(FineTune):
    """Always predicts class 0."""

    def scores_batch(self, X):
        X = self._as_batch(X)
        scores = np.zeros((X.shape[0], self.n_classes))
        scores[:, 0] = 1.0
        return scores


class _RandomLearner(FineTune):
    def scores_batch(self, X):
        X = self._as_batch(X)
        rng = np.random.default_rng(X.shape[0])
        return rng.random((X.shape[0], self.n_classes))


class TestEvaluate:
    """Top-1 accuracy over filtered pools."""

    def test_constant_predictor(self):
        pool = EvaluationPool(np.zeros((10, 2)), np.zeros(10))
        assert evaluate(_ConstantLearner(3, 2), pool) == 100.0

    def test_random_predictor_near_chance(self):
        K, n = 5, 20_000
        labels = np.random.default_rng(0).integers(0, K, size=n)
        pool = EvaluationPool(np.zeros((n, 2)), labels)
        acc = evaluate(_RandomLearner(K, 2), pool, chunk_size=n)
        sigma = 100.0 * math.sqrt((1 / K) * (1 - 1 / K) / n)
        assert abs(acc - 100.0 / K) < 5 * sigma

    def test_filter_to_missing_classes(self):
        pool = EvaluationPool(np.zeros((4, 2)), [0, 0, 1, 1])
        with pytest.raises(EmptyPoolError, match="empty pool"):
            evaluate(_ConstantLearner(3, 2), pool, class_filter={2})

    def test_filter(self):
        pool = EvaluationPool(np.zeros((4, 2)), [0, 0, 1, 1])
        assert evaluate(_ConstantLearner(3, 2), pool, class_filter={0, 1}) == 50.0

    def test_threaded_chunks_match_serial(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((500, 3))
        y = rng.integers(0, 3, size=500)
        learner = NearestClassMean(3, 3)
        for x, label in zip(X[:100], y[:100]):
            learner.fit_one(x, label)
        pool = EvaluationPool(X, y)
        assert evaluate(learner, pool, chunk_size=64, n_jobs=2) == evaluate(learner, pool)


class TestAggregation:
    def test_harmonic_mean(self):
        assert harmonic_mean(44.1, 32.3) == pytest.approx(37.3, abs=0.05)
        assert harmonic_mean(39.3, 39.3) == pytest.approx(39.3)
        assert harmonic_mean(50.0, 0.0) == 0.0
        assert harmonic_mean(0.0, 0.0) == 0.0

    def test_harmonic_below_arithmetic(self):
        for a, b in [(10.0, 90.0), (33.0, 34.0), (1.0, 2.0)]:
            assert harmonic_mean(a, b) < (a + b) / 2

    def test_negative_input(self):
        with pytest.raises(ValueError):
            harmonic_mean(-1.0, 5.0)

    def test_mean_across_backbones(self):
        assert mean_across_backbones([95.6, 98.2, 98.8, 98.8, 95.0]) == pytest.approx(97.3, abs=0.05)
        assert mean_across_backbones([89.3, 94.2, 97.0, 97.4, 90.7]) == pytest.approx(93.7, abs=0.05)
        assert mean_across_backbones([12.5]) == 12.5
        with pytest.raises(ValueError):
            mean_across_backbones([])


class TestNetScore:
    """NetScore against published triplets."""

    @pytest.mark.parametrize("a,p,c,expected", NETSCORE_QUARTER)
    def test_quarter_exponents(self, a, p, c, expected):
        assert netscore(a, p, c) == pytest.approx(expected, abs=0.15)

    @pytest.mark.parametrize("a,p,c,expected", NETSCORE_HALF)
    def test_half_exponents(self, a, p, c, expected):
        assert netscore(a, p, c, beta=0.5, gamma=0.5) == pytest.approx(expected, abs=0.2)

    def test_unit_inputs(self):
        assert netscore(1, 1, 1) == 0.0

    @pytest.mark.parametrize("a,p,c", [(0, 1, 1), (1, 0, 1), (1, 1, -1)])
    def test_non_positive(self, a, p, c):
        with pytest.raises(ValueError):
            netscore(a, p, c)

    def test_rescaling_invariance(self):
        lam = 1.7
        base = netscore(40.0, 1e6, 500.0)
        assert netscore(40.0 * lam, 1e6 * lam ** (2.0 / 0.25), 500.0) == pytest.approx(base)

    def test_zero_accuracy_record_warns(self):
        record = _record(final_accuracy=0.0, curve=[(1, 0.0)])
        with pytest.warns(UserWarning):
            assert record_netscore(record) is None


class TestProjections:
    """Scaling projections."""

    def test_samples_identity_and_decrease(self):
        record = _record()
        base = netscore(44.2, record.param_count, 1035.0)
        assert netscore_project_samples(record, 1.0) == pytest.approx(base)
        drop = base - netscore_project_samples(record, 2.0)
        assert drop == pytest.approx(20 * 0.25 * math.log(2), abs=1e-9)
        values = [netscore_project_samples(record, f) for f in (1, 2, 4, 8)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_samples_factor_below_one(self):
        with pytest.raises(ValueError):
            netscore_project_samples(_record(), 0.5)

    def test_classes_identity(self):
        record = _record()
        base = netscore(44.2, record.param_count, 1035.0)
        assert netscore_project_classes(record, "ncm", 40) == pytest.approx(base)

    def test_replay_drops_faster_than_ncm(self):
        ncm = _record()
        mnet = ncm.backbone
        replay = _record(
            learner="replay_20pc",
            param_count=mnet.param_count + 40 * 576 + 40 + 20 * 40 * 576,
            hparams={"quota": 20},
        )
        ncm_drop = netscore_project_classes(ncm, "ncm", 40) - netscore_project_classes(
            ncm, "ncm", 400
        )
        replay_drop = netscore_project_classes(
            replay, "replay_20pc", 40
        ) - netscore_project_classes(replay, "replay_20pc", 400)
        assert replay_drop > ncm_drop > 0

    def test_classes_monotone(self):
        record = _record()
        values = [netscore_project_classes(record, "ncm", k) for k in (40, 80, 160, 320)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_callable_memory(self):
        record = _record()
        value = netscore_project_classes(record, lambda k: 10 * k, 50)
        assert value == pytest.approx(netscore(44.2, record.backbone.param_count + 500, 1035.0))

    def test_unknown_memory_model(self):
        with pytest.raises(MemoryModelUnavailableError):
            netscore_project_classes(_record(), "mystery", 50)

    def test_fewer_classes(self):
        with pytest.raises(ValueError):
            netscore_project_classes(_record(), "ncm", 10)


class TestSummary:
    def test_normalize(self):
        assert normalize_for_summary([10, 20, 30]) == [0.0, 0.5, 1.0]
        assert normalize_for_summary([3, 7]) == [0.0, 1.0]
        assert normalize_for_summary([5, 5, 5]) == [0.0, 0.0, 0.0]

    def test_normalize_permutation_equivariant(self):
        values = [4.0, -1.0, 9.0, 2.5]
        perm = [2, 0, 3, 1]
        out = normalize_for_summary(values)
        assert normalize_for_summary([values[i] for i in perm]) == [out[i] for i in perm]

    def test_summary_axes(self):
        axes = summary_axes(
            {
                "netscore": {"ncm": [48.0, 46.0], "finetune": [30.0, 32.0]},
                "video": {"ncm": [70.0], "finetune": [40.0]},
            }
        )
        assert axes["ncm"] == {"netscore": 1.0, "video": 1.0, "mean": 1.0}
        assert axes["finetune"]["mean"] == 0.0

    def test_summary_axes_follow_canonical_order(self):
        axes = summary_axes(
            {
                "imbal": {"ncm": [1.0], "slda": [2.0]},
                "netscore": {"ncm": [5.0], "slda": [3.0]},
            }
        )
        assert list(axes["ncm"]) == ["netscore", "imbal", "mean"]

    def test_unknown_summary_axis(self):
        with pytest.raises(ValueError, match="Unknown summary axes"):
            summary_axes({"latency": {"ncm": [1.0]}})


class TestRecords:
    """Record validation and persistence."""

    def test_invariants(self):
        with pytest.raises(ValueError):
            _record(final_accuracy=101.0)
        with pytest.raises(ValueError):
            _record(curve=[])
        with pytest.raises(ValueError):
            _record(param_count=10)

    def test_jsonl_and_csv(self, temp_dir):
        records = [
            _record(netscore=48.0),
            _record(seed=2, backbone=BackboneConstant("toy", 8, 0), param_count=72),
        ]
        jsonl, csv_path = write_records(records, temp_dir / "records")
        loaded = read_records(jsonl)
        assert loaded == records
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "learner,ordering,backbone,seed,final_acc,seconds,params,netscore"
        assert len(lines) == 3
        assert read_records(temp_dir / "records") == records
