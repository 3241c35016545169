"""Tests for centroid-based concept learning."""

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from stream_cl._kernels import closest_same_class_pair
from stream_cl.learners import CBCL


def _min_same_class_distance(stacked: np.ndarray, labels: np.ndarray) -> tuple[int, float]:
    best_class, best = -1, np.inf
    for k in np.unique(labels):
        rows = stacked[labels == k]
        if rows.shape[0] < 2:
            continue
        d = pdist(rows).min()
        if d < best:
            best_class, best = int(k), float(d)
    return best_class, best


class TestKernel:
    """Compiled closest-pair search."""

    def test_finds_closest_same_class_pair(self):
        centroids = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.05, 5.0]])
        labels = np.array([0, 1, 1, 1])
        i, j, sq = closest_same_class_pair(centroids, labels)
        assert (i, j) == (2, 3)
        assert sq == pytest.approx(0.05**2)

    def test_no_pair(self):
        i, j, sq = closest_same_class_pair(np.zeros((2, 3)), np.array([0, 1]))
        assert (i, j) == (-1, -1)
        assert np.isinf(sq)


class TestCBCL:
    """Centroid growth, merging and scoring."""

    def test_close_samples_are_absorbed(self):
        learner = CBCL(2, 2, distance_threshold=1.0)
        learner.fit_one([0.0, 0.0], 0)
        learner.fit_one([0.5, 0.0], 0)
        assert learner.centroids.total == 1
        np.testing.assert_allclose(learner.centroids.centroids[0][0], [0.25, 0.0])
        assert learner.centroids.counts[0] == [2]

    def test_far_samples_start_new_centroids(self):
        learner = CBCL(2, 2, distance_threshold=1.0)
        learner.fit_one([0.0, 0.0], 0)
        learner.fit_one([3.0, 0.0], 0)
        assert learner.centroids.total == 2

    def test_weighted_merge(self):
        learner = CBCL(1, 1, distance_threshold=0.5, max_centroids=1)
        learner.fit_one([0.0], 0)
        learner.fit_one([0.0], 0)
        learner.fit_one([3.0], 0)
        assert learner.centroids.total == 1
        np.testing.assert_allclose(learner.centroids.centroids[0][0], [1.0])
        assert learner.centroids.counts[0] == [3]

    def test_printed_merge(self):
        learner = CBCL(1, 1, distance_threshold=0.5, max_centroids=1, merge_rule="printed")
        learner.fit_one([3.0], 0)
        learner.fit_one([3.0], 0)
        learner.fit_one([6.0], 0)
        np.testing.assert_allclose(learner.centroids.centroids[0][0], [3.0])

    def test_cap_must_cover_classes(self):
        with pytest.raises(ValueError):
            CBCL(50, 2, max_centroids=44)

    def test_scores_weighted_by_class_count(self):
        learner = CBCL(2, 1, distance_threshold=10.0)
        learner.fit_one([0.0], 0)
        learner.fit_one([4.0], 1)
        learner.fit_one([4.0], 1)
        np.testing.assert_allclose(learner.scores([1.0]), [-1.0, -6.0])

    def test_adversarial_stream_respects_cap(self):
        """Every sample opens a centroid; merges always pick the closest pair."""
        rng = np.random.default_rng(0)
        learner = CBCL(4, 4, distance_threshold=0.0, max_centroids=44)
        for _ in range(400):
            x = rng.standard_normal(4) * 10
            y = int(rng.integers(0, 4))
            learner.absorb(x, y)
            stacked, labels, _ = learner.centroids.stacked()
            over = learner.centroids.total > 44
            expected = _min_same_class_distance(stacked, labels) if over else None

            events = learner.enforce_capacity()
            assert learner.centroids.total <= 44
            if over:
                assert len(events) == 1
                assert events[0].class_id == expected[0]
                assert events[0].distance == pytest.approx(expected[1], rel=1e-9)
            else:
                assert events == []
        assert learner.stored_scalars() == 44 * 5 + 4

    def test_long_stream_keeps_bounded_state(self):
        rng = np.random.default_rng(1)
        learner = CBCL(4, 4, distance_threshold=0.0, max_centroids=8)
        for _ in range(2000):
            learner.fit_one(rng.standard_normal(4) * 10, int(rng.integers(0, 4)))
        assert learner.centroids.total == 8
        assert sum(map(len, learner.centroids.counts)) == 8
        lists = [v for v in vars(learner).values() if isinstance(v, list)]
        assert all(len(v) <= 8 for v in lists)
