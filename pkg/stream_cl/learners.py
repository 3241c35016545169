"""
Online continual learners over fixed feature vectors.

Every learner consumes one labeled vector per ``fit_one`` call and scores
queries for all ``K`` classes of the manifest. ``predict`` is the argmax of
``scores`` with ties going to the lowest class index. Prototype learners
score classes they have not seen yet as ``-inf``.
"""

import abc
import logging
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.special
from scipy.spatial.distance import cdist

from stream_cl._kernels import closest_same_class_pair
from stream_cl.errors import (
    DimensionMismatchError,
    LearnerError,
    MemoryModelUnavailableError,
    NonFiniteGradientError,
)
from stream_cl.rng import Xoshiro256
from stream_cl.streaming_stats import (
    ClassStatistics,
    SharedCovariance,
    as_vector,
    load_state,
    precision,
    save_state,
    update_shared_covariance,
)

logger = logging.getLogger(__name__)

Matrix: typing.TypeAlias = npt.NDArray[np.float64]

NEG_INF = -np.inf


class OnlineLearner(abc.ABC):
    """One-sample-at-a-time classifier over ``K`` classes of dimension ``d``."""

    name: typing.ClassVar[str]
    HPARAMS: typing.ClassVar[tuple[str, ...]] = ()

    def __init__(self, n_classes: int, dim: int):
        if n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {n_classes}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.n_classes = n_classes
        self.dim = dim

    def _check(self, x: typing.Any, y: int) -> tuple[npt.NDArray[np.float64], int]:
        x = as_vector(x, self.dim)
        y = int(y)
        if y < 0 or y >= self.n_classes:
            raise ValueError(f"Label {y} outside [0, {self.n_classes})")
        return x, y

    def _as_batch(self, X: typing.Any) -> Matrix:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionMismatchError(self.dim, X.shape[-1], "query batch")
        return X

    @abc.abstractmethod
    def fit_one(self, x: typing.Any, y: int) -> None: ...

    @abc.abstractmethod
    def scores_batch(self, X: typing.Any) -> Matrix:
        """Scores of shape ``(n, K)``."""

    def scores(self, x: typing.Any) -> npt.NDArray[np.float64]:
        return self.scores_batch(as_vector(x, self.dim)[None, :])[0]

    def predict(self, x: typing.Any) -> int:
        return int(np.argmax(self.scores(x)))

    def predict_batch(self, X: typing.Any) -> npt.NDArray[np.int64]:
        return np.argmax(self.scores_batch(X), axis=1).astype(np.int64)

    @abc.abstractmethod
    def stored_scalars(self) -> int: ...

    @classmethod
    @abc.abstractmethod
    def memory_model(cls, n_classes: int, dim: int, **hparams: typing.Any) -> int:
        """Stored scalars the learner needs for ``n_classes`` classes."""

    def hparams(self) -> dict[str, typing.Any]:
        return {key: getattr(self, key) for key in self.HPARAMS}

    @abc.abstractmethod
    def state_arrays(self) -> dict[str, np.ndarray]: ...

    @abc.abstractmethod
    def load_state_arrays(self, arrays: dict[str, np.ndarray], extra: dict) -> None: ...

    def state_extra(self) -> dict[str, typing.Any]:
        return {}


def _mask_unseen(scores: Matrix, seen: npt.NDArray[np.bool_]) -> Matrix:
    scores[:, ~seen] = NEG_INF
    return scores


class NearestClassMean(OnlineLearner):
    """Running mean per class; scores are negative Euclidean distances."""

    name = "ncm"

    def __init__(self, n_classes: int, dim: int):
        super().__init__(n_classes, dim)
        self.stats = ClassStatistics(n_classes, dim)

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        self.stats.update(x, y)

    def scores_batch(self, X):
        X = self._as_batch(X)
        scores = -cdist(X, self.stats.means, metric="euclidean")
        return _mask_unseen(scores, self.stats.seen)

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        return n_classes * dim + n_classes

    def state_arrays(self):
        return self.stats.state_arrays()

    def load_state_arrays(self, arrays, extra):
        self.stats.load_state_arrays(arrays)


class StreamingOneVsRest(NearestClassMean):
    """
    Scores ``s_k = d_k / (d_k + d~_k)`` where ``d_k = x . w_k`` and ``d~_k`` is
    the dot product with the count-weighted mean of all other classes.
    A zero denominator scores 0.
    """

    name = "sovr"
    HPARAMS = ("normalizer",)

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        normalizer: typing.Literal["total", "rest"] = "total",
    ):
        super().__init__(n_classes, dim)
        if normalizer not in ("total", "rest"):
            raise ValueError(f"Unsupported normalizer: {normalizer}")
        self.normalizer = normalizer

    def rest_means(self) -> Matrix:
        counts = self.stats.counts.astype(np.float64)
        weighted = counts[:, None] * self.stats.means
        rest = weighted.sum(axis=0)[None, :] - weighted
        if self.normalizer == "total":
            total = counts.sum()
            if total == 0:
                return np.zeros_like(rest)
            return rest / total
        denom = counts.sum() - counts
        out = np.zeros_like(rest)
        ok = denom > 0
        out[ok] = rest[ok] / denom[ok, None]
        return out

    def scores_batch(self, X):
        X = self._as_batch(X)
        d = X @ self.stats.means.T
        d_rest = X @ self.rest_means().T
        denom = d + d_rest
        scores = np.divide(d, denom, out=np.zeros_like(d), where=denom != 0)
        return _mask_unseen(scores, self.stats.seen)


class StreamingLDA(OnlineLearner):
    """
    Running class means plus one shared streaming covariance.

    ``covariance="identity"`` fixes the precision to ``I``, which turns the
    discriminant into ``x . mu_k - |mu_k|^2 / 2`` (nearest class mean).
    """

    name = "slda"
    HPARAMS = ("shrinkage", "covariance")

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        shrinkage: float = 1e-4,
        covariance: typing.Literal["streaming", "identity"] = "streaming",
    ):
        super().__init__(n_classes, dim)
        if shrinkage <= 0:
            raise ValueError(f"Shrinkage must be positive, got {shrinkage}")
        if covariance not in ("streaming", "identity"):
            raise ValueError(f"Unsupported covariance mode: {covariance}")
        self.shrinkage = shrinkage
        self.covariance = covariance
        self.stats = ClassStatistics(n_classes, dim)
        self.cov = SharedCovariance.zeros(dim)
        self._linear: tuple[Matrix, npt.NDArray[np.float64]] | None = None

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        # covariance first, against the class mean before x
        if self.covariance == "streaming":
            update_shared_covariance(self.cov, x, self.stats.means[y])
        self.stats.update(x, y)
        self._linear = None

    def precision_matrix(self) -> Matrix:
        if self.covariance == "identity":
            return np.eye(self.dim)
        return precision(self.cov, self.shrinkage)

    def linear_form(self) -> tuple[Matrix, npt.NDArray[np.float64]]:
        """``(W, b)`` with ``scores = X @ W - b``; cached until the next fit."""
        if self._linear is None:
            lam = self.precision_matrix()
            M = self.stats.means.T
            W = lam @ M
            b = 0.5 * np.sum(M * W, axis=0)
            self._linear = (W, b)
        return self._linear

    def scores_batch(self, X):
        X = self._as_batch(X)
        W, b = self.linear_form()
        return _mask_unseen(X @ W - b, self.stats.seen)

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim, covariance=self.covariance)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        cov = 0 if hparams.get("covariance") == "identity" else dim * dim
        return n_classes * dim + cov + n_classes

    def state_arrays(self):
        arrays = self.stats.state_arrays()
        arrays["sigma"] = self.cov.sigma
        return arrays

    def state_extra(self):
        return {"total_count": self.cov.total_count}

    def load_state_arrays(self, arrays, extra):
        self.stats.load_state_arrays(arrays)
        self.cov = SharedCovariance(
            sigma=np.array(arrays["sigma"], dtype=np.float64),
            total_count=int(extra.get("total_count", 0)),
        )
        self._linear = None


class GaussianNaiveBayes(OnlineLearner):
    """
    Per-class Welford means and variances; diagonal Gaussian log-density
    with a variance floor ``eps`` added to every variance.
    """

    name = "naive_bayes"
    HPARAMS = ("variance_floor", "sample_variance")

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        variance_floor: float = 1e-4,
        sample_variance: bool = True,
    ):
        super().__init__(n_classes, dim)
        if variance_floor <= 0:
            raise ValueError(f"variance_floor must be positive, got {variance_floor}")
        self.variance_floor = variance_floor
        self.sample_variance = sample_variance
        self.stats = ClassStatistics(n_classes, dim, track_variance=True)

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        self.stats.update(x, y)

    def scores_batch(self, X):
        X = self._as_batch(X)
        var = self.stats.variances(sample=self.sample_variance) + self.variance_floor
        inv = 1.0 / var
        mu = self.stats.means
        quad = (
            (X * X) @ inv.T
            - 2.0 * X @ (mu * inv).T
            + np.sum(mu * mu * inv, axis=1)[None, :]
        )
        scores = -0.5 * (quad + np.sum(np.log(var), axis=1)[None, :])
        return _mask_unseen(scores, self.stats.seen)

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        return 2 * n_classes * dim + n_classes

    def state_arrays(self):
        return self.stats.state_arrays()

    def load_state_arrays(self, arrays, extra):
        self.stats.load_state_arrays(arrays)


class OnlinePerceptron(OnlineLearner):
    """
    Mistake-driven multiclass perceptron. A class's first sample becomes its
    weight vector; afterwards a mistake adds ``x`` to the true class and
    subtracts it from the top-scoring wrong class.
    """

    name = "perceptron"

    def __init__(self, n_classes: int, dim: int):
        super().__init__(n_classes, dim)
        self.W = np.zeros((n_classes, dim), dtype=np.float64)
        self.initialized = np.zeros(n_classes, dtype=bool)

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        if not self.initialized[y]:
            self.W[y] = x
            self.initialized[y] = True
            return

        scores = self.W @ x
        scores[~self.initialized] = NEG_INF
        predicted = int(np.argmax(scores))
        if predicted != y:
            self.W[y] += x
            self.W[predicted] -= x

    def scores_batch(self, X):
        X = self._as_batch(X)
        return _mask_unseen(X @ self.W.T, self.initialized)

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        return n_classes * dim

    def state_arrays(self):
        return {"W": self.W, "initialized": self.initialized.astype(np.float64)}

    def load_state_arrays(self, arrays, extra):
        self.W = np.array(arrays["W"], dtype=np.float64)
        self.initialized = np.asarray(arrays["initialized"]).ravel() > 0.5


class LinearHead:
    """
    Fully-connected softmax layer trained with SGD + momentum.

    Loss is the mean cross-entropy over the batch plus
    ``weight_decay / 2 * |W|^2``; the bias is not decayed.
    """

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        lr: float = 1e-3,
        weight_decay: float = 1e-5,
        momentum: float = 0.9,
    ):
        if lr < 0:
            raise ValueError(f"lr must be non-negative, got {lr}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.W = np.zeros((n_classes, dim), dtype=np.float64)
        self.b = np.zeros(n_classes, dtype=np.float64)
        self.vW = np.zeros_like(self.W)
        self.vb = np.zeros_like(self.b)

    def logits(self, X: Matrix) -> Matrix:
        return X @ self.W.T + self.b

    def loss_and_grad(
        self, X: Matrix, y: npt.NDArray[np.int64]
    ) -> tuple[float, Matrix, npt.NDArray[np.float64]]:
        n = X.shape[0]
        Z = self.logits(X)
        rows = np.arange(n)
        loss = float(
            np.mean(scipy.special.logsumexp(Z, axis=1) - Z[rows, y])
            + 0.5 * self.weight_decay * np.sum(self.W * self.W)
        )
        G = scipy.special.softmax(Z, axis=1)
        G[rows, y] -= 1.0
        G /= n
        gW = G.T @ X + self.weight_decay * self.W
        gb = G.sum(axis=0)
        return loss, gW, gb

    def step(self, X: Matrix, y: npt.NDArray[np.int64]) -> float:
        loss, gW, gb = self.loss_and_grad(X, y)
        if not (np.all(np.isfinite(gW)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradientError("Non-finite gradient in linear head update")
        self.vW = self.momentum * self.vW + gW
        self.vb = self.momentum * self.vb + gb
        self.W -= self.lr * self.vW
        self.b -= self.lr * self.vb
        return loss

    def n_params(self) -> int:
        return self.W.size + self.b.size

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b, "vW": self.vW, "vb": self.vb}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key in ("W", "b", "vW", "vb"):
            setattr(self, key, np.array(arrays[key], dtype=np.float64))


class FineTune(OnlineLearner):
    """One SGD step on the output layer per sample; nothing against forgetting."""

    name = "finetune"
    HPARAMS = ("lr", "weight_decay", "momentum")

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        lr: float = 1e-3,
        weight_decay: float = 1e-5,
        momentum: float = 0.9,
    ):
        super().__init__(n_classes, dim)
        self.lr = lr
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.head = LinearHead(
            n_classes, dim, lr=lr, weight_decay=weight_decay, momentum=momentum
        )

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        self.head.step(x[None, :], np.array([y], dtype=np.int64))

    def scores_batch(self, X):
        return self.head.logits(self._as_batch(X))

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        return n_classes * dim + n_classes

    def state_arrays(self):
        return self.head.state_arrays()

    def load_state_arrays(self, arrays, extra):
        self.head.load_state_arrays(arrays)


class ReplayBuffer:
    """
    Class-partitioned rehearsal memory with ``quota * n_classes`` slots.

    While free slots remain, samples are appended. Once full, a uniformly
    random sample of a most-represented class is replaced (ties between
    classes drawn from ``rng``).
    """

    def __init__(self, n_classes: int, dim: int, quota: int, rng: Xoshiro256):
        if quota < 1:
            raise ValueError(f"quota must be >= 1, got {quota}")
        self.n_classes = n_classes
        self.dim = dim
        self.quota = quota
        self.capacity = quota * n_classes
        self.rng = rng
        self.features = np.zeros((self.capacity, dim), dtype=np.float64)
        self.labels = np.full(self.capacity, -1, dtype=np.int64)
        self.slots: list[list[int]] = [[] for _ in range(n_classes)]
        self.free: list[int] = list(range(self.capacity - 1, -1, -1))

    def __len__(self) -> int:
        return self.capacity - len(self.free)

    @property
    def is_full(self) -> bool:
        return not self.free

    def class_counts(self) -> npt.NDArray[np.int64]:
        return np.array([len(s) for s in self.slots], dtype=np.int64)

    def occupied(self) -> list[int]:
        """Occupied slots, class by class in insertion order."""
        return [slot for class_slots in self.slots for slot in class_slots]

    def sample(self, k: int) -> tuple[Matrix, npt.NDArray[np.int64]]:
        occupied = self.occupied()
        chosen = self.rng.sample(occupied, min(k, len(occupied)))
        idx = np.asarray(chosen, dtype=np.int64)
        return self.features[idx], self.labels[idx]

    def insert(self, x: npt.NDArray[np.float64], y: int) -> int | None:
        """Stores ``(x, y)``; returns the evicted class or ``None``."""
        evicted: int | None = None
        if self.free:
            slot = self.free.pop()
        else:
            counts = self.class_counts()
            largest = np.flatnonzero(counts == counts.max()).tolist()
            evicted = largest[0] if len(largest) == 1 else self.rng.choice(largest)
            class_slots = self.slots[evicted]
            slot = class_slots.pop(self.rng.uniform_int(len(class_slots)))

        self.features[slot] = x
        self.labels[slot] = y
        self.slots[y].append(slot)
        return evicted


class Replay(FineTune):
    """
    Fine-tune whose every step also rehearses up to ``replay_samples``
    buffered examples in the same minibatch.
    """

    name = "replay"
    HPARAMS = ("lr", "weight_decay", "momentum", "quota", "replay_samples", "seed")

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        quota: int = 20,
        replay_samples: int = 50,
        lr: float = 1e-3,
        weight_decay: float = 1e-5,
        momentum: float = 0.9,
        seed: int = 0,
    ):
        super().__init__(
            n_classes, dim, lr=lr, weight_decay=weight_decay, momentum=momentum
        )
        if replay_samples < 0:
            raise ValueError(f"replay_samples must be >= 0, got {replay_samples}")
        self.quota = quota
        self.replay_samples = replay_samples
        self.seed = seed
        self.buffer = ReplayBuffer(n_classes, dim, quota, Xoshiro256(seed))

    def fit_one(self, x, y):
        x, y = self._check(x, y)
        Xr, yr = self.buffer.sample(self.replay_samples)
        X = np.vstack([x[None, :], Xr])
        labels = np.concatenate([np.array([y], dtype=np.int64), yr])
        self.head.step(X, labels)
        self.buffer.insert(x, y)

    def stored_scalars(self) -> int:
        return self.memory_model(self.n_classes, self.dim, quota=self.quota)

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        quota = int(hparams.get("quota", 20))
        return n_classes * dim + n_classes + quota * n_classes * dim

    def state_arrays(self):
        arrays = self.head.state_arrays()
        arrays["buffer_features"] = self.buffer.features
        arrays["buffer_labels"] = self.buffer.labels.astype(np.float64)
        arrays["buffer_order"] = np.asarray(self.buffer.occupied(), dtype=np.float64)
        arrays["buffer_free"] = np.asarray(self.buffer.free, dtype=np.float64)
        return arrays

    def state_extra(self):
        return {"rng_state": list(self.buffer.rng.getstate())}

    def load_state_arrays(self, arrays, extra):
        self.head.load_state_arrays(arrays)
        buf = self.buffer
        buf.features = np.array(arrays["buffer_features"], dtype=np.float64)
        buf.labels = np.asarray(arrays["buffer_labels"]).ravel().astype(np.int64)
        buf.slots = [[] for _ in range(self.n_classes)]
        for slot in np.asarray(arrays["buffer_order"]).ravel().astype(np.int64):
            buf.slots[int(buf.labels[slot])].append(int(slot))
        buf.free = [int(s) for s in np.asarray(arrays["buffer_free"]).ravel()]
        if "rng_state" in extra:
            buf.rng.setstate(extra["rng_state"])


@dataclass(frozen=True)
class MergeEvent:
    class_id: int
    distance: float
    count: int
    total_before: int


class CentroidSet:
    """Per-class lists of ``(centroid, count)`` plus per-class seen counts."""

    def __init__(self, n_classes: int, dim: int):
        self.dim = dim
        self.centroids: list[list[npt.NDArray[np.float64]]] = [[] for _ in range(n_classes)]
        self.counts: list[list[int]] = [[] for _ in range(n_classes)]
        self.seen = np.zeros(n_classes, dtype=np.int64)

    @property
    def total(self) -> int:
        return sum(len(c) for c in self.centroids)

    def stacked(self) -> tuple[Matrix, npt.NDArray[np.int64], npt.NDArray[np.int64]]:
        """``(centroids, labels, position_within_class)`` in class order."""
        rows: list[np.ndarray] = []
        labels: list[int] = []
        positions: list[int] = []
        for k, class_centroids in enumerate(self.centroids):
            for p, w in enumerate(class_centroids):
                rows.append(w)
                labels.append(k)
                positions.append(p)
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0, np.int64), np.zeros(0, np.int64)
        return (
            np.vstack(rows),
            np.asarray(labels, dtype=np.int64),
            np.asarray(positions, dtype=np.int64),
        )


class CBCL(OnlineLearner):
    """
    Online centroid-based concept learning.

    A sample closer than ``distance_threshold`` to its class's nearest
    centroid is folded into it with the running-mean rule, otherwise it
    starts a new centroid. Beyond ``max_centroids`` the closest same-class
    pair is merged. Prediction is a 1-nearest-centroid rule weighted by the
    per-class sample count: ``score_k = -dist_k * seen_k``.
    """

    name = "cbcl"
    HPARAMS = ("distance_threshold", "max_centroids", "merge_rule")

    def __init__(
        self,
        n_classes: int,
        dim: int,
        *,
        distance_threshold: float = 17.0,
        max_centroids: int = 44,
        merge_rule: typing.Literal["weighted", "printed"] = "weighted",
    ):
        super().__init__(n_classes, dim)
        if max_centroids < n_classes:
            raise ValueError(
                f"max_centroids ({max_centroids}) must be >= n_classes ({n_classes})"
            )
        if merge_rule not in ("weighted", "printed"):
            raise ValueError(f"Unsupported merge_rule: {merge_rule}")
        self.distance_threshold = distance_threshold
        self.max_centroids = max_centroids
        self.merge_rule = merge_rule
        self.centroids = CentroidSet(n_classes, dim)

    def absorb(self, x: typing.Any, y: int) -> None:
        x, y = self._check(x, y)
        cs = self.centroids
        cs.seen[y] += 1
        class_centroids = cs.centroids[y]
        if not class_centroids:
            class_centroids.append(x.copy())
            cs.counts[y].append(1)
            return

        dists = np.linalg.norm(np.vstack(class_centroids) - x, axis=1)
        j = int(np.argmin(dists))
        if dists[j] < self.distance_threshold:
            c = cs.counts[y][j]
            class_centroids[j] = (c * class_centroids[j] + x) / (c + 1)
            cs.counts[y][j] = c + 1
        else:
            class_centroids.append(x.copy())
            cs.counts[y].append(1)

    def enforce_capacity(self) -> list[MergeEvent]:
        cs = self.centroids
        events: list[MergeEvent] = []
        while cs.total > self.max_centroids:
            # 1. Find the closest same-class pair
            stacked, labels, positions = cs.stacked()
            i, j, sq = closest_same_class_pair(stacked, labels)
            if i < 0:
                raise LearnerError("No class has two centroids to merge")
            # 2. Merge j into i
            k = int(labels[i])
            pi, pj = int(positions[i]), int(positions[j])
            ci, cj = cs.counts[k][pi], cs.counts[k][pj]
            wi, wj = cs.centroids[k][pi], cs.centroids[k][pj]
            if self.merge_rule == "weighted":
                merged = (ci * wi + cj * wj) / (ci + cj)
            else:
                merged = (wi + wj) / (ci + cj)
            total_before = cs.total
            cs.centroids[k][pi] = merged
            cs.counts[k][pi] = ci + cj
            # 3. Drop the absorbed centroid
            del cs.centroids[k][pj]
            del cs.counts[k][pj]
            events.append(MergeEvent(k, float(np.sqrt(sq)), ci + cj, total_before))
        return events

    def fit_one(self, x, y):
        self.absorb(x, y)
        self.enforce_capacity()

    def scores_batch(self, X):
        X = self._as_batch(X)
        scores = np.full((X.shape[0], self.n_classes), NEG_INF)
        stacked, labels, _ = self.centroids.stacked()
        if stacked.shape[0] == 0:
            return scores
        dists = cdist(X, stacked, metric="euclidean")
        for k in np.unique(labels):
            nearest = dists[:, labels == k].min(axis=1)
            scores[:, k] = -nearest * self.centroids.seen[k]
        return scores

    def stored_scalars(self) -> int:
        return self.centroids.total * (self.dim + 1) + self.n_classes

    @classmethod
    def memory_model(cls, n_classes, dim, **hparams):
        cap = int(hparams.get("max_centroids", 44))
        return cap * (dim + 1) + n_classes

    def state_arrays(self):
        stacked, labels, _ = self.centroids.stacked()
        counts = [c for class_counts in self.centroids.counts for c in class_counts]
        return {
            "centroids": stacked,
            "labels": labels.astype(np.float64),
            "counts": np.asarray(counts, dtype=np.float64),
            "seen": self.centroids.seen.astype(np.float64),
        }

    def load_state_arrays(self, arrays, extra):
        cs = CentroidSet(self.n_classes, self.dim)
        labels = np.asarray(arrays["labels"]).ravel().astype(np.int64)
        counts = np.asarray(arrays["counts"]).ravel().astype(np.int64)
        stacked = np.asarray(arrays["centroids"], dtype=np.float64).reshape(-1, self.dim)
        for w, k, c in zip(stacked, labels, counts):
            cs.centroids[int(k)].append(np.array(w))
            cs.counts[int(k)].append(int(c))
        cs.seen = np.asarray(arrays["seen"]).ravel().astype(np.int64)
        self.centroids = cs


class _LearnerEntry(typing.NamedTuple):
    cls: type[OnlineLearner]
    fixed: dict[str, typing.Any]


# Per-class buffer slots of the fixed-quota replay variants
REPLAY_QUOTAS: dict[str, int] = {"replay_2pc": 2, "replay_20pc": 20}

LEARNERS: dict[str, _LearnerEntry] = {
    "ncm": _LearnerEntry(NearestClassMean, {}),
    "sovr": _LearnerEntry(StreamingOneVsRest, {}),
    "slda": _LearnerEntry(StreamingLDA, {}),
    "naive_bayes": _LearnerEntry(GaussianNaiveBayes, {}),
    "perceptron": _LearnerEntry(OnlinePerceptron, {}),
    "finetune": _LearnerEntry(FineTune, {}),
    "replay": _LearnerEntry(Replay, {}),
    **{name: _LearnerEntry(Replay, {"quota": q}) for name, q in REPLAY_QUOTAS.items()},
    "cbcl": _LearnerEntry(CBCL, {}),
}


def _entry(name: str) -> _LearnerEntry:
    try:
        return LEARNERS[name]
    except KeyError:
        raise KeyError(
            f"Unknown learner: {name}. Please choose one of: {list(LEARNERS)}"
        ) from None


def _select_hparams(entry: _LearnerEntry, hparams: dict[str, typing.Any]) -> dict:
    selected = {k: v for k, v in hparams.items() if k in entry.cls.HPARAMS}
    selected.update(entry.fixed)
    return selected


def make_learner(
    name: str, n_classes: int, dim: int, **hparams: typing.Any
) -> OnlineLearner:
    """
    Builds a registered learner. Keys the learner does not take are ignored,
    so a single hyperparameter bundle can be shared by every learner.
    """
    entry = _entry(name)
    return entry.cls(n_classes, dim, **_select_hparams(entry, hparams))


def memory_model(name: str, n_classes: int, dim: int, **hparams: typing.Any) -> int:
    """Stored scalars of learner ``name`` at ``n_classes`` classes."""
    if name not in LEARNERS:
        raise MemoryModelUnavailableError(f"No memory model for learner: {name}")
    entry = LEARNERS[name]
    return entry.cls.memory_model(n_classes, dim, **_select_hparams(entry, hparams))


def stored_scalars(learner: OnlineLearner) -> int:
    return learner.stored_scalars()


def save_learner(learner: OnlineLearner, directory: Path | str) -> Path:
    """Checkpoints a learner as float64 containers plus a JSON sidecar."""
    meta = {
        "learner": learner.name,
        "n_classes": learner.n_classes,
        "dim": learner.dim,
        "hparams": learner.hparams(),
        "extra": learner.state_extra(),
    }
    return save_state(directory, learner.state_arrays(), meta)


def load_learner(directory: Path | str) -> OnlineLearner:
    arrays, meta = load_state(directory)
    learner = make_learner(
        meta["learner"], int(meta["n_classes"]), int(meta["dim"]), **meta["hparams"]
    )
    learner.load_state_arrays(arrays, meta.get("extra", {}))
    logger.debug("Restored %s from %s", meta["learner"], directory)
    return learner
