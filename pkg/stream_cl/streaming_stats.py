"""
Single-pass estimators shared by the learners.

All accumulators are float64. The shared covariance follows the streaming
LDA recurrence: the deviation is taken from the class mean
*before* the sample is absorbed, and the precision is the inverse of the
shrunk matrix ``(1 - eps) * Sigma + eps * I``.
"""

import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt
import scipy.linalg

from stream_cl.errors import DimensionMismatchError, FactorizationError
from stream_cl.feature_store import (
    DTYPE_FLOAT64,
    read_feature_file,
    write_array_file,
)

Vector: typing.TypeAlias = npt.NDArray[np.float64]


def as_vector(x: typing.Any, dim: int) -> Vector:
    vec = np.asarray(x, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dim:
        got = vec.shape[-1] if vec.ndim else 0
        raise DimensionMismatchError(dim, got)
    return vec


@dataclass
class RunningMean:
    w: Vector
    c: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "RunningMean":
        return cls(w=np.zeros(dim, dtype=np.float64), c=0)


def update_mean(state: RunningMean, x: typing.Any) -> RunningMean:
    """``w <- (c * w + x) / (c + 1)``, ``c <- c + 1``; updates in place."""
    x = as_vector(x, state.w.shape[0])
    state.w = (state.c * state.w + x) / (state.c + 1)
    state.c += 1
    return state


@dataclass
class WelfordAccumulator:
    mean: Vector
    m2: Vector
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "WelfordAccumulator":
        return cls(mean=np.zeros(dim), m2=np.zeros(dim), count=0)

    @property
    def variance(self) -> Vector:
        """Sample variance (``m2 / (count - 1)``); zero for ``count <= 1``."""
        if self.count <= 1:
            return np.zeros_like(self.m2)
        return self.m2 / (self.count - 1)

    @property
    def population_variance(self) -> Vector:
        if self.count == 0:
            return np.zeros_like(self.m2)
        return self.m2 / self.count


def update_welford(state: WelfordAccumulator, x: typing.Any) -> WelfordAccumulator:
    x = as_vector(x, state.mean.shape[0])
    state.count += 1
    delta = x - state.mean
    state.mean = state.mean + delta / state.count
    state.m2 = state.m2 + delta * (x - state.mean)
    return state


@dataclass
class SharedCovariance:
    sigma: npt.NDArray[np.float64]
    total_count: int = 0
    cached_precision: npt.NDArray[np.float64] | None = None
    dirty: bool = True
    _cached_epsilon: float | None = field(default=None, repr=False)

    @classmethod
    def zeros(cls, dim: int) -> "SharedCovariance":
        return cls(sigma=np.zeros((dim, dim), dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]


def update_shared_covariance(
    state: SharedCovariance, x: typing.Any, mu_y: typing.Any
) -> SharedCovariance:
    """
    ``Delta = t * dev dev^T / (t + 1)``, ``Sigma <- (t * Sigma + Delta) / (t + 1)``
    with ``dev = x - mu_y`` and ``mu_y`` the class mean before ``x``.
    """
    d = state.dim
    x = as_vector(x, d)
    mu_y = as_vector(mu_y, d)

    t = state.total_count
    dev = x - mu_y
    delta = np.outer(dev, dev) * (t / (t + 1))
    delta = (delta + delta.T) / 2.0

    sigma = state.sigma
    sigma *= t
    sigma += delta
    sigma /= t + 1

    state.total_count = t + 1
    state.dirty = True
    return state


def precision(state: SharedCovariance, epsilon: float) -> npt.NDArray[np.float64]:
    """
    Returns ``((1 - eps) * Sigma + eps * I)^-1`` via a Cholesky solve.
    The result is cached until the next update.
    """
    if epsilon <= 0:
        raise ValueError(f"Shrinkage must be positive, got {epsilon}")

    if (
        not state.dirty
        and state.cached_precision is not None
        and state._cached_epsilon == epsilon
    ):
        return state.cached_precision

    if not np.all(np.isfinite(state.sigma)):
        raise FactorizationError("Covariance contains non-finite entries")

    d = state.dim
    shrunk = (1.0 - epsilon) * state.sigma + epsilon * np.eye(d)
    try:
        factor = scipy.linalg.cho_factor(shrunk, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise FactorizationError(f"Cholesky factorization failed: {e}") from e
    lam = scipy.linalg.cho_solve(factor, np.eye(d), check_finite=False)
    lam = (lam + lam.T) / 2.0

    state.cached_precision = lam
    state._cached_epsilon = epsilon
    state.dirty = False
    return lam


class ClassStatistics:
    """
    Running per-class means and counts for ``K`` classes, optionally with
    per-class Welford sums of squared deviations.
    """

    def __init__(self, n_classes: int, dim: int, *, track_variance: bool = False):
        if n_classes < 1 or dim < 1:
            raise ValueError(f"Need n_classes >= 1 and dim >= 1, got {n_classes}, {dim}")
        self.n_classes = n_classes
        self.dim = dim
        self.means = np.zeros((n_classes, dim), dtype=np.float64)
        self.counts = np.zeros(n_classes, dtype=np.int64)
        self.m2 = np.zeros((n_classes, dim), dtype=np.float64) if track_variance else None

    def _check_label(self, y: int) -> int:
        y = int(y)
        if y < 0 or y >= self.n_classes:
            raise ValueError(f"Label {y} outside [0, {self.n_classes})")
        return y

    def update(self, x: Vector, y: int) -> None:
        y = self._check_label(y)
        x = as_vector(x, self.dim)
        c = int(self.counts[y])
        if self.m2 is None:
            self.means[y] = (c * self.means[y] + x) / (c + 1)
        else:
            delta = x - self.means[y]
            self.means[y] = self.means[y] + delta / (c + 1)
            self.m2[y] = self.m2[y] + delta * (x - self.means[y])
        self.counts[y] = c + 1

    @property
    def seen(self) -> npt.NDArray[np.bool_]:
        return self.counts > 0

    def variances(self, *, sample: bool = True) -> npt.NDArray[np.float64]:
        if self.m2 is None:
            raise ValueError("Variance tracking is disabled")
        denom = (self.counts - 1) if sample else self.counts
        out = np.zeros_like(self.m2)
        ok = denom > 0
        out[ok] = self.m2[ok] / denom[ok, None]
        return out

    def welford(self, y: int) -> WelfordAccumulator:
        y = self._check_label(y)
        if self.m2 is None:
            raise ValueError("Variance tracking is disabled")
        return WelfordAccumulator(
            mean=self.means[y].copy(), m2=self.m2[y].copy(), count=int(self.counts[y])
        )

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {"means": self.means, "counts": self.counts[:, None]}
        if self.m2 is not None:
            arrays["m2"] = self.m2
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.means = np.array(arrays["means"], dtype=np.float64)
        self.counts = np.asarray(arrays["counts"]).ravel().astype(np.int64)
        if "m2" in arrays:
            self.m2 = np.array(arrays["m2"], dtype=np.float64)


def save_state(
    directory: Path | str,
    arrays: dict[str, np.ndarray],
    meta: dict[str, typing.Any] | None = None,
) -> Path:
    """
    Writes every array as a float64 container (``<name>.oclf``, 1-D arrays
    as a single column) and ``meta.json`` with shapes and scalars.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    shapes: dict[str, list[int]] = {}
    for name, array in arrays.items():
        array = np.asarray(array, dtype=np.float64)
        shapes[name] = list(array.shape)
        if array.ndim == 0:
            array = array.reshape(1, 1)
        elif array.ndim == 1:
            array = array[:, None]
        elif array.ndim > 2:
            array = array.reshape(array.shape[0], -1)
        if array.shape[1] == 0:
            array = np.zeros((array.shape[0], 1))
        write_array_file(array, directory / f"{name}.oclf", dtype_code=DTYPE_FLOAT64)

    with open(directory / "meta.json", "w", encoding="utf-8") as f:
        json.dump({"shapes": shapes, "meta": meta or {}}, f, indent=2, sort_keys=True)
    return directory


def load_state(directory: Path | str) -> tuple[dict[str, np.ndarray], dict[str, typing.Any]]:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"File not found: {meta_path}")

    with open(meta_path, encoding="utf-8") as f:
        doc = json.load(f)

    arrays: dict[str, np.ndarray] = {}
    for name, shape in doc["shapes"].items():
        flat = read_feature_file(directory / f"{name}.oclf").as_array()
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = flat.ravel()[:size].reshape(shape)
    return arrays, doc["meta"]
