"""
Feature container, manifest and synthetic dataset generation.

Container layout (little-endian, 28-byte header)::

    [magic "OCLF"][version u32][n_samples u64][dim u32][dtype u8][7 zero bytes]
    [row-major sample data]

``dtype_code`` 0 stores 32-bit floats (features), 1 stores 64-bit floats
(learner checkpoints). Rows are widened to float64 on read.
"""

import csv
import logging
import os
import struct
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, TypeAlias

import numpy as np
import numpy.typing as npt

from stream_cl.errors import (
    BadMagicError,
    DimensionMismatchError,
    FeatureFileError,
    ManifestError,
    TruncatedFileError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

MAGIC = b"OCLF"
VERSION = 1
HEADER_STRUCT = struct.Struct("<4sIQIB7x")
HEADER_SIZE = HEADER_STRUCT.size  # 28

DTYPE_FLOAT32 = 0
DTYPE_FLOAT64 = 1
DTYPES: dict[int, np.dtype] = {
    DTYPE_FLOAT32: np.dtype("<f4"),
    DTYPE_FLOAT64: np.dtype("<f8"),
}

MANIFEST_COLUMNS = ("sample_id", "split", "class_id", "group_id", "row_index")

SPLIT_TYPE: TypeAlias = Literal["train", "test"]
SPLITS: tuple[SPLIT_TYPE, ...] = ("train", "test")


@dataclass(frozen=True)
class FeatureFileHeader:
    n_samples: int
    dim: int
    dtype_code: int = DTYPE_FLOAT32
    version: int = VERSION
    magic: bytes = MAGIC

    def __post_init__(self):
        if self.magic != MAGIC:
            raise BadMagicError(f"bad magic: {self.magic!r}")
        if self.dim < 1:
            raise FeatureFileError(f"Feature dimension must be >= 1, got {self.dim}")
        if self.n_samples < 0:
            raise FeatureFileError(f"n_samples must be >= 0, got {self.n_samples}")
        if self.dtype_code not in DTYPES:
            raise FeatureFileError(f"Unsupported dtype_code: {self.dtype_code}")

    @property
    def dtype(self) -> np.dtype:
        return DTYPES[self.dtype_code]

    @property
    def data_nbytes(self) -> int:
        return self.n_samples * self.dim * self.dtype.itemsize

    @property
    def file_nbytes(self) -> int:
        return HEADER_SIZE + self.data_nbytes

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(
            self.magic, self.version, self.n_samples, self.dim, self.dtype_code
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "FeatureFileHeader":
        if len(raw) < HEADER_SIZE:
            if len(raw) >= 4 and raw[:4] != MAGIC:
                raise BadMagicError(f"bad magic: {raw[:4]!r}")
            raise TruncatedFileError(
                f"truncated file: header needs {HEADER_SIZE} bytes, got {len(raw)}"
            )
        magic, version, n_samples, dim, dtype_code = HEADER_STRUCT.unpack(
            raw[:HEADER_SIZE]
        )
        if magic != MAGIC:
            raise BadMagicError(f"bad magic: {magic!r}")
        if version != VERSION:
            raise UnsupportedVersionError(f"version unsupported: {version}")
        return cls(
            n_samples=n_samples, dim=dim, dtype_code=dtype_code, version=version
        )


@dataclass(frozen=True, slots=True)
class ManifestRecord:
    sample_id: int
    split: SPLIT_TYPE
    class_id: int
    group_id: int | None
    row_index: int


@dataclass(frozen=True)
class DatasetManifest:
    """Per-sample split, label and grouping metadata, in insertion order."""

    records: tuple[ManifestRecord, ...]
    _by_id: dict[int, ManifestRecord] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self):
        by_id: dict[int, ManifestRecord] = {}
        for record in self.records:
            if record.sample_id in by_id:
                raise ManifestError(f"Duplicate sample_id: {record.sample_id}")
            if record.split not in SPLITS:
                raise ManifestError(
                    f"Unknown split {record.split!r} for sample {record.sample_id}"
                )
            if record.class_id < 0:
                raise ManifestError(
                    f"Negative class_id for sample {record.sample_id}"
                )
            if record.row_index < 0:
                raise ManifestError(
                    f"Negative row_index for sample {record.sample_id}"
                )
            by_id[record.sample_id] = record
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> typing.Iterator[ManifestRecord]:
        return iter(self.records)

    def __getitem__(self, sample_id: int) -> ManifestRecord:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise ManifestError(f"Unknown sample_id: {sample_id}") from None

    def split(self, split: SPLIT_TYPE) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    @property
    def train(self) -> list[ManifestRecord]:
        return self.split("train")

    @property
    def test(self) -> list[ManifestRecord]:
        return self.split("test")

    def classes(self, split: SPLIT_TYPE | None = None) -> list[int]:
        records = self.records if split is None else self.split(split)
        return sorted({r.class_id for r in records})

    @property
    def n_classes(self) -> int:
        """Size of the dense label space ``[0, K)``."""
        if not self.records:
            return 0
        return max(r.class_id for r in self.records) + 1

    def validate_against(self, n_samples: int) -> None:
        for record in self.records:
            if record.row_index >= n_samples:
                raise ManifestError(
                    f"row_index {record.row_index} of sample {record.sample_id} "
                    f"is out of range for {n_samples} rows"
                )
        gaps = sorted(set(range(self.n_classes)) - set(self.classes()))
        if gaps:
            raise ManifestError(
                f"Labels must cover [0, {self.n_classes}) densely, "
                f"missing class ids {gaps[:10]}"
            )
        missing = set(self.classes()) - set(self.classes("train"))
        if missing:
            warnings.warn(
                f"Classes {sorted(missing)} appear only in the test split.",
                UserWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class BackboneConstant:
    """Frozen feature extractor, represented only by its size."""

    name: str
    feature_dim: int
    param_count: int

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        if self.param_count < 0:
            raise ValueError(f"param_count must be non-negative, got {self.param_count}")

    def check_dim(self, dim: int) -> None:
        if dim != self.feature_dim:
            raise DimensionMismatchError(self.feature_dim, dim, f"backbone {self.name}")


# Parameter counts exclude the 40-way output layer (reported memory - 40 * d).
BACKBONES: dict[str, BackboneConstant] = {
    b.name: b
    for b in (
        BackboneConstant("mobilenet_v3_small", 576, 927_008),
        BackboneConstant("mobilenet_v3_large", 960, 2_971_952),
        BackboneConstant("efficientnet_b0", 1280, 4_007_548),
        BackboneConstant("efficientnet_b1", 1280, 6_513_184),
        BackboneConstant("resnet18", 512, 11_176_512),
    )
}


def get_backbone(name: str) -> BackboneConstant:
    try:
        return BACKBONES[name]
    except KeyError:
        raise KeyError(
            f"Unknown backbone: {name}. Please choose one of: {list(BACKBONES)}"
        ) from None


class FeatureSource(typing.Protocol):
    @property
    def n_samples(self) -> int: ...

    @property
    def dim(self) -> int: ...

    def get_row(self, i: int) -> npt.NDArray[np.float64]: ...

    def get_rows(self, indices: typing.Sequence[int] | np.ndarray) -> npt.NDArray[np.float64]: ...


def _check_row(i: int, n_samples: int) -> int:
    i = int(i)
    if i < 0 or i >= n_samples:
        raise IndexError(f"Row index {i} out of range for {n_samples} rows")
    return i


class ArrayFeatures:
    """In-memory feature rows with the same read interface as a file handle."""

    def __init__(self, data: np.ndarray):
        data = np.array(data)
        if data.ndim != 2 or data.shape[1] < 1:
            raise DimensionMismatchError(2, data.ndim, "feature matrix rank")
        self._data = data
        self._data.setflags(write=False)

    @property
    def n_samples(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self._data

    def get_row(self, i: int) -> npt.NDArray[np.float64]:
        return self._data[_check_row(i, self.n_samples)].astype(np.float64)

    def get_rows(self, indices: typing.Sequence[int] | np.ndarray) -> npt.NDArray[np.float64]:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_samples):
            raise IndexError(f"Row indices out of range for {self.n_samples} rows")
        return self._data[idx].astype(np.float64)


class FeatureFile:
    """
    Read-only handle over a feature container.
    Only the header is parsed on open; rows are memory-mapped.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"File not found: {self.path}")

        with open(self.path, "rb") as f:
            raw = f.read(HEADER_SIZE)
        self.header = FeatureFileHeader.unpack(raw)

        size = os.path.getsize(self.path)
        if size < self.header.file_nbytes:
            raise TruncatedFileError(
                f"truncated file: expected {self.header.file_nbytes} bytes, got {size}"
            )
        if size > self.header.file_nbytes:
            raise FeatureFileError(
                f"Trailing bytes: expected {self.header.file_nbytes} bytes, got {size}"
            )

        if self.header.n_samples == 0:
            self._rows = np.zeros((0, self.header.dim), dtype=self.header.dtype)
        else:
            self._rows = np.memmap(
                self.path,
                dtype=self.header.dtype,
                mode="r",
                offset=HEADER_SIZE,
                shape=(self.header.n_samples, self.header.dim),
            )

    @property
    def n_samples(self) -> int:
        return self.header.n_samples

    @property
    def dim(self) -> int:
        return self.header.dim

    def get_row(self, i: int) -> npt.NDArray[np.float64]:
        return np.array(self._rows[_check_row(i, self.n_samples)], dtype=np.float64)

    def get_rows(self, indices: typing.Sequence[int] | np.ndarray) -> npt.NDArray[np.float64]:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_samples):
            raise IndexError(f"Row indices out of range for {self.n_samples} rows")
        return np.array(self._rows[idx], dtype=np.float64)

    def as_array(self) -> npt.NDArray[np.float64]:
        return np.array(self._rows, dtype=np.float64)

    def __reduce__(self):
        # memmaps are reopened in worker processes
        return (FeatureFile, (str(self.path),))


def write_array_file(
    data: np.ndarray, path: Path | str, *, dtype_code: int = DTYPE_FLOAT32
) -> FeatureFileHeader:
    """Writes a 2-D array as one container; rows are samples."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise DimensionMismatchError(2, data.ndim, "array rank")
    header = FeatureFileHeader(
        n_samples=data.shape[0], dim=data.shape[1], dtype_code=dtype_code
    )
    payload = np.ascontiguousarray(data, dtype=header.dtype)

    try:
        with open(path, "wb") as f:
            f.write(header.pack())
            f.write(payload.tobytes(order="C"))
    except OSError as e:
        raise FeatureFileError(f"Cannot write {path}: {e}") from e

    return header


def write_feature_file(
    samples: typing.Iterable[tuple[typing.Any, int, SPLIT_TYPE, int | None]],
    path: Path | str,
    *,
    dim: int | None = None,
    manifest_path: Path | str | None = None,
) -> tuple[FeatureFileHeader, DatasetManifest]:
    """
    Writes ``(vector, label, split, group)`` samples as float32 rows.

    Args:
        samples: Iterable of (vector, class_id, split, group_id) tuples.
        path: Feature container path.
        dim: Required only when ``samples`` is empty.
        manifest_path: If given, the manifest CSV is written there too.

    Returns:
        The written header and the manifest (sample_id == row_index, in
        insertion order).
    """
    rows: list[np.ndarray] = []
    records: list[ManifestRecord] = []

    for i, (vector, label, split, group) in enumerate(samples):
        vec = np.asarray(vector, dtype=np.float64).ravel()
        if dim is None:
            dim = vec.shape[0]
        if vec.shape[0] != dim:
            raise DimensionMismatchError(dim, vec.shape[0], f"sample {i}")
        rows.append(vec)
        records.append(
            ManifestRecord(
                sample_id=i,
                split=split,
                class_id=int(label),
                group_id=None if group is None else int(group),
                row_index=i,
            )
        )

    if dim is None:
        raise FeatureFileError("Cannot infer dim from zero samples; pass dim=")

    data = np.vstack(rows) if rows else np.zeros((0, dim))
    header = write_array_file(data, path, dtype_code=DTYPE_FLOAT32)
    manifest = DatasetManifest(tuple(records))

    if manifest_path is not None:
        write_manifest(manifest, manifest_path)

    logger.debug("Wrote %d rows of dim %d to %s", header.n_samples, header.dim, path)
    return header, manifest


def read_feature_file(path: Path | str) -> FeatureFile:
    return FeatureFile(path)


def write_manifest(manifest: DatasetManifest, path: Path | str) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.records:
            writer.writerow(
                [
                    r.sample_id,
                    r.split,
                    r.class_id,
                    "" if r.group_id is None else r.group_id,
                    r.row_index,
                ]
            )
    return Path(path)


def read_manifest(path: Path | str) -> DatasetManifest:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")

    records: list[ManifestRecord] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"Manifest header must be {','.join(MANIFEST_COLUMNS)}, got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"Line {line_no}: expected 5 fields, got {len(row)}")
            try:
                sample_id, split, class_id, group_id, row_index = row
                records.append(
                    ManifestRecord(
                        sample_id=int(sample_id),
                        split=typing.cast(SPLIT_TYPE, split.strip()),
                        class_id=int(class_id),
                        group_id=int(group_id) if group_id.strip() else None,
                        row_index=int(row_index),
                    )
                )
            except ValueError as e:
                raise ManifestError(f"Line {line_no}: {e}") from e

    return DatasetManifest(tuple(records))


@dataclass(frozen=True)
class SyntheticDataset:
    features: ArrayFeatures
    manifest: DatasetManifest
    class_means: npt.NDArray[np.float64]


def long_tail_counts(n_head: int, n_classes: int, imbalance_ratio: float = 1.0) -> list[int]:
    """
    Geometric per-class train counts from ``n_head`` (class 0) down to
    ``n_head / imbalance_ratio`` (last class), at least one sample each.
    """
    if imbalance_ratio < 1:
        raise ValueError(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    if n_classes == 1:
        return [n_head]
    return [
        max(1, round(n_head * imbalance_ratio ** (-k / (n_classes - 1))))
        for k in range(n_classes)
    ]


def synthesize_gaussian_dataset(
    n_classes: int,
    dim: int,
    n_train_per_class: int,
    n_test_per_class: int,
    *,
    class_mean_scale: float = 10.0,
    noise_sigma: float = 1.0,
    seed: int = 0,
    group_size: int = 10,
    video_sigma: float = 0.0,
    imbalance_ratio: float = 1.0,
) -> SyntheticDataset:
    """
    Draws an isotropic Gaussian blob per class.

    Class means are non-negative (like pooled ReLU features) and rescaled to
    norm ``class_mean_scale``. Train samples of each class are cut into
    pseudo-videos of ``group_size`` consecutive samples; with
    ``video_sigma > 0`` every pseudo-video also shares one random offset.
    Test samples carry no group.

    With ``imbalance_ratio > 1`` the train split is long-tailed: see
    :func:`long_tail_counts`. The test split stays balanced.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if n_train_per_class <= 0 or n_test_per_class <= 0:
        raise ValueError("Sample counts per class must be positive")
    if group_size <= 0:
        raise ValueError(f"group_size must be positive, got {group_size}")
    if noise_sigma < 0 or video_sigma < 0:
        raise ValueError("Noise scales must be non-negative")

    train_counts = long_tail_counts(n_train_per_class, n_classes, imbalance_ratio)

    rng = np.random.default_rng(seed)

    raw = rng.uniform(0.0, 1.0, size=(n_classes, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    means = raw / np.maximum(norms, np.finfo(np.float64).tiny) * class_mean_scale

    rows: list[np.ndarray] = []
    records: list[ManifestRecord] = []
    next_group = 0

    for k in range(n_classes):
        n_train = train_counts[k]
        noise = rng.standard_normal((n_train, dim)) * noise_sigma
        n_groups = -(-n_train // group_size)
        offsets = rng.standard_normal((n_groups, dim)) * video_sigma
        for i in range(n_train):
            g = i // group_size
            row = means[k] + noise[i] + offsets[g]
            records.append(
                ManifestRecord(len(rows), "train", k, next_group + g, len(rows))
            )
            rows.append(row)
        next_group += n_groups

    for k in range(n_classes):
        noise = rng.standard_normal((n_test_per_class, dim)) * noise_sigma
        for i in range(n_test_per_class):
            records.append(ManifestRecord(len(rows), "test", k, None, len(rows)))
            rows.append(means[k] + noise[i])

    data = np.vstack(rows).astype("<f4")
    return SyntheticDataset(
        features=ArrayFeatures(data),
        manifest=DatasetManifest(tuple(records)),
        class_means=means,
    )


def save_dataset(
    features: FeatureSource,
    manifest: DatasetManifest,
    directory: Path | str,
    name: str = "dataset",
) -> tuple[Path, Path]:
    """Writes ``<name>.oclf`` and ``<name>.csv`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    features_path = directory / f"{name}.oclf"
    manifest_path = directory / f"{name}.csv"

    data = features.get_rows(np.arange(features.n_samples))
    write_array_file(data, features_path, dtype_code=DTYPE_FLOAT32)
    write_manifest(manifest, manifest_path)
    return features_path, manifest_path


def fvecs_read(path: Path | str) -> npt.NDArray[np.float32]:
    """Reads a ``.fvecs`` file (int32 dim prefix before every float32 row)."""
    fv = np.fromfile(path, dtype=np.int32)
    if fv.size == 0:
        return np.zeros((0, 0), dtype=np.float32)
    dim = int(fv[0])
    if dim <= 0 or fv.size % (dim + 1) != 0:
        raise FeatureFileError(f"Malformed fvecs file: {path}")
    fv = fv.reshape(-1, dim + 1)
    if not np.all(fv[:, 0] == dim):
        raise FeatureFileError(f"Non-uniform vector sizes in {path}")
    return fv[:, 1:].copy().view(np.float32)


def ingest(
    source: Path | str,
    output_path: Path | str,
    *,
    manifest_path: Path | str | None = None,
) -> FeatureFileHeader:
    """
    Converts ``.npy``/``.fvecs``/``.oclf`` input into a float32 container and
    validates the manifest against it if one is given.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"File not found: {source}")

    suffix = source.suffix.lower()
    if suffix == ".npy":
        data = np.load(source, allow_pickle=False)
    elif suffix == ".fvecs":
        data = fvecs_read(source)
    elif suffix == ".oclf":
        data = read_feature_file(source).as_array()
    else:
        raise FeatureFileError(f"Unsupported input format: {suffix}")

    if data.ndim != 2:
        raise DimensionMismatchError(2, data.ndim, "input array rank")

    header = write_array_file(data, output_path, dtype_code=DTYPE_FLOAT32)

    if manifest_path is not None:
        manifest = read_manifest(manifest_path)
        manifest.validate_against(header.n_samples)

    logger.info(
        "Ingested %s -> %s (%d x %d)", source, output_path, header.n_samples, header.dim
    )
    return header
