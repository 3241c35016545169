"""Shared pytest fixtures for stream-cl tests."""

import tempfile
from pathlib import Path

import pytest

from stream_cl.feature_store import save_dataset, synthesize_gaussian_dataset


@pytest.fixture(scope="module")
def module_version():
    """Returns the library version."""
    from stream_cl import __version__

    return __version__


@pytest.fixture(scope="session")
def temp_dir():
    """Creates a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(scope="session")
def small_dataset():
    """4 classes, d=8, 30 train / 10 test samples per class, videos of 10 frames."""
    return synthesize_gaussian_dataset(
        4, 8, 30, 10, class_mean_scale=10.0, noise_sigma=1.0, seed=7, group_size=10
    )


@pytest.fixture(scope="session")
def toy_dataset():
    """10 well separated classes in d=32, large enough for the forgetting trend."""
    return synthesize_gaussian_dataset(
        10, 32, 100, 50, class_mean_scale=20.0, noise_sigma=1.0, seed=1, group_size=10
    )


@pytest.fixture(scope="session")
def toy_files(temp_dir, toy_dataset):
    """``(features_path, manifest_path)`` of ``toy_dataset`` on disk."""
    return save_dataset(
        toy_dataset.features, toy_dataset.manifest, temp_dir / "toy", "toy"
    )


@pytest.fixture(scope="session")
def small_files(temp_dir, small_dataset):
    return save_dataset(
        small_dataset.features, small_dataset.manifest, temp_dir / "small", "small"
    )
