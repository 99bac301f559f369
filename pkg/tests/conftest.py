"""Shared fixtures: real-dataset discovery and synthetic dataset builders.

Real datasets are looked up under SCRATCHNET_DATA_DIR (default ./data);
tests touching MNIST/CIFAR-10/Shakespeare skip when the files are absent.
See README for the fetch helper.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from scratchnet import datasets

REPO_ROOT = Path(__file__).resolve().parent.parent


def data_root():
    return Path(os.environ.get("SCRATCHNET_DATA_DIR", REPO_ROOT / "data"))


def _has_mnist(path):
    return all((path / name).exists() or (path / (name + ".gz")).exists()
               for name in datasets.MNIST_FILES.values())


def find_mnist():
    for cand in (data_root(), data_root() / "mnist"):
        if _has_mnist(cand):
            return cand
    return None


def find_cifar10():
    for cand in (data_root(), data_root() / "cifar10",
                 data_root() / "cifar-10-batches-bin",
                 data_root() / "cifar10" / "cifar-10-batches-bin"):
        if all((cand / f).exists() for f in datasets.CIFAR_TRAIN_FILES) \
                and (cand / datasets.CIFAR_TEST_FILE).exists():
            return cand
    return None


def find_shakespeare():
    for cand in (data_root() / "shakespeare.txt",
                 data_root() / "tinyshakespeare.txt",
                 data_root() / "input.txt",
                 data_root() / "shakespeare" / "input.txt"):
        if cand.exists():
            return cand
    return None


@pytest.fixture
def mnist_dir():
    path = find_mnist()
    if path is None:
        pytest.skip("MNIST files not present (see README: scratchnet fetch)")
    return path


@pytest.fixture
def cifar_dir():
    path = find_cifar10()
    if path is None:
        pytest.skip("CIFAR-10 files not present (see README: scratchnet fetch)")
    return path


@pytest.fixture
def shakespeare_path():
    path = find_shakespeare()
    if path is None:
        pytest.skip("Shakespeare corpus not present (see README: scratchnet fetch)")
    return path


def make_synthetic_mnist(dirpath, n_train=60, n_test=24, seed=0):
    """Small well-formed IDX files with deterministic pixel noise."""
    rng = np.random.RandomState(seed)
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for split, n in (("train", n_train), ("test", n_test)):
        images = rng.randint(0, 256, size=(n, 28, 28)).astype(np.uint8)
        labels = (np.arange(n) % 10).astype(np.uint8)
        datasets.write_idx(dirpath / datasets.MNIST_FILES[f"{split}_images"], images)
        datasets.write_idx(dirpath / datasets.MNIST_FILES[f"{split}_labels"], labels)
    return dirpath


def make_synthetic_cifar(dirpath, n_per_file=20, seed=0):
    rng = np.random.RandomState(seed)
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for fname in datasets.CIFAR_TRAIN_FILES + [datasets.CIFAR_TEST_FILE]:
        records = np.empty((n_per_file, 3073), dtype=np.uint8)
        records[:, 0] = np.arange(n_per_file) % 10
        records[:, 1:] = rng.randint(0, 256, size=(n_per_file, 3072))
        (dirpath / fname).write_bytes(records.tobytes())
    return dirpath


def synthetic_corpus(n_words=4000, seed=0):
    """Deterministic word-salad corpus for character-model tests."""
    words = ("the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
             "and", "cat", "runs", "far", "king", "queen", "speaks")
    rng = np.random.RandomState(seed)
    return " ".join(words[i] for i in rng.randint(0, len(words), size=n_words))
