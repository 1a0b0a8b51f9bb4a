"""Resolve dataset files named by a config and load train/test splits."""

from __future__ import annotations

from pathlib import Path

from ..datasets import Dataset, load_cifar10, load_mnist
from .config import ConfigError, ExperimentConfig

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = ["test_batch.bin"]


def _find(directory: Path, name: str) -> Path:
    stems = {name, name.replace("-idx", ".idx")}
    for stem in stems:
        for candidate in (directory / stem, directory / (stem + ".gz")):
            if candidate.is_file():
                return candidate
    raise ConfigError(f"{name} not found in {directory}")


def resolve_files(cfg: ExperimentConfig) -> tuple[list[Path], list[Path]]:
    if cfg.train_files and cfg.test_files:
        return [Path(p) for p in cfg.train_files], [Path(p) for p in cfg.test_files]
    if cfg.data_dir is None:
        raise ConfigError("set data_dir, or both train_files and test_files")
    root = Path(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data_dir {root} does not exist")
    if cfg.dataset == "mnist":
        return ([_find(root, n) for n in MNIST_FILES["train"]],
                [_find(root, n) for n in MNIST_FILES["test"]])
    if not (root / CIFAR_TRAIN[0]).is_file() and (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    return [_find(root, n) for n in CIFAR_TRAIN], [_find(root, n) for n in CIFAR_TEST]


def _load(cfg: ExperimentConfig, files: list[Path]) -> Dataset:
    for f in files:
        if not f.is_file():
            raise ConfigError(f"data file {f} is not readable")
    if cfg.dataset == "mnist":
        if len(files) != 2:
            raise ConfigError("MNIST needs an images file and a labels file")
        return load_mnist(*files)
    return load_cifar10(files)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train_files, test_files = resolve_files(cfg)
    return _load(cfg, train_files), _load(cfg, test_files)
