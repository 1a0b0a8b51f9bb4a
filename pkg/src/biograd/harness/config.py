"""Experiment configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..rules import Algo, TrainHyper

DATASETS = ("mnist", "cifar10")
MNIST_TRAIN_SIZE = 50_000
BDFA_CIFAR_ALPHA = 0.25


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algo: str = "bp"
    dataset: str = "mnist"
    data_dir: str | None = None
    train_files: list[str] = field(default_factory=list)
    test_files: list[str] = field(default_factory=list)
    hidden_layers: int = 1
    hidden_width: int = 400
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-4
    alpha: float | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    subset_n: int | None = None
    bdfa_update_mode: str = "analytic"
    reduction: str = "sum"
    diagnostics_every: int = 1
    probe_size: int = 256
    checkpoint_every: int = 0
    divergence_factor: float = 10.0
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.algo = Algo(str(self.algo).lower()).value
        except ValueError:
            raise ConfigError(f"unknown algo {self.algo!r}; choose from "
                              f"{', '.join(a.value for a in Algo)}") from None
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        for name in ("hidden_layers", "hidden_width", "batch_size", "probe_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(int(s) < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.subset_n is not None and self.subset_n < 1:
            raise ConfigError("subset_n must be >= 1")
        if self.diagnostics_every < 0 or self.checkpoint_every < 0:
            raise ConfigError("diagnostics_every and checkpoint_every must be >= 0")
        if self.alpha is not None:
            if not 0.0 <= self.alpha <= 1.0:
                raise ConfigError("alpha must lie in [0, 1]")
            if self.alpha != 0 and self.algo != Algo.BDFA.value:
                raise ConfigError("alpha only applies to BDFA")
        if self.bdfa_update_mode not in ("analytic", "literal"):
            raise ConfigError("bdfa_update_mode must be 'analytic' or 'literal'")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError("reduction must be 'sum' or 'mean'")

    @property
    def algorithm(self) -> Algo:
        return Algo(self.algo)

    @property
    def resolved_alpha(self) -> float:
        """Target mixing for BDFA: 0.25 on CIFAR-10, otherwise 0 unless set."""
        if self.alpha is not None:
            return self.alpha
        if self.algorithm is Algo.BDFA and self.dataset == "cifar10":
            return BDFA_CIFAR_ALPHA
        return 0.0

    @property
    def architecture(self) -> str:
        return f"{self.hidden_layers}×{self.hidden_width}"

    def hyper(self) -> TrainHyper:
        return TrainHyper(lr=self.lr, alpha=self.resolved_alpha,
                          bdfa_update_mode=self.bdfa_update_mode, reduction=self.reduction)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = self.to_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig(**values)

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(values)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


PRESETS = {
    # full protocol: 300 epochs over the whole training set
    "full": dict(epochs=300, lr=1e-4, batch_size=128, seeds=[1, 2, 3, 4, 5]),
    # minutes on a laptop: 10k MNIST subset, 20 epochs
    "desk": dict(epochs=20, lr=1e-3, batch_size=128, seeds=[1, 2, 3], subset_n=10_000),
}
