"""Training loop, evaluation and metric files for one experiment config."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets import Dataset, minibatches, one_hot_columns, subset
from ..diagnostics import alignment_report, read_pgm, render_feature_map
from ..network import (
    BackwardNet,
    ForwardNet,
    backward_generate,
    bce_loss,
    bdfa_hidden_loss,
    forward_pass,
    mse_loss,
)
from ..numerics import Rng
from ..rules import Algo, DirectFeedback, make_channel, train_step
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .config import MNIST_TRAIN_SIZE, ExperimentConfig
from .data import load_datasets

log = logging.getLogger(__name__)

# stream ids under each run seed
INIT_STREAM, SUBSET_STREAM, SHUFFLE_STREAM = 0, 1, 2
EVAL_CHUNK = 2000


class DivergenceError(RuntimeError):
    def __init__(self, seed: int, epoch: int, loss: float, reference: float):
        self.seed, self.epoch, self.loss, self.reference = seed, epoch, loss, reference
        super().__init__(f"seed {seed} diverged at epoch {epoch}: forward loss {loss!r} "
                         f"(epoch-1 reference {reference!r})")


@dataclass
class MetricsRecord:
    seed: int
    epoch: int
    forward_loss: float
    backward_loss: float | None
    test_error: float
    angles: list[float] = field(default_factory=list)
    fidelity: list[float] = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class SeedResult:
    seed: int
    records: list[MetricsRecord]
    final_error: float
    diverged: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seeds: list[SeedResult]

    @property
    def records(self) -> list[MetricsRecord]:
        return [r for s in self.seeds for r in s.records]

    @property
    def mean_error(self) -> float:
        return float(np.mean([s.final_error for s in self.seeds]))


def evaluate(net: ForwardNet, ds: Dataset) -> float:
    """Test error in percent with argmax decisions."""
    if ds.dim != net.sizes[0]:
        raise ValueError(f"dataset has {ds.dim} inputs, network expects {net.sizes[0]}")
    wrong = 0
    for start in range(0, ds.n, EVAL_CHUNK):
        x = ds.images[start:start + EVAL_CHUNK].T
        pred = np.argmax(forward_pass(net, x).y_hat, axis=0)
        wrong += int(np.sum(pred != ds.labels[start:start + EVAL_CHUNK]))
    return 100.0 * wrong / ds.n


def dataset_losses(algo: Algo, net: ForwardNet, channel, ds: Dataset) -> tuple[float, float | None]:
    """Mean forward loss (and backward loss where defined) over a whole dataset, no updates."""
    fwd = bwd = 0.0
    for start in range(0, ds.n, EVAL_CHUNK):
        idx = slice(start, start + EVAL_CHUNK)
        x, y = ds.images[idx].T, one_hot_columns(ds.labels[idx], ds.n_classes)
        trace = forward_pass(net, x)
        b = x.shape[1]
        fwd += b * bce_loss(trace.y_hat, y)
        if algo is Algo.BFA:
            bwd += b * mse_loss(backward_generate(channel, y).x_hat, x)
        elif algo is Algo.BDFA:
            bwd += b * float(np.mean([bdfa_hidden_loss(m @ y, h)
                                      for m, h in zip(channel.mats, trace.h)]))
    has_bwd = algo in (Algo.BFA, Algo.BDFA)
    return fwd / ds.n, (bwd / ds.n if has_bwd else None)


def training_set(cfg: ExperimentConfig, train: Dataset, seed: int) -> Dataset:
    n = cfg.subset_n
    if n is None and cfg.dataset == "mnist" and train.n > MNIST_TRAIN_SIZE:
        n = MNIST_TRAIN_SIZE
    if n is None:
        return train
    if n > train.n:
        raise ValueError(f"subset_n={n} exceeds the {train.n} available training samples")
    return subset(train, n, Rng(seed, SUBSET_STREAM))


def initial_state(cfg: ExperimentConfig, n_inputs: int, n_classes: int, seed: int) -> TrainState:
    sizes = [n_inputs] + [cfg.hidden_width] * cfg.hidden_layers + [n_classes]
    rng = Rng(seed, INIT_STREAM)
    # forward weights are drawn first so every algorithm starts from the same net
    net = ForwardNet.init(sizes, rng)
    channel = make_channel(cfg.algorithm, net, rng)
    return TrainState(cfg.algorithm, net, channel, seed, 0)


def _diagnostics(state: TrainState, probe_x, probe_y) -> tuple[list[float], list[float]]:
    report = alignment_report(state.algo, state.net, state.channel, probe_x, probe_y)
    return report.angles, report.fidelity_cosines


def train_seed(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int,
               state: TrainState | None = None, ckpt_dir: Path | None = None) -> SeedResult:
    """Run (or resume) one seed; raises DivergenceError if the loss blows up."""
    train = training_set(cfg, train, seed)
    if state is None:
        state = initial_state(cfg, train.dim, train.n_classes, seed)
    elif state.algo is not cfg.algorithm or state.seed != seed:
        raise ValueError(f"checkpoint is {state.algo.label}/seed {state.seed}, "
                         f"config asks for {cfg.algorithm.label}/seed {seed}")
    hyper = cfg.hyper()
    n_probe = min(cfg.probe_size, train.n)
    probe_x = train.images[:n_probe].T
    probe_y = one_hot_columns(train.labels[:n_probe], train.n_classes)
    records: list[MetricsRecord] = []

    def diag_due(epoch):
        every = cfg.diagnostics_every
        return every and (epoch % every == 0 or epoch == cfg.epochs)

    if state.epoch == 0:
        t0 = time.perf_counter()
        fwd, bwd = dataset_losses(state.algo, state.net, state.channel, train)
        angles, fid = _diagnostics(state, probe_x, probe_y) if diag_due(0) else ([], [])
        records.append(MetricsRecord(seed, 0, fwd, bwd, evaluate(state.net, test), angles, fid,
                                     time.perf_counter() - t0))

    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        t0 = time.perf_counter()
        fwd_sum, bwd_sum, seen = 0.0, 0.0, 0
        for batch in minibatches(train, cfg.batch_size, Rng(seed, SHUFFLE_STREAM, epoch)):
            m = train_step(state.algo, state.net, state.channel, batch, hyper)
            fwd_sum += batch.size * m.forward_loss
            if m.backward_loss is not None:
                bwd_sum += batch.size * m.backward_loss
            seen += batch.size
        fwd = fwd_sum / seen
        bwd = bwd_sum / seen if state.algo in (Algo.BFA, Algo.BDFA) else None
        if not math.isfinite(fwd) or (bwd is not None and not math.isfinite(bwd)):
            raise DivergenceError(seed, epoch, fwd, state.ref_loss)
        if epoch == 1:
            state.ref_loss = fwd
        elif fwd > cfg.divergence_factor * state.ref_loss:
            raise DivergenceError(seed, epoch, fwd, state.ref_loss)
        state.epoch = epoch
        angles, fid = _diagnostics(state, probe_x, probe_y) if diag_due(epoch) else ([], [])
        records.append(MetricsRecord(seed, epoch, fwd, bwd, evaluate(state.net, test), angles, fid,
                                     time.perf_counter() - t0))
        log.info("seed %d epoch %d: loss %.4f test error %.2f%%", seed, epoch, fwd,
                 records[-1].test_error)
        if ckpt_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(state, ckpt_dir / f"seed{seed}_epoch{epoch}.ckpt")

    if ckpt_dir is not None:
        save_checkpoint(state, ckpt_dir / f"seed{seed}.ckpt")
    final = records[-1].test_error if records else evaluate(state.net, test)
    return SeedResult(seed, records, final)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    return repr(float(v))


def write_metrics(path: Path, records: list[MetricsRecord], n_hidden: int) -> None:
    header = (["seed", "epoch", "forward_loss", "backward_loss", "test_error"]
              + [f"angle_{k}" for k in range(n_hidden)]
              + [f"fidelity_{k}" for k in range(n_hidden)])
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in records:
            angles = [_fmt(a) for a in r.angles] or [""] * n_hidden
            fid = [_fmt(c) for c in r.fidelity] or [""] * n_hidden
            w.writerow([r.seed, r.epoch, _fmt(r.forward_loss), _fmt(r.backward_loss),
                        _fmt(r.test_error), *angles, *fid])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_summary(path: Path, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "final_test_error", "status"])
        for s in result.seeds:
            w.writerow([s.seed, f"{s.final_error:.2f}", "diverged" if s.diverged else "ok"])
        w.writerow(["mean", f"{result.mean_error:.2f}", ""])


def run_experiment(cfg: ExperimentConfig, resume: TrainState | str | Path | None = None,
                   datasets: tuple[Dataset, Dataset] | None = None) -> ExperimentResult:
    """Train every seed of ``cfg`` and write metrics, summary and checkpoints to ``cfg.out_dir``.

    With ``resume`` only the checkpoint's seed is continued. A diverging seed
    is recorded in ``events.log`` and ``summary.csv`` and the run moves on.
    """
    cfg.validate()
    train, test = datasets if datasets is not None else load_datasets(cfg)
    if train.dim != test.dim or train.n_classes != test.n_classes:
        raise ValueError("train and test sets disagree on input size or class count")
    if isinstance(resume, (str, Path)):
        resume = load_checkpoint(resume)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")

    seeds = [resume.seed] if resume is not None else list(cfg.seeds)
    results = []
    for seed in seeds:
        state = resume if resume is not None else None
        try:
            results.append(train_seed(cfg, train, test, seed, state, out))
        except DivergenceError as exc:
            log.warning("%s", exc)
            with open(out / "events.log", "a") as f:
                f.write(f"divergence seed={exc.seed} epoch={exc.epoch} loss={exc.loss!r} "
                        f"reference={exc.reference!r}\n")
            results.append(SeedResult(seed, [], math.nan, diverged=str(exc)))

    result = ExperimentResult(cfg, results)
    suffix = f"_resume{resume.seed}" if resume is not None else ""
    write_metrics(out / f"metrics{suffix}.csv", result.records, cfg.hidden_layers)
    with open(out / f"timing{suffix}.csv", "w") as f:
        f.write("seed,epoch,wall_time_seconds\n")
        for r in result.records:
            f.write(f"{r.seed},{r.epoch},{r.wall_time:.6f}\n")
    write_summary(out / f"summary{suffix}.csv", result)
    return result


@dataclass
class GenerateResult:
    paths: list[Path]
    predictions: list[int]

    @property
    def n_consistent(self) -> int:
        return sum(int(p == c) for c, p in enumerate(self.predictions))


def generate_digits(checkpoint_path, out_dir, width: int = 28, height: int = 28) -> GenerateResult:
    """Render what the trained generative net produces for each one-hot class.

    Each rendered image is also classified by the forward net, so the result
    reports how many generated inputs map back to their own class.
    """
    state = load_checkpoint(checkpoint_path)
    if not isinstance(state.channel, BackwardNet):
        raise ValueError(f"{state.algo.label} checkpoint has no generative path; need BFA")
    n_classes = state.net.sizes[-1]
    if state.channel.sizes[-1] != width * height:
        raise ValueError(f"generated inputs have {state.channel.sizes[-1]} values, "
                         f"not {width}x{height}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x_hat = backward_generate(state.channel, np.eye(n_classes)).x_hat
    paths, rendered = [], []
    for c in range(n_classes):
        data = render_feature_map(x_hat[:, c:c + 1], width, height)
        path = out / f"digit_{c}.pgm"
        path.write_bytes(data)
        paths.append(path)
        rendered.append(read_pgm(data)[2].reshape(-1) / 255.0)
    pred = np.argmax(forward_pass(state.net, np.stack(rendered, axis=1)).y_hat, axis=0)
    result = GenerateResult(paths, [int(p) for p in pred])
    (out / "generated.json").write_text(json.dumps(
        {"predictions": result.predictions, "consistent": result.n_consistent}, indent=2) + "\n")
    return result


def diagnose(checkpoint_path, ds: Dataset, probe_size: int = 256) -> dict:
    state = load_checkpoint(checkpoint_path)
    n = min(probe_size, ds.n)
    x, y = ds.images[:n].T, one_hot_columns(ds.labels[:n], ds.n_classes)
    report = alignment_report(state.algo, state.net, state.channel, x, y)
    out = {"algo": state.algo.value, "epoch": state.epoch, "seed": state.seed,
           "test_error": evaluate(state.net, ds)}
    out.update(report.as_dict())
    if isinstance(state.channel, DirectFeedback):
        out["trainable_feedback"] = state.channel.trainable
    return out
