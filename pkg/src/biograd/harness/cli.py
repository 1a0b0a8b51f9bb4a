"""Command line: ``biograd {train,eval,generate,diagnose,bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..rules import Algo
from .checkpoint import load_checkpoint
from .config import PRESETS, ConfigError, ExperimentConfig
from .data import load_datasets
from .experiment import diagnose, evaluate, generate_digits, run_experiment
from .tables import ResultRow, emit_results_table, per_seed_csv

ALGOS = [a.value for a in Algo]

# flag -> config field
OVERRIDES = {
    "algo": "algo", "dataset": "dataset", "data_dir": "data_dir", "layers": "hidden_layers",
    "width": "hidden_width", "epochs": "epochs", "lr": "lr", "batch": "batch_size",
    "alpha": "alpha", "seed": "seeds", "subset": "subset_n", "bdfa_mode": "bdfa_update_mode",
    "reduction": "reduction", "out": "out_dir", "diagnostics_every": "diagnostics_every",
    "checkpoint_every": "checkpoint_every",
}


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    p.add_argument("--dataset", choices=["mnist", "cifar10"])
    p.add_argument("--data-dir", dest="data_dir")


def _add_train_flags(p: argparse.ArgumentParser, grid: bool = False) -> None:
    _add_data_flags(p)
    if grid:
        p.add_argument("--algos", default=",".join(ALGOS), help="comma-separated algorithms")
        p.add_argument("--layers", default="1", help="comma-separated hidden-layer counts")
        p.add_argument("--width", default="400", help="comma-separated hidden widths")
        p.add_argument("--scale", choices=sorted(PRESETS), default="desk")
    else:
        p.add_argument("--algo", choices=ALGOS)
        p.add_argument("--layers", type=int)
        p.add_argument("--width", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, nargs="+")
    p.add_argument("--subset", type=int)
    p.add_argument("--bdfa-mode", dest="bdfa_mode", choices=["analytic", "literal"])
    p.add_argument("--reduction", choices=["sum", "mean"])
    p.add_argument("--diagnostics-every", dest="diagnostics_every", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biograd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration over its seeds")
    _add_train_flags(p)
    p.add_argument("--resume", type=Path, help="continue a checkpoint (its seed only)")

    p = sub.add_parser("eval", help="test error of a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("generate", help="render one generated input per class from a BFA checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--shape", default="28x28", help="WIDTHxHEIGHT of the rendered images")

    p = sub.add_parser("diagnose", help="alignment and feedback-fidelity report for a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--probe", type=int, default=256)

    p = sub.add_parser("bench", help="architecture x algorithm grid of test errors")
    _add_train_flags(p, grid=True)
    return parser


def config_from_args(args: argparse.Namespace, base: dict | None = None) -> ExperimentConfig:
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text()))
    for flag, name in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return ExperimentConfig.from_dict(values)


def _test_set(args):
    cfg = config_from_args(args)
    return load_datasets(cfg)[1]


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    result = run_experiment(cfg, resume=args.resume)
    for s in result.seeds:
        status = "diverged" if s.diverged else f"{s.final_error:.2f}%"
        print(f"seed {s.seed}: {status}")
    print(f"mean test error: {result.mean_error:.2f}%  ({cfg.out_dir})")
    return 1 if any(s.diverged for s in result.seeds) else 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    print(f"{evaluate(state.net, _test_set(args)):.2f}")
    return 0


def cmd_generate(args) -> int:
    width, height = (int(v) for v in args.shape.lower().split("x"))
    result = generate_digits(args.checkpoint, args.out, width, height)
    for path, pred in zip(result.paths, result.predictions):
        print(f"{path}  classified as {pred}")
    print(f"{result.n_consistent}/{len(result.paths)} generated images classified as their class")
    return 0


def cmd_diagnose(args) -> int:
    print(json.dumps(diagnose(args.checkpoint, _test_set(args), args.probe), indent=2))
    return 0


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def cmd_bench(args) -> int:
    algos = [Algo(a.strip().lower()).value for a in args.algos.split(",") if a.strip()]
    layers, widths = _int_list(args.layers), _int_list(args.width)
    base = dict(PRESETS[args.scale])
    out_root = Path(args.out or f"runs/bench-{args.scale}")
    # grid axes are handled here, not as single config values
    args.out = args.layers = args.width = None
    template = config_from_args(args, base)
    datasets = load_datasets(template)
    rows = []
    for n_layers in layers:
        for width in widths:
            for algo in algos:
                cfg = template.with_overrides(
                    algo=algo, hidden_layers=n_layers, hidden_width=width, alpha=None,
                    out_dir=str(out_root / f"{n_layers}x{width}" / algo))
                result = run_experiment(cfg, datasets=datasets)
                for s in result.seeds:
                    if not s.diverged:
                        rows.append(ResultRow(n_layers, width, algo, s.seed, s.final_error))
                print(f"{cfg.architecture} {algo.upper()}: {result.mean_error:.2f}%", flush=True)
    table = emit_results_table(rows, algos, [(n, w) for n in layers for w in widths])
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "table.txt").write_text(table.text())
    (out_root / "table.csv").write_text(table.csv())
    (out_root / "table_seeds.csv").write_text(per_seed_csv(rows))
    print(table.text(), end="")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "generate": cmd_generate,
            "diagnose": cmd_diagnose, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"biograd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
