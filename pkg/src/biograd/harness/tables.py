"""Architecture x algorithm tables of mean test error."""

from __future__ import annotations

import csv
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..rules import Algo

MISSING = "—"


@dataclass(frozen=True)
class ResultRow:
    hidden_layers: int
    hidden_width: int
    algo: str
    seed: int
    test_error: float


def architecture_label(hidden_layers: int, hidden_width: int) -> str:
    return f"{hidden_layers}×{hidden_width}"


@dataclass
class ResultsTable:
    architectures: list[str]
    algos: list[str]
    cells: dict[tuple[str, str], str]

    def text(self) -> str:
        header = ["Model"] + [a.upper() for a in self.algos]
        rows = [[arch] + [self.cells[arch, a] for a in self.algos] for arch in self.architectures]
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header] + rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + [a.upper() for a in self.algos])
        for arch in self.architectures:
            w.writerow([arch] + [self.cells[arch, a] for a in self.algos])
        return buf.getvalue()


def emit_results_table(rows: list[ResultRow], algos: list[str] | None = None,
                       architectures: list[tuple[int, int]] | None = None) -> ResultsTable:
    """Mean test error over seeds per (architecture, algorithm), two decimals.

    ``algos`` and ``architectures`` fix the grid; missing cells render as a
    dash and raise a warning.
    """
    by_cell: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in rows:
        by_cell[architecture_label(r.hidden_layers, r.hidden_width), Algo(r.algo).value].append(
            r.test_error)
    if architectures is None:
        architectures = sorted({(r.hidden_layers, r.hidden_width) for r in rows})
    if algos is None:
        present = {Algo(r.algo) for r in rows}
        algos = [a.value for a in Algo if a in present]
    else:
        algos = [Algo(a).value for a in algos]
    arch_labels = [architecture_label(*a) for a in architectures]
    cells = {}
    for arch in arch_labels:
        for algo in algos:
            values = by_cell.get((arch, algo))
            if values:
                cells[arch, algo] = f"{np.mean(values):.2f}"
            else:
                warnings.warn(f"no results for {arch} / {algo.upper()}", stacklevel=2)
                cells[arch, algo] = MISSING
    return ResultsTable(arch_labels, algos, cells)


def per_seed_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "algo", "seed", "test_error"])
    for r in sorted(rows, key=lambda r: (r.hidden_layers, r.hidden_width,
                                         list(Algo).index(Algo(r.algo)), r.seed)):
        w.writerow([architecture_label(r.hidden_layers, r.hidden_width), r.algo.upper(), r.seed,
                    f"{r.test_error:.2f}"])
    return buf.getvalue()
