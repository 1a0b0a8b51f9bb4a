"""Dense float64 matrix helpers and the seeded random stream used everywhere.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(rows, cols)``. Column vectors are ``(n, 1)`` arrays; minibatches keep one
sample per column.

Random numbers come from numpy's PCG64 bit generator seeded through
``SeedSequence``. Only the raw 64-bit output is consumed (``random_raw``) and
converted to doubles here, so the stream depends on the PCG64 algorithm
alone and not on numpy's distribution code, which is allowed to change
between releases.
"""

from __future__ import annotations

import numpy as np

Mat = np.ndarray

_INV_2_53 = 1.0 / 9007199254740992.0


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' and '.join(map(str, shapes))}")


def as_mat(a) -> Mat:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError("as_mat", m.shape)
    return m


def matmul(a: Mat, b: Mat) -> Mat:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def hadamard(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise ShapeError("hadamard", a.shape, b.shape)
    return a * b


def outer(u: Mat, v: Mat) -> Mat:
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != 1 or v.shape[1] != 1:
        raise ShapeError("outer", u.shape, v.shape)
    return u @ v.T


def argmax(v: Mat) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    flat = np.asarray(v).ravel()
    if flat.size == 0:
        raise ValueError("argmax of an empty vector")
    # np.argmax returns the first occurrence of the maximum
    return int(np.argmax(flat))


def argmax_columns(m: Mat) -> np.ndarray:
    if m.shape[0] == 0:
        raise ValueError("argmax of an empty vector")
    return np.argmax(m, axis=0)


class Rng:
    """Deterministic random stream keyed by a seed and optional stream ids.

    ``Rng(seed, 3)`` and ``Rng(seed, 4)`` are independent streams, which lets
    the harness derive a fresh shuffle stream for every epoch from the run
    seed without carrying generator state around.
    """

    def __init__(self, seed: int, *stream: int):
        if seed < 0 or any(s < 0 for s in stream):
            raise ValueError("seed and stream ids must be non-negative")
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        self._bits = np.random.PCG64(np.random.SeedSequence([self.seed, *self.stream]))

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(n), dtype=np.uint64)

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles on [0, 1) built from the top 53 bits of each raw draw."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self, low: float, high: float, n: int) -> np.ndarray:
        return low + (high - low) * self.random(n)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")


def init_uniform(rows: int, cols: int, rng: Rng, scale: float) -> Mat:
    """Entries i.i.d. uniform on [-scale, scale], drawn in row-major order."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    return rng.uniform(-scale, scale, rows * cols).reshape(rows, cols)


def glorot_scale(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))
