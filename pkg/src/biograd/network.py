"""Forward MLP, the mirrored generative MLP used by BFA, and their losses.

Layer indexing is zero-based. A forward net with ``L`` hidden layers has
weights ``weights[0..L]``: ``weights[i]`` maps layer ``i`` (``0`` is the
input) to layer ``i + 1`` and ``weights[L]`` produces the output. The
backward net mirrors it: ``weights[0]`` takes the one-hot target to the top
hidden width and ``weights[L]`` emits the reconstructed input, so
``backward.weights[j].shape == forward.weights[L - j].T.shape``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import Mat, Rng, ShapeError, glorot_scale, init_uniform

BCE_EPS = 1e-12


def sigmoid(z: Mat) -> Mat:
    # tanh form avoids overflow in exp for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def tanh_prime(h: Mat) -> Mat:
    """Derivative of tanh written in terms of its output ``h = tanh(a)``."""
    return 1.0 - h * h


def _check_sizes(sizes: Sequence[int]) -> list[int]:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise ValueError(f"need at least one hidden layer, got sizes {sizes}")
    if min(sizes) < 1:
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    return sizes


@dataclass
class _Layers:
    weights: list[Mat]
    biases: list[Mat]

    def __post_init__(self):
        name = type(self).__name__
        if len(self.weights) < 2 or len(self.weights) != len(self.biases):
            raise ValueError(f"{name} needs >= 2 weight matrices and one bias per matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0], 1):
                raise ShapeError(f"{name} bias {i}", w.shape, b.shape)
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"{name} layer {i}", self.weights[i - 1].shape, w.shape)

    @classmethod
    def _glorot(cls, sizes: Sequence[int], rng: Rng):
        sizes = _check_sizes(sizes)
        weights = [init_uniform(n_out, n_in, rng, glorot_scale(n_in, n_out))
                   for n_in, n_out in zip(sizes[:-1], sizes[1:])]
        return cls(weights, [np.zeros((w.shape[0], 1)) for w in weights])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])


class ForwardNet(_Layers):
    """Tanh hidden layers, sigmoid output."""

    @classmethod
    def init(cls, sizes: Sequence[int], rng: Rng) -> "ForwardNet":
        return cls._glorot(sizes, rng)


class BackwardNet(_Layers):
    """Generative net from one-hot outputs back to inputs (tanh hidden, identity output)."""

    @classmethod
    def init(cls, forward_sizes: Sequence[int], rng: Rng) -> "BackwardNet":
        return cls._glorot(list(reversed(_check_sizes(forward_sizes))), rng)

    @classmethod
    def mirror_of(cls, net: ForwardNet) -> "BackwardNet":
        """Backward net whose weights are the transposed forward weights, zero biases."""
        weights = [w.T.copy() for w in reversed(net.weights)]
        return cls(weights, [np.zeros((w.shape[0], 1)) for w in weights])

    def check_mirrors(self, net: ForwardNet) -> None:
        L = net.n_hidden
        if self.n_hidden != L:
            raise ShapeError("mirror depth", tuple(net.sizes), tuple(self.sizes))
        for j, v in enumerate(self.weights):
            if v.shape != net.weights[L - j].T.shape:
                raise ShapeError(f"mirror layer {j}", v.shape, net.weights[L - j].T.shape)


@dataclass
class ActivationTrace:
    x: Mat
    a: list[Mat] = field(default_factory=list)
    h: list[Mat] = field(default_factory=list)
    a_y: Mat | None = None
    y_hat: Mat | None = None


@dataclass
class BackwardTrace:
    y: Mat
    a: list[Mat] = field(default_factory=list)
    h: list[Mat] = field(default_factory=list)
    a_x: Mat | None = None
    x_hat: Mat | None = None


def _affine(w: Mat, inp: Mat, b: Mat, what: str) -> Mat:
    if inp.ndim != 2 or inp.shape[0] != w.shape[1]:
        raise ShapeError(what, w.shape, inp.shape)
    return w @ inp + b


def forward_pass(net: ForwardNet, x: Mat) -> ActivationTrace:
    trace = ActivationTrace(x=x)
    h = x
    for i in range(net.n_hidden):
        a = _affine(net.weights[i], h, net.biases[i], f"forward layer {i}")
        h = np.tanh(a)
        trace.a.append(a)
        trace.h.append(h)
    trace.a_y = _affine(net.weights[-1], h, net.biases[-1], "forward output")
    trace.y_hat = sigmoid(trace.a_y)
    return trace


def backward_generate(bnet: BackwardNet, y: Mat) -> BackwardTrace:
    trace = BackwardTrace(y=y)
    h = y
    for j in range(bnet.n_hidden):
        a = _affine(bnet.weights[j], h, bnet.biases[j], f"backward layer {j}")
        h = np.tanh(a)
        trace.a.append(a)
        trace.h.append(h)
    trace.a_x = _affine(bnet.weights[-1], h, bnet.biases[-1], "backward output")
    trace.x_hat = trace.a_x
    return trace


def _same_shape(op: str, a: Mat, b: Mat) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def bce_loss(y_hat: Mat, y: Mat) -> float:
    """Summed binary cross-entropy per sample, averaged over the batch columns."""
    _same_shape("bce_loss", y_hat, y)
    p = np.clip(y_hat, BCE_EPS, 1.0 - BCE_EPS)
    per_sample = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum(axis=0)
    return float(per_sample.mean())


def mse_loss(x_hat: Mat, x: Mat) -> float:
    """Half squared reconstruction error per sample, averaged over the batch."""
    _same_shape("mse_loss", x_hat, x)
    return float(0.5 * ((x_hat - x) ** 2).sum(axis=0).mean())


def output_error(pred: Mat, target: Mat) -> Mat:
    """``pred - target``: the output-layer delta for sigmoid+BCE and identity+MSE."""
    _same_shape("output_error", pred, target)
    return pred - target


def alignment_scores(transported: Mat, hidden: Mat) -> np.ndarray:
    """Per-column dot products between a transported target and a hidden activation."""
    _same_shape("alignment_scores", transported, hidden)
    return (transported * hidden).sum(axis=0)


def bdfa_hidden_loss(transported: Mat, hidden: Mat) -> float:
    """``1 - sigmoid(<transported, hidden>)`` averaged over batch columns."""
    return float((1.0 - sigmoid(alignment_scores(transported, hidden))).mean())
