"""Error-transport rules and the per-minibatch training step.

Every rule produces hidden-layer deltas indexed bottom-up: ``deltas[k]`` is
the delta for hidden layer ``k`` (``0`` is the layer fed by the input).

Feedback channels:

* ``Transpose``: exact backpropagation through the forward weights.
* ``FixedChain``: FA. ``mats[k]`` has the shape of ``forward.weights[k + 1].T``
  and carries the delta of the layer above down into hidden layer ``k``.
* ``DirectFeedback``: DFA (fixed) and BDFA (trainable). ``mats[k]`` maps the
  output error straight into hidden layer ``k`` (shape ``n_k x n_y``).
* ``BackwardNet``: BFA. The generative net's weight ``j`` carries errors into
  forward hidden layer ``L - 1 - j`` and is itself trained to reconstruct
  inputs from targets, with its own errors carried by the forward weights.

Updates follow one sign convention: an ``UpdateSet`` holds descent
directions and is applied as ``param += lr * delta``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from .datasets import Minibatch
from .network import (
    ActivationTrace,
    BackwardNet,
    BackwardTrace,
    ForwardNet,
    backward_generate,
    bce_loss,
    bdfa_hidden_loss,
    forward_pass,
    mse_loss,
    output_error,
    sigmoid,
    tanh_prime,
)
from .numerics import Mat, Rng, ShapeError, glorot_scale, init_uniform


class Algo(str, enum.Enum):
    BP = "bp"
    FA = "fa"
    DFA = "dfa"
    BFA = "bfa"
    BDFA = "bdfa"

    @property
    def label(self) -> str:
        return self.value.upper()


class ChannelMismatchError(TypeError):
    pass


class Transpose:
    """Exact transport: no parameters of its own."""

    trainable = False

    def __eq__(self, other):
        return isinstance(other, Transpose)


@dataclass
class FixedChain:
    mats: list[Mat]
    trainable = False

    @classmethod
    def init(cls, net: ForwardNet, rng: Rng) -> "FixedChain":
        mats = []
        for w in net.weights[1:]:
            n_in, n_out = w.shape  # transposed forward shape
            mats.append(init_uniform(n_out, n_in, rng, glorot_scale(n_in, n_out)))
        return cls(mats)

    @classmethod
    def transpose_of(cls, net: ForwardNet) -> "FixedChain":
        return cls([w.T.copy() for w in net.weights[1:]])


@dataclass
class DirectFeedback:
    mats: list[Mat]
    trainable: bool = False

    @classmethod
    def init(cls, net: ForwardNet, rng: Rng, trainable: bool = False) -> "DirectFeedback":
        n_y = net.sizes[-1]
        mats = [init_uniform(n_k, n_y, rng, glorot_scale(n_y, n_k)) for n_k in net.sizes[1:-1]]
        return cls(mats, trainable)


Channel = Union[Transpose, FixedChain, DirectFeedback, BackwardNet]


def make_channel(algo: Algo, net: ForwardNet, rng: Rng) -> Channel:
    algo = Algo(algo)
    if algo is Algo.BP:
        return Transpose()
    if algo is Algo.FA:
        return FixedChain.init(net, rng)
    if algo is Algo.BFA:
        return BackwardNet.init(net.sizes, rng)
    return DirectFeedback.init(net, rng, trainable=algo is Algo.BDFA)


def check_channel(algo: Algo, channel: Channel) -> None:
    algo = Algo(algo)
    ok = {
        Algo.BP: isinstance(channel, Transpose),
        Algo.FA: isinstance(channel, FixedChain),
        Algo.DFA: isinstance(channel, DirectFeedback) and not channel.trainable,
        Algo.BDFA: isinstance(channel, DirectFeedback) and channel.trainable,
        Algo.BFA: isinstance(channel, BackwardNet),
    }[algo]
    if not ok:
        raise ChannelMismatchError(
            f"algorithm {algo.label} cannot train through a {type(channel).__name__} channel")


@dataclass
class UpdateSet:
    weights: list[Mat]
    biases: list[Mat] | None = None

    def apply(self, weights: list[Mat], biases: list[Mat] | None, lr: float) -> None:
        if lr == 0:
            return
        for w, dw in zip(weights, self.weights, strict=True):
            if w.shape != dw.shape:
                raise ShapeError("UpdateSet.apply", w.shape, dw.shape)
            w += lr * dw
        if self.biases is not None:
            for b, db in zip(biases, self.biases, strict=True):
                b += lr * db

    def is_zero(self) -> bool:
        parts = self.weights + (self.biases or [])
        return all(not np.any(p) for p in parts)


@dataclass(frozen=True)
class TrainHyper:
    """``reduction`` decides how per-sample updates combine over a minibatch:
    ``"sum"`` adds them, ``"mean"`` averages them."""

    lr: float = 1e-4
    alpha: float = 0.0
    bdfa_update_mode: str = "analytic"
    reduction: str = "sum"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.bdfa_update_mode not in ("analytic", "literal"):
            raise ValueError(f"unknown BDFA update mode {self.bdfa_update_mode!r}")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


def _batch_scale(b: int, reduction: str) -> float:
    return 1.0 / b if reduction == "mean" else 1.0


def _transport(m: Mat, signal: Mat, what: str) -> Mat:
    if m.shape[1] != signal.shape[0]:
        raise ShapeError(what, m.shape, signal.shape)
    return m @ signal


def _masked(carried: Mat, a_h: Mat, what: str) -> Mat:
    if carried.shape != a_h.shape:
        raise ShapeError(what, carried.shape, a_h.shape)
    return carried * tanh_prime(a_h)


def _chain_deltas(mats_top_down: list[Mat], hs: list[Mat], e: Mat, what: str) -> list[Mat]:
    """Layer-by-layer transport: mats_top_down[0] takes ``e`` into the top hidden layer."""
    L = len(hs)
    deltas: list[Mat] = [None] * L
    signal = e
    for step, m in enumerate(mats_top_down):
        k = L - 1 - step
        signal = _masked(_transport(m, signal, f"{what} layer {k}"), hs[k], f"{what} layer {k}")
        deltas[k] = signal
    return deltas


def bp_hidden_deltas(net: ForwardNet, trace: ActivationTrace, e: Mat) -> list[Mat]:
    mats = [w.T for w in reversed(net.weights[1:])]
    return _chain_deltas(mats, trace.h, e, "bp")


def fa_hidden_deltas(channel: FixedChain, trace: ActivationTrace, e: Mat) -> list[Mat]:
    if len(channel.mats) != len(trace.h):
        raise ShapeError("fa depth", (len(channel.mats),), (len(trace.h),))
    return _chain_deltas(list(reversed(channel.mats)), trace.h, e, "fa")


def dfa_hidden_deltas(channel: DirectFeedback, trace: ActivationTrace, e: Mat) -> list[Mat]:
    if len(channel.mats) != len(trace.h):
        raise ShapeError("dfa depth", (len(channel.mats),), (len(trace.h),))
    return [_masked(_transport(m, e, f"dfa layer {k}"), h, f"dfa layer {k}")
            for k, (m, h) in enumerate(zip(channel.mats, trace.h))]


def bfa_forward_deltas(bnet: BackwardNet, trace: ActivationTrace, e: Mat) -> list[Mat]:
    if bnet.n_hidden != len(trace.h):
        raise ShapeError("bfa depth", (bnet.n_hidden,), (len(trace.h),))
    # backward weights 0..L-1 carry errors from the output down to hidden layer 0
    return _chain_deltas(bnet.weights[:-1], trace.h, e, "bfa forward")


def bfa_backward_deltas(net: ForwardNet, btrace: BackwardTrace, e_back: Mat) -> list[Mat]:
    """Deltas for the generative net's hidden layers, carried by forward weights.

    ``deltas[j]`` belongs to backward hidden layer ``j``. The reconstruction
    error enters through ``forward.weights[0]`` and moves up the forward
    stack while moving down the backward one.
    """
    if net.n_hidden != len(btrace.h):
        raise ShapeError("bfa backward depth", (net.n_hidden,), (len(btrace.h),))
    # _chain_deltas fills from the last hidden index downwards
    return _chain_deltas(net.weights[:-1], btrace.h, e_back, "bfa backward")


def _layer_updates(inputs: list[Mat], deltas: list[Mat], scale: float) -> UpdateSet:
    weights = [-scale * (d @ inp.T) for d, inp in zip(deltas, inputs)]
    biases = [-scale * d.sum(axis=1, keepdims=True) for d in deltas]
    return UpdateSet(weights, biases)


def forward_weight_updates(trace: ActivationTrace, deltas: list[Mat], e: Mat,
                           reduction: str = "sum") -> UpdateSet:
    inputs = [trace.x] + trace.h
    return _layer_updates(inputs, list(deltas) + [e], _batch_scale(e.shape[1], reduction))


def bfa_feedback_weight_updates(btrace: BackwardTrace, deltas: list[Mat], e_back: Mat,
                                reduction: str = "sum") -> UpdateSet:
    inputs = [btrace.y] + btrace.h
    return _layer_updates(inputs, list(deltas) + [e_back],
                          _batch_scale(e_back.shape[1], reduction))


def bdfa_backward_target(y: Mat, y_hat: Mat, alpha: float) -> Mat:
    """Target fed to the direct feedback matrices: ``y + alpha * y_hat``."""
    if y.shape != y_hat.shape:
        raise ShapeError("bdfa_backward_target", y.shape, y_hat.shape)
    if alpha == 0:
        return y
    return y + alpha * y_hat


def bdfa_feedback_updates(channel: DirectFeedback, trace: ActivationTrace, y_target: Mat,
                          mode: str = "analytic", reduction: str = "sum") -> UpdateSet:
    """Updates pulling ``mats[k] @ y_target`` towards hidden activation ``h_k``.

    ``analytic`` descends ``1 - sigmoid(<mats[k] y, h_k>)`` exactly.
    ``literal`` uses the elementwise loss ``1 - sigmoid(mats[k] y * h_k)`` as
    the error signal, i.e. ``-loss @ y.T``.
    """
    if len(channel.mats) != len(trace.h):
        raise ShapeError("bdfa depth", (len(channel.mats),), (len(trace.h),))
    scale = _batch_scale(y_target.shape[1], reduction)
    updates = []
    for k, (m, h) in enumerate(zip(channel.mats, trace.h)):
        carried = _transport(m, y_target, f"bdfa layer {k}")
        if carried.shape != h.shape:
            raise ShapeError(f"bdfa layer {k}", carried.shape, h.shape)
        if mode == "analytic":
            s = sigmoid((carried * h).sum(axis=0, keepdims=True))
            grad_carried = -(s * (1.0 - s)) * h
            updates.append(-scale * (grad_carried @ y_target.T))
        elif mode == "literal":
            loss = 1.0 - sigmoid(carried * h)
            updates.append(-scale * (loss @ y_target.T))
        else:
            raise ValueError(f"unknown BDFA update mode {mode!r}")
    return UpdateSet(updates, None)


def hidden_deltas(algo: Algo, net: ForwardNet, channel: Channel, trace: ActivationTrace,
                  e: Mat) -> list[Mat]:
    """The hidden deltas ``algo`` would use on this trace."""
    algo = Algo(algo)
    check_channel(algo, channel)
    if algo is Algo.BP:
        return bp_hidden_deltas(net, trace, e)
    if algo is Algo.FA:
        return fa_hidden_deltas(channel, trace, e)
    if algo is Algo.BFA:
        return bfa_forward_deltas(channel, trace, e)
    return dfa_hidden_deltas(channel, trace, e)


@dataclass(frozen=True)
class StepMetrics:
    forward_loss: float
    backward_loss: float | None = None


def train_step(algo: Algo, net: ForwardNet, channel: Channel, batch: Minibatch,
               hyper: TrainHyper) -> StepMetrics:
    """One minibatch of training; ``net`` and trainable channels are updated in place.

    BFA and BDFA run the forward phase first and then the feedback phase on
    the same batch, the latter seeing the freshly updated forward weights.
    """
    algo = Algo(algo)
    check_channel(algo, channel)
    x, y = batch.x, batch.y
    trace = forward_pass(net, x)
    e = output_error(trace.y_hat, y)
    forward_loss = bce_loss(trace.y_hat, y)
    deltas = hidden_deltas(algo, net, channel, trace, e)
    forward_weight_updates(trace, deltas, e, hyper.reduction).apply(net.weights, net.biases, hyper.lr)

    if algo is Algo.BFA:
        btrace = backward_generate(channel, y)
        e_back = output_error(btrace.x_hat, x)
        backward_loss = mse_loss(btrace.x_hat, x)
        bdeltas = bfa_backward_deltas(net, btrace, e_back)
        bfa_feedback_weight_updates(btrace, bdeltas, e_back, hyper.reduction).apply(
            channel.weights, channel.biases, hyper.lr)
        return StepMetrics(forward_loss, backward_loss)

    if algo is Algo.BDFA:
        fresh = forward_pass(net, x)
        target = bdfa_backward_target(y, fresh.y_hat, hyper.alpha)
        backward_loss = float(np.mean([bdfa_hidden_loss(m @ target, h)
                                       for m, h in zip(channel.mats, fresh.h)]))
        bdfa_feedback_updates(channel, fresh, target, hyper.bdfa_update_mode,
                              hyper.reduction).apply(channel.mats, None, hyper.lr)
        return StepMetrics(forward_loss, backward_loss)

    return StepMetrics(forward_loss)
