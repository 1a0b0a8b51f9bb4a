"""How far asymmetric pseudo-gradients sit from true gradients.

Includes a central-difference gradient oracle, alignment angles, feedback
fidelity (how well a feedback channel's image of the target matches the
hidden activation it should resemble), a ridge pseudoinverse, a linear
one-hidden-layer probe, and PGM rendering of generated inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .network import (
    ActivationTrace,
    BackwardNet,
    ForwardNet,
    backward_generate,
    forward_pass,
    output_error,
)
from .numerics import Mat, Rng, ShapeError, init_uniform
from .rules import (
    Algo,
    Channel,
    DirectFeedback,
    FixedChain,
    Transpose,
    bp_hidden_deltas,
    hidden_deltas,
)


class UndefinedAngleError(ValueError):
    pass


class NonFiniteLossError(ArithmeticError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    pass


def finite_diff_grads(loss_fn: Callable[[], float], params: Sequence[Mat],
                      step: float = 1e-5) -> list[Mat]:
    """Central-difference gradient of ``loss_fn`` w.r.t. every entry of ``params``.

    ``params`` are perturbed in place and restored afterwards, so the caller
    must hand in arrays that ``loss_fn`` reads (and nothing else mutates).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("parameters must be contiguous arrays")
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFiniteLossError(f"loss is not finite around entry {i}")
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def cosine(g1: Mat, g2: Mat) -> float:
    if g1.shape != g2.shape:
        raise ShapeError("cosine", g1.shape, g2.shape)
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 or n2 == 0:
        raise UndefinedAngleError("angle is undefined for a zero vector")
    return float(np.clip(np.vdot(g1, g2) / (n1 * n2), -1.0, 1.0))


def alignment_angle(g1: Mat, g2: Mat) -> float:
    """Angle in degrees between two flattened gradients."""
    return math.degrees(math.acos(cosine(g1, g2)))


def columnwise_cosine(a: Mat, b: Mat) -> float:
    """Cosine per column, averaged over the columns with nonzero norms on both sides."""
    if a.shape != b.shape:
        raise ShapeError("columnwise_cosine", a.shape, b.shape)
    na, nb = np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        raise UndefinedAngleError("every column pair contains a zero vector")
    return float(np.mean((a * b).sum(axis=0)[ok] / (na[ok] * nb[ok])))


def feedback_fidelity(transported: Mat, h_target: Mat) -> tuple[float, float]:
    """(mean cosine, mean Euclidean distance) between columns of the two matrices."""
    if transported.shape != h_target.shape:
        raise ShapeError("feedback_fidelity", transported.shape, h_target.shape)
    l2 = float(np.linalg.norm(transported - h_target, axis=0).mean())
    return columnwise_cosine(transported, h_target), l2


def transported_targets(channel: Channel, y: Mat) -> list[Mat]:
    """What each hidden layer receives from the target through the feedback channel.

    Indexed bottom-up like the hidden layers. FA's chain is applied linearly,
    BFA reports the generative net's hidden activation at the mirrored layer.
    """
    if isinstance(channel, DirectFeedback):
        return [m @ y for m in channel.mats]
    if isinstance(channel, FixedChain):
        out: list[Mat] = [None] * len(channel.mats)
        signal = y
        for k in reversed(range(len(channel.mats))):
            signal = channel.mats[k] @ signal
            out[k] = signal
        return out
    if isinstance(channel, BackwardNet):
        return list(reversed(backward_generate(channel, y).h))
    raise TypeError(f"{type(channel).__name__} has no feedback pathway of its own")


def channel_fidelity(channel: Channel, y: Mat, trace: ActivationTrace) -> list[tuple[float, float]]:
    targets = transported_targets(channel, y)
    if len(targets) != len(trace.h):
        raise ShapeError("channel_fidelity depth", (len(targets),), (len(trace.h),))
    return [feedback_fidelity(t, h) for t, h in zip(targets, trace.h)]


@dataclass
class AlignmentReport:
    angles: list[float]
    cosines: list[float]
    fidelity_cosines: list[float] = field(default_factory=list)
    fidelity_l2: list[float] = field(default_factory=list)
    pseudoinverse_cosine: float | None = None

    def as_dict(self) -> dict:
        return {
            "angles_deg": self.angles,
            "cosines": self.cosines,
            "fidelity_cosines": self.fidelity_cosines,
            "fidelity_l2": self.fidelity_l2,
            "pseudoinverse_cosine": self.pseudoinverse_cosine,
        }


def alignment_report(algo: Algo, net: ForwardNet, channel: Channel, x: Mat, y: Mat) -> AlignmentReport:
    """Per-hidden-layer angle between ``algo``'s deltas and exact BP deltas on one batch."""
    trace = forward_pass(net, x)
    e = output_error(trace.y_hat, y)
    bp = bp_hidden_deltas(net, trace, e)
    pseudo = hidden_deltas(algo, net, channel, trace, e)
    angles, cosines = [], []
    for d_pseudo, d_bp in zip(pseudo, bp):
        try:
            c = cosine(d_pseudo, d_bp)
            angles.append(math.degrees(math.acos(c)))
            cosines.append(c)
        except UndefinedAngleError:
            angles.append(float("nan"))
            cosines.append(float("nan"))
    report = AlignmentReport(angles, cosines)
    if not isinstance(channel, Transpose):
        for c, l2 in channel_fidelity(channel, y, trace):
            report.fidelity_cosines.append(c)
            report.fidelity_l2.append(l2)
    return report


def pseudoinverse_apply(w: Mat, y: Mat, ridge: float = 1e-10) -> Mat:
    """Solve ``(W^T W + ridge I) h = W^T y``; the ridge -> 0 limit is ``pinv(W) @ y``."""
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if y.shape[0] != w.shape[0]:
        raise ShapeError("pseudoinverse_apply", w.shape, y.shape)
    gram = w.T @ w + ridge * np.eye(w.shape[1])
    try:
        sol = np.linalg.solve(gram, w.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "normal equations are singular; use ridge > 0") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("normal equations are singular; use ridge > 0")
    return sol


def pseudoinverse(w: Mat, ridge: float = 1e-10) -> Mat:
    return pseudoinverse_apply(w, np.eye(w.shape[0]), ridge)


@dataclass
class ProbeStep:
    step: int
    delta_cosine: float  # flattened batch, B y against W+ y
    pseudoinverse_cosine: float  # per column, averaged
    task_loss: float


def linear_probe(n_x: int, n_h: int, n_y: int, steps: int, rng: Rng, *,
                 batch: int = 32, lr: float = 0.05, feedback_lr: float = 0.05,
                 init_scale: float = 0.05, train_network: bool = True,
                 train_feedback: bool = True, feedback_init: str | Mat = "random",
                 ridge: float = 1e-10) -> list[ProbeStep]:
    """Linear network ``h = A x``, ``y_hat = W h`` with a regressed feedback matrix.

    A teacher ``T`` supplies targets ``y = T x``. Each step the network is
    trained by exact gradient descent on ``0.5 |W A x - y|^2`` (unless
    ``train_network`` is off) and ``B`` is regressed so that ``B y``
    approaches ``h``. The trajectory records how collinear the feedback
    direction ``B y`` is with the least-squares direction ``pinv(W) y``.
    ``feedback_init`` is ``"random"``, ``"pinv"`` or an explicit matrix.
    """
    if min(n_x, n_h, n_y) < 1:
        raise ValueError("probe dimensions must be positive")
    teacher = init_uniform(n_y, n_x, rng, 1.0)
    a = init_uniform(n_h, n_x, rng, init_scale)
    w = init_uniform(n_y, n_h, rng, init_scale)
    if isinstance(feedback_init, np.ndarray):
        if feedback_init.shape != (n_h, n_y):
            raise ShapeError("linear_probe feedback", feedback_init.shape, (n_h, n_y))
        b = feedback_init.astype(np.float64, copy=True)
    elif feedback_init == "pinv":
        b = pseudoinverse(w, ridge)
    elif feedback_init == "random":
        b = init_uniform(n_h, n_y, rng, 1.0)
    else:
        raise ValueError(f"unknown feedback_init {feedback_init!r}")

    x_probe = init_uniform(n_x, batch, rng, 1.0)
    y_probe = teacher @ x_probe
    history = []
    for t in range(steps + 1):
        by = b @ y_probe
        bp_dir = pseudoinverse_apply(w, y_probe, ridge)
        e_probe = w @ (a @ x_probe) - y_probe
        history.append(ProbeStep(t, cosine(by, bp_dir), columnwise_cosine(by, bp_dir),
                                 float(0.5 * (e_probe ** 2).sum(axis=0).mean())))
        if t == steps:
            break
        x = init_uniform(n_x, batch, rng, 1.0)
        y = teacher @ x
        h = a @ x
        e = w @ h - y
        if train_network:
            grad_w = e @ h.T / batch
            grad_a = (w.T @ e) @ x.T / batch
            w -= lr * grad_w
            a -= lr * grad_a
        if train_feedback:
            b -= feedback_lr * ((b @ y - h) @ y.T) / batch
    return history


PGM_MAXVAL = 255


def render_feature_map(x_hat: Mat, width: int, height: int) -> bytes:
    """Binary PGM (P5) of ``x_hat`` clamped to [0, 1], row-major."""
    flat = np.asarray(x_hat, dtype=np.float64).ravel()
    if flat.size != width * height:
        raise ShapeError("render_feature_map", (flat.size,), (width * height,))
    pixels = np.rint(np.clip(flat, 0.0, 1.0) * PGM_MAXVAL).astype(np.uint8)
    return f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> tuple[int, int, np.ndarray]:
    """Parse a binary PGM with 8-bit samples; returns (width, height, pixels)."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    pixels = np.frombuffer(data[pos + 1:], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"PGM payload has {pixels.size} bytes, expected {width * height}")
    return width, height, pixels.reshape(height, width)
