import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biograd.diagnostics import (
    NonFiniteLossError,
    SingularSystemError,
    UndefinedAngleError,
    alignment_angle,
    alignment_report,
    channel_fidelity,
    columnwise_cosine,
    cosine,
    feedback_fidelity,
    finite_diff_grads,
    linear_probe,
    pseudoinverse,
    pseudoinverse_apply,
    read_pgm,
    render_feature_map,
    transported_targets,
)
from biograd.network import ForwardNet, forward_pass
from biograd.numerics import Rng, ShapeError
from biograd.rules import Algo, FixedChain, Transpose, make_channel

from conftest import random_batch


def test_finite_diff_of_square():
    theta = np.array([[3.0]])
    (g,) = finite_diff_grads(lambda: float(theta[0, 0] ** 2), [theta])
    assert g[0, 0] == pytest.approx(6.0, abs=1e-8)
    assert theta[0, 0] == 3.0


def test_finite_diff_quadratic_form():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    v = np.array([[0.5], [-1.0]])
    (g,) = finite_diff_grads(lambda: float(0.5 * (v.T @ a @ v)[0, 0]), [v])
    assert np.allclose(g, a @ v, atol=1e-8)


def test_finite_diff_rejects_nonfinite_loss():
    p = np.zeros((1, 1))
    with pytest.raises(NonFiniteLossError):
        finite_diff_grads(lambda: float("nan"), [p])
    with pytest.raises(ValueError):
        finite_diff_grads(lambda: 0.0, [p], step=0.0)


def test_angles():
    g = np.array([[1.0], [2.0], [-1.0]])
    assert alignment_angle(g, 3 * g) == pytest.approx(0.0, abs=1e-6)
    assert alignment_angle(g, -g) == pytest.approx(180.0, abs=1e-9)
    assert alignment_angle(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])) == 90.0
    with pytest.raises(UndefinedAngleError):
        alignment_angle(g, np.zeros_like(g))
    with pytest.raises(ShapeError):
        cosine(g, g.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_angle_cosine_consistency(seed):
    r = Rng(seed)
    a, b = r.uniform(-1, 1, 6).reshape(3, 2), r.uniform(-1, 1, 6).reshape(3, 2)
    ang = alignment_angle(a, b)
    assert 0.0 <= ang <= 180.0
    assert math.cos(math.radians(ang)) == pytest.approx(cosine(a, b), abs=1e-12)
    assert ang == pytest.approx(alignment_angle(b, a), abs=1e-12)


def test_feedback_fidelity():
    h = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert feedback_fidelity(h, h) == (1.0, 0.0)
    c, l2 = feedback_fidelity(np.array([[0.0, 1.0], [1.0, 0.0]]), h)
    assert c == 0.0 and l2 == pytest.approx((math.sqrt(2) + math.sqrt(5)) / 2)
    assert columnwise_cosine(-h, h) == -1.0
    with pytest.raises(ShapeError):
        feedback_fidelity(h, h[:, :1])


def test_columnwise_cosine_skips_zero_columns():
    a = np.array([[1.0, 0.0], [0.0, 0.0]])
    b = np.array([[2.0, 1.0], [0.0, 1.0]])
    assert columnwise_cosine(a, b) == 1.0
    with pytest.raises(UndefinedAngleError):
        columnwise_cosine(np.zeros((2, 2)), b)


def test_transported_targets_per_channel():
    net = ForwardNet.init([4, 6, 5, 3], Rng(0))
    y = np.eye(3)
    fa = make_channel(Algo.FA, net, Rng(1))
    t = transported_targets(fa, y)
    assert np.allclose(t[1], fa.mats[1] @ y) and np.allclose(t[0], fa.mats[0] @ fa.mats[1] @ y)
    dfa = make_channel(Algo.DFA, net, Rng(1))
    assert all(np.array_equal(m @ y, v) for m, v in zip(dfa.mats, transported_targets(dfa, y)))
    bnet = make_channel(Algo.BFA, net, Rng(1))
    t = transported_targets(bnet, y)
    assert [v.shape for v in t] == [(6, 3), (5, 3)]
    with pytest.raises(TypeError):
        transported_targets(Transpose(), y)


def test_alignment_report():
    net = ForwardNet.init([4, 6, 5, 3], Rng(0))
    x, y = random_batch(4, 3, 16)
    bp = alignment_report(Algo.BP, net, Transpose(), x, y)
    assert bp.angles == pytest.approx([0.0, 0.0], abs=1e-5) and bp.fidelity_cosines == []
    same = alignment_report(Algo.FA, net, FixedChain.transpose_of(net), x, y)
    assert same.angles == pytest.approx([0.0, 0.0], abs=1e-5)
    rnd = alignment_report(Algo.FA, net, make_channel(Algo.FA, net, Rng(3)), x, y)
    assert all(0 <= a <= 180 for a in rnd.angles) and len(rnd.fidelity_l2) == 2
    d = rnd.as_dict()
    assert set(d) == {"angles_deg", "cosines", "fidelity_cosines", "fidelity_l2",
                      "pseudoinverse_cosine"}


def test_channel_fidelity_depth_check():
    net = ForwardNet.init([4, 6, 5, 3], Rng(0))
    other = ForwardNet.init([4, 6, 3], Rng(0))
    x, y = random_batch(4, 3, 4)
    with pytest.raises(ShapeError):
        channel_fidelity(make_channel(Algo.DFA, other, Rng(1)), y, forward_pass(net, x))


def test_pseudoinverse_examples():
    assert np.allclose(pseudoinverse(np.eye(3)), np.eye(3), atol=1e-9)
    assert np.allclose(pseudoinverse(2 * np.eye(3)), 0.5 * np.eye(3), atol=1e-9)
    w = Rng(1).uniform(-1, 1, 12).reshape(4, 3)
    assert np.allclose(pseudoinverse(w), np.linalg.pinv(w), atol=1e-8)


def test_pseudoinverse_is_least_squares_optimal():
    r = Rng(2)
    w = r.uniform(-1, 1, 15).reshape(5, 3)
    y = r.uniform(-1, 1, 5).reshape(5, 1)
    h = pseudoinverse_apply(w, y)
    best = np.linalg.norm(w @ h - y)
    probes = r.uniform(-1, 1, 3 * 1000).reshape(3, 1000)
    assert np.all(np.linalg.norm(w @ (h + 0.1 * probes) - y, axis=0) >= best - 1e-12)


def test_pseudoinverse_idempotence():
    w = Rng(3).uniform(-1, 1, 12).reshape(4, 3)
    p = w @ pseudoinverse(w)
    assert np.max(np.abs(p @ p - p)) <= 1e-8


def test_pseudoinverse_singular_without_ridge():
    w = np.zeros((3, 2))
    with pytest.raises(SingularSystemError):
        pseudoinverse_apply(w, np.ones((3, 1)), ridge=0.0)
    assert not pseudoinverse_apply(w, np.ones((3, 1)), ridge=1e-6).any()
    with pytest.raises(ValueError):
        pseudoinverse_apply(w, np.ones((3, 1)), ridge=-1.0)


def test_linear_probe_pinv_init_is_aligned_from_the_start():
    hist = linear_probe(5, 4, 3, 0, Rng(0), feedback_init="pinv", train_network=False,
                        train_feedback=False)
    assert hist[0].delta_cosine == pytest.approx(1.0, abs=1e-9)


def test_linear_probe_untrained_is_flat():
    hist = linear_probe(5, 4, 3, 50, Rng(1), train_network=False, train_feedback=False)
    assert len({h.delta_cosine for h in hist}) == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linear_probe_converges_to_pseudoinverse(seed):
    hist = linear_probe(5, 4, 3, 3000, Rng(seed))
    assert hist[-1].task_loss < hist[0].task_loss
    assert hist[-1].delta_cosine >= 0.99


def test_linear_probe_bad_inputs():
    with pytest.raises(ValueError):
        linear_probe(0, 4, 3, 1, Rng(0))
    with pytest.raises(ShapeError):
        linear_probe(5, 4, 3, 1, Rng(0), feedback_init=np.zeros((3, 4)))
    with pytest.raises(ValueError):
        linear_probe(5, 4, 3, 1, Rng(0), feedback_init="ones")


def _independent_pgm(data):
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    assert m is not None
    w, h, maxval = (int(g) for g in m.groups())
    return w, h, maxval, np.frombuffer(data[m.end():], dtype=np.uint8)


def test_pgm_extremes():
    zeros = render_feature_map(np.zeros(784), 28, 28)
    assert zeros.startswith(b"P5\n28 28\n255\n")
    w, h, maxval, px = _independent_pgm(zeros)
    assert (w, h, maxval) == (28, 28, 255) and px.size == 784 and not px.any()
    _, _, _, px = _independent_pgm(render_feature_map(np.ones((784, 1)), 28, 28))
    assert np.all(px == 255)


def test_pgm_clamps_and_rounds():
    data = render_feature_map(np.array([-3.0, 0.5, 2.0, 0.1]), 2, 2)
    assert _independent_pgm(data)[3].tolist() == [0, 128, 255, 26]
    with pytest.raises(ShapeError):
        render_feature_map(np.zeros(5), 2, 2)


def test_pgm_round_trip():
    x = Rng(4).random(6 * 4)
    data = render_feature_map(x, 6, 4)
    w, h, px = read_pgm(data)
    _, _, _, ref = _independent_pgm(data)
    assert (w, h) == (6, 4) and np.array_equal(px.ravel(), ref)
    assert np.max(np.abs(px.ravel() / 255.0 - x)) <= 0.5 / 255 + 1e-12
    assert read_pgm(b"P5\n# comment\n2 1\n255\n\x00\xff")[2].tolist() == [[0, 255]]
    with pytest.raises(ValueError):
        read_pgm(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError):
        read_pgm(b"P5\n2 2\n255\n\x00")
