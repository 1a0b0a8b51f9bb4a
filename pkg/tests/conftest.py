import os
from pathlib import Path

import numpy as np
import pytest

from biograd.datasets import write_idx_images, write_idx_labels
from biograd.network import ForwardNet
from biograd.numerics import Rng

MNIST_ENV = "BIOGRAD_MNIST_DIR"


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def net_4653():
    return ForwardNet.init([4, 6, 5, 3], Rng(7))


def random_batch(n_in, n_out, b, seed=0):
    r = Rng(seed, 99)
    x = r.uniform(0.0, 1.0, n_in * b).reshape(n_in, b)
    labels = (r.random(b) * n_out).astype(int)
    y = np.zeros((n_out, b))
    y[labels, np.arange(b)] = 1.0
    return x, y


def perturbed(net, seed=3, scale=0.1):
    """Give biases nonzero values so bias paths are exercised."""
    r = Rng(seed, 5)
    for b in net.biases:
        b += r.uniform(-scale, scale, b.size).reshape(b.shape)
    return net


def _sample_mnist(dest: Path) -> Path:
    """Write the 5000-image MNIST extract bundled with mlxtend as IDX files.

    4000 images form the training split and 1000 the test split, chosen by a
    fixed permutation.
    """
    try:
        import mlxtend.data as mlxtend_data
    except ImportError:
        pytest.fail(f"desk-scale runs need MNIST: set {MNIST_ENV} to a directory of IDX "
                    "files or install the 'test' extra (mlxtend)")
    images, labels = mlxtend_data.mnist_data()
    order = Rng(0).permutation(len(labels))
    images = images[order].astype(np.uint8)
    labels = labels[order]
    dest.mkdir(parents=True, exist_ok=True)
    write_idx_images(dest / "train-images-idx3-ubyte", images[:4000])
    write_idx_labels(dest / "train-labels-idx1-ubyte", labels[:4000])
    write_idx_images(dest / "t10k-images-idx3-ubyte", images[4000:])
    write_idx_labels(dest / "t10k-labels-idx1-ubyte", labels[4000:])
    return dest


@pytest.fixture(scope="session")
def mnist_source(tmp_path_factory):
    """(data_dir, train subset size, description) for desk-scale runs.

    Uses a full MNIST copy when BIOGRAD_MNIST_DIR points at one (10k
    training subset), otherwise the bundled 5000-image extract.
    """
    full = os.environ.get(MNIST_ENV)
    if full:
        return Path(full), 10_000, f"MNIST from {full}, 10k training subset"
    return (_sample_mnist(tmp_path_factory.mktemp("mnist_sample")), 4000,
            "mlxtend MNIST extract, 4000 train / 1000 test")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
