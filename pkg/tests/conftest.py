from pathlib import Path

import numpy as np
import pytest

from anneal_cnn.data import normalize

MNIST_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist"


def have_mnist():
    return MNIST_DIR.is_dir() and any(MNIST_DIR.glob("train-images*"))


needs_mnist = pytest.mark.skipif(not have_mnist(), reason="MNIST files not present in data/mnist")


def synthetic_dataset(n, seed=0):
    """Random images whose label is encoded by a bright stripe, so it is learnable."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n)
    images = rng.integers(0, 40, size=(n, 28, 28)).astype(np.uint8)
    for i, y in enumerate(labels):
        images[i, 2 + 2 * y: 4 + 2 * y, 4:24] = 255
    return normalize(images, labels)


@pytest.fixture
def tiny_data():
    return synthetic_dataset(60, seed=1), synthetic_dataset(20, seed=2)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(RESULTS):
            terminalreporter.write_line(line)
