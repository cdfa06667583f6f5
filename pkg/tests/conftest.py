import numpy as np
import pytest

from gasl.data import write_idx


@pytest.fixture(scope="session")
def tiny_mnist(tmp_path_factory):
    """A 300/100-image IDX directory whose labels depend on image brightness."""
    root = tmp_path_factory.mktemp("mnist")
    g = np.random.default_rng(0)
    for prefix, n in (("train", 300), ("t10k", 100)):
        labels = np.arange(n) % 10
        imgs = g.integers(0, 40, size=(n, 28, 28))
        for k in range(10):
            imgs[labels == k, k * 2:k * 2 + 6, :] += 200
        write_idx(root / f"{prefix}-images-idx3-ubyte", np.minimum(imgs, 255).astype(np.uint8))
        write_idx(root / f"{prefix}-labels-idx1-ubyte", labels.astype(np.uint8))
    return root


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
