import os
import struct

import numpy as np
import pytest

from syncpretrain.dataset import IMAGE_MAGIC, LABEL_MAGIC


def write_raw_idx(images_path, labels_path, pixels, labels):
    """Independent IDX writer (does not use the package's write_idx)."""
    n, h, w = pixels.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, h, w))
        f.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy_mnist_dir(tmp_path_factory):
    """A synthetic 28x28 IDX pool: 12 examples of each digit plus a 5-per-class test pair."""
    d = tmp_path_factory.mktemp("toy_mnist")
    gen = np.random.default_rng(7)
    for prefix, per in (("train", 12), ("t10k", 5)):
        labels = np.repeat(np.arange(10), per)
        gen.shuffle(labels)
        pixels = gen.integers(0, 256, size=(labels.size, 28, 28))
        # a faint label-dependent stripe keeps classes distinguishable
        for i, lab in enumerate(labels):
            pixels[i, lab * 2:lab * 2 + 3, :] = 255
        write_raw_idx(d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte",
                      pixels, labels)
    return d


@pytest.fixture(scope="session")
def desk_data_dir(tmp_path_factory):
    """IDX files holding the 5k genuine MNIST digits shipped with mlxtend."""
    from syncpretrain.desk_data import write_desk_idx

    target = os.environ.get("SYNCPRETRAIN_DATA_DIR")
    if not target or not os.path.exists(os.path.join(target, "desk-images-idx3-ubyte")):
        target = tmp_path_factory.mktemp("desk")
    try:
        write_desk_idx(str(target))
    except FileNotFoundError as exc:
        pytest.skip(f"desk MNIST pool unavailable: {exc}")
    return target


_ACCEPTANCE_LINES = []


class AcceptanceLog:
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(self, criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    def skip(self, criterion, reason):
        line = f"[SKIP] criterion {criterion}: {reason}"
        _ACCEPTANCE_LINES.append(line)
        print(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
