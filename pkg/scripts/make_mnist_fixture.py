"""Build the small MNIST IDX fixture used by the test suite.

The 5000-image MNIST extract bundled with mlxtend (sorted by class) is
shuffled with a fixed seed and written as standard gzipped IDX files:
4000 training and 1000 test images.

    pip install mlxtend
    python scripts/make_mnist_fixture.py tests/data/mnist
"""

import sys
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from inttrain.data import write_idx


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y = mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    x = x[order].astype(np.uint8).reshape(-1, 28, 28)
    y = y[order].astype(np.uint8)
    write_idx(out / "train-images-idx3-ubyte.gz", x[:4000])
    write_idx(out / "train-labels-idx1-ubyte.gz", y[:4000])
    write_idx(out / "t10k-images-idx3-ubyte.gz", x[4000:])
    write_idx(out / "t10k-labels-idx1-ubyte.gz", y[4000:])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/mnist")
