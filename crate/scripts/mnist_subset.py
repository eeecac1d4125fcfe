#!/usr/bin/env python3
"""Write the 5000-digit MNIST sample bundled with mlxtend as IDX files.

The first 4000 digits become the training split, the last 1000 the test
split. Output files use the standard MNIST names so every tool that reads
the full distribution also reads these.

    pip install mlxtend
    python3 scripts/mnist_subset.py data/mnist
"""
import struct
import sys
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    x, y = mnist_data()
    rng = np.random.default_rng(20240101)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    write_images(out / "train-images-idx3-ubyte", x[:4000])
    write_labels(out / "train-labels-idx1-ubyte", y[:4000])
    write_images(out / "t10k-images-idx3-ubyte", x[4000:])
    write_labels(out / "t10k-labels-idx1-ubyte", y[4000:])


if __name__ == "__main__":
    main()
