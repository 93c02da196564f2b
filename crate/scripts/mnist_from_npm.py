#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the `mnist` npm package.

The canonical MNIST mirrors are not always reachable; the npm package ships
10 000 real MNIST digits as normalized JSON arrays. This script quantizes them
back to uint8, shuffles with a fixed seed and writes a 9000/1000 train/test
split as gzipped IDX files (magic 0x00000803 / 0x00000801).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in array.shape:
            f.write(struct.pack(">I", d))
        f.write(array.astype(np.uint8).tobytes())


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads(Path(src, f"{digit}.json").read_text())["data"])
        data = data.reshape(-1, 28, 28)
        images.append(np.clip(np.rint(data * 255.0), 0, 255))
        labels.append(np.full(len(data), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(images))
    images, labels = images[order], labels[order]
    n_train = 9000
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    write_idx(dst / "train-images-idx3-ubyte.gz", images[:n_train], 0x00000803)
    write_idx(dst / "train-labels-idx1-ubyte.gz", labels[:n_train], 0x00000801)
    write_idx(dst / "t10k-images-idx3-ubyte.gz", images[n_train:], 0x00000803)
    write_idx(dst / "t10k-labels-idx1-ubyte.gz", labels[n_train:], 0x00000801)
    print(f"wrote {n_train} train / {len(images) - n_train} test digits to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
