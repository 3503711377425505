#!/usr/bin/env python3
"""Convert the digits bundled in the npm `mnist` package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
digits as per-class JSON arrays of intensities in [0, 1] rounded to three
decimals. This script restores the byte intensities, shuffles the samples
with a fixed seed and writes an 8000/2000 train/test split in IDX format.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        for start in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[start:start + 784]]
            samples.append((pixels, digit))
    random.Random(20191).shuffle(samples)
    train, test = samples[:8000], samples[8000:]
    dst.mkdir(parents=True, exist_ok=True)
    write_images(dst / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(dst / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(dst / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(dst / "t10k-labels-idx1-ubyte", [s[1] for s in test])


if __name__ == "__main__":
    main()
