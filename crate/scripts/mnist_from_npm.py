#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The package ships ~10k MNIST digits as per-class JSON arrays of floats in
[0, 1]. Digits are interleaved class by class, requantized to u8, and the
last 1000 are written as the test split.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits OUT_DIR
"""
import json
import os
import struct
import sys


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, out, test_count=1000):
    per_class = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        count = len(flat) // 784
        per_class.append([
            [min(255, max(0, round(v * 255))) for v in flat[k * 784:(k + 1) * 784]]
            for k in range(count)
        ])
    images, labels = [], []
    for k in range(max(len(c) for c in per_class)):
        for digit, imgs in enumerate(per_class):
            if k < len(imgs):
                images.append(imgs[k])
                labels.append(digit)
    os.makedirs(out, exist_ok=True)
    split = len(images) - test_count
    write_images(os.path.join(out, "train-images-idx3-ubyte"), images[:split])
    write_labels(os.path.join(out, "train-labels-idx1-ubyte"), labels[:split])
    write_images(os.path.join(out, "t10k-images-idx3-ubyte"), images[split:])
    write_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), labels[split:])
    print(f"wrote {split} train and {len(images) - split} test images to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
