#!/usr/bin/env python3
"""Build raw IDX files from the 10,000 MNIST digits shipped in the npm `mnist` package.

Usage: make_mnist_subset.py <package-dir> <out-dir>

<package-dir> is an unpacked `npm pack mnist` tarball (contains src/digits/0.json..9.json).
Per class, the first 80% of digits go to the training files and the rest to the test
files. Samples are interleaved round-robin by class so any tail of a file is balanced.
"""
import json
import os
import struct
import sys


def load_digits(package_dir):
    per_class = []
    for digit in range(10):
        with open(os.path.join(package_dir, "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        images = [flat[i:i + 784] for i in range(0, len(flat), 784)]
        per_class.append([bytes(int(round(v * 255)) for v in img) for img in images])
    return per_class


def interleave(groups):
    out = []
    longest = max(len(g) for g in groups)
    for i in range(longest):
        for label, g in enumerate(groups):
            if i < len(g):
                out.append((g[i], label))
    return out


def write_idx(path_prefix, samples):
    with open(path_prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for img, _ in samples:
            f.write(img)
    with open(path_prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    package_dir, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    per_class = load_digits(package_dir)
    train, test = [], []
    for images in per_class:
        cut = (len(images) * 8) // 10
        train.append(images[:cut])
        test.append(images[cut:])
    write_idx(os.path.join(out_dir, "train"), interleave(train))
    write_idx(os.path.join(out_dir, "t10k"), interleave(test))


if __name__ == "__main__":
    main()
