#!/usr/bin/env python3
"""Write a stratified 4000/1000 train/test split of the 5000-digit MNIST
sample that ships with mlxtend (mlxtend/data/data/mnist_5k.csv.gz) as
gzip-compressed IDX files.

usage: make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>
"""
import gzip
import struct
import sys

import numpy as np


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for extent in array.shape:
            f.write(struct.pack(">I", extent))
        f.write(array.astype(np.uint8).tobytes())


def main():
    src, out = sys.argv[1], sys.argv[2]
    table = np.genfromtxt(gzip.open(src), delimiter=",").astype(np.int64)
    pixels, labels = table[:, :-1], table[:, -1]
    rng = np.random.default_rng(20151101)
    train, test = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test.extend(idx[:100])
        train.extend(idx[100:])
    for name, idx in (("train", train), ("t10k", test)):
        idx = rng.permutation(np.array(idx))
        images = pixels[idx].reshape(-1, 28, 28)
        write_idx(f"{out}/mnist5k-{name}-images-idx3-ubyte.gz", images, 0x00000803)
        write_idx(f"{out}/mnist5k-{name}-labels-idx1-ubyte.gz", labels[idx], 0x00000801)
        print(name, images.shape, np.bincount(labels[idx]))


if __name__ == "__main__":
    main()
