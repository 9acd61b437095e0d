"""Rebuild the bundled 10k MNIST subset as gzipped IDX files.

Source: the `mnist` npm package (v1.1.0, MIT), which ships 10 000 MNIST
digits as per-class JSON arrays of 784 floats in [0, 1]. Usage:

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 build_idx.py package/src/digits

Digits are interleaved with a fixed permutation (seed 20240101) so any
prefix/suffix split is class-mixed.
"""
import gzip
import json
import struct
import sys

import numpy as np

src = sys.argv[1]
images, labels = [], []
for c in range(10):
    flat = json.load(open(f"{src}/{c}.json"))["data"]
    arr = np.asarray(flat, dtype=np.float64).reshape(-1, 784)
    images.append(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))
    labels.append(np.full(arr.shape[0], c, dtype=np.uint8))
images = np.concatenate(images)
labels = np.concatenate(labels)
perm = np.random.default_rng(20240101).permutation(len(labels))
images, labels = images[perm], labels[perm]

with gzip.GzipFile("images-idx3-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">IIII", 0x00000803, len(labels), 28, 28))
    f.write(images.tobytes())
with gzip.GzipFile("labels-idx1-ubyte.gz", "wb", mtime=0) as f:
    f.write(struct.pack(">II", 0x00000801, len(labels)))
    f.write(labels.tobytes())
print(len(labels), np.bincount(labels))
