#!/usr/bin/env python3
"""Build gzipped IDX files from the 10,000 MNIST digits bundled in the npm
`mnist` package (https://www.npmjs.com/package/mnist, MIT).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist

Rows are shuffled with a fixed seed, then split 8,000 train / 2,000 test.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main(src, dst):
    rows = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        for k in range(len(data) // 784):
            pix = [min(255, max(0, round(v * 255))) for v in data[k * 784:(k + 1) * 784]]
            rows.append((pix, digit))
    random.Random(20140301).shuffle(rows)
    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", rows[:8000]), ("test", rows[8000:])):
        images = [p for pix, _ in part for p in pix]
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, (len(part), 28, 28), images)
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, (len(part),), [l for _, l in part])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
