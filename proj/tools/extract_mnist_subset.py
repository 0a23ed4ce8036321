#!/usr/bin/env python3
"""Build IDX-format MNIST files from the 5000-sample subset bundled with mlxtend.

Usage: extract_mnist_subset.py <mlxtend wheel or site-packages dir> <output dir>

Writes mnist5k-images-idx3-ubyte.gz and mnist5k-labels-idx1-ubyte.gz.
Obtain the wheel with `pip download mlxtend --no-deps`.
"""
import gzip
import os
import struct
import sys
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(source):
    if os.path.isdir(source):
        with open(os.path.join(source, MEMBER), "rb") as f:
            raw = f.read()
    else:
        raw = zipfile.ZipFile(source).read(MEMBER)
    return gzip.decompress(raw).decode().splitlines()


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    rows = [list(map(int, line.split(","))) for line in read_csv(sys.argv[1])]
    os.makedirs(sys.argv[2], exist_ok=True)
    n = len(rows)
    images = bytearray(struct.pack(">IIII", 0x00000803, n, 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, n))
    for row in rows:
        images += bytes(row[:784])
        labels.append(row[784])
    for name, blob in (("mnist5k-images-idx3-ubyte.gz", images),
                       ("mnist5k-labels-idx1-ubyte.gz", labels)):
        with gzip.GzipFile(os.path.join(sys.argv[2], name), "wb", mtime=0) as f:
            f.write(blob)


if __name__ == "__main__":
    main()
