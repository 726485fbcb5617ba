#!/usr/bin/env python3
"""Build IDX files from the 5000-image MNIST sample bundled with mlxtend.

The full MNIST download mirrors are often unreachable from build machines,
while PyPI usually is. mlxtend ships 500 images per digit (taken from the
MNIST training set) as a gzipped CSV; this script fetches the wheel with pip,
splits every class 400/100 into train/test (every fifth image of a class goes
to test) and writes the four conventional IDX files. The test split is stored
in a fixed shuffled order so that its leading slices mix all classes.

Usage: scripts/fetch_mnist_subset.py [OUT_DIR]   (default: data/mnist5k)
"""
import gzip
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist5k")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "mlxtend==0.24.0",
                        "--no-deps", "-d", tmp, "-q"], check=True)
        wheel = next(pathlib.Path(tmp).glob("mlxtend-*.whl"))
        raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = gzip.decompress(raw).decode().splitlines()
    seen = {}
    train, test = ([], []), ([], [])
    for row in rows:
        vals = [int(float(v)) for v in row.split(",")]
        pixels, label = vals[:-1], vals[-1]
        k = seen.get(label, 0)
        seen[label] = k + 1
        dst = test if k % 5 == 4 else train
        dst[0].append(pixels)
        dst[1].append(label)
    order = list(range(len(test[1])))
    random.Random(5000).shuffle(order)
    test = [test[0][i] for i in order], [test[1][i] for i in order]
    write_idx_images(out / "train-images-idx3-ubyte", train[0])
    write_idx_labels(out / "train-labels-idx1-ubyte", train[1])
    write_idx_images(out / "t10k-images-idx3-ubyte", test[0])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", test[1])
    print(f"wrote {len(train[1])} train / {len(test[1])} test images to {out}")


if __name__ == "__main__":
    main()
