"""Write MNIST as `label,f1,...,f784` CSV files for `dataset = csv`.

Sources:
  --idx DIR      the four standard idx files (optionally .gz) from the MNIST site
  --subset FILE  a `f1,...,f784,label` CSV (e.g. mlxtend's mnist_5k.csv.gz);
                 split per class into train/test with --test-per-class
"""

import argparse
import gzip
import random
import struct
from pathlib import Path


def open_any(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def find(d, stem):
    for name in (stem, stem + ".gz"):
        if (d / name).exists():
            return d / name
    raise SystemExit(f"missing {stem} in {d}")


def read_idx(images, labels):
    with open_any(images) as f:
        _, n, rows, cols = struct.unpack(">IIII", f.read(16))
        pixels = f.read(n * rows * cols)
    with open_any(labels) as f:
        _, m = struct.unpack(">II", f.read(8))
        ys = f.read(m)
    dim = rows * cols
    return [(ys[i], pixels[i * dim:(i + 1) * dim]) for i in range(n)]


def write(path, rows):
    with open(path, "w") as f:
        for label, px in rows:
            f.write(f"{label}," + ",".join(str(int(v)) for v in px) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--idx", type=Path)
    ap.add_argument("--subset", type=Path)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("out", type=Path)
    a = ap.parse_args()
    a.out.mkdir(parents=True, exist_ok=True)
    if a.idx:
        train = read_idx(find(a.idx, "train-images-idx3-ubyte"), find(a.idx, "train-labels-idx1-ubyte"))
        test = read_idx(find(a.idx, "t10k-images-idx3-ubyte"), find(a.idx, "t10k-labels-idx1-ubyte"))
    elif a.subset:
        with open_any(a.subset) as f:
            rows = [line.decode().strip().split(",") for line in f if line.strip()]
        by_class = {}
        for r in rows:
            by_class.setdefault(int(float(r[-1])), []).append([float(v) for v in r[:-1]])
        rng = random.Random(a.seed)
        train, test = [], []
        for label in sorted(by_class):
            xs = by_class[label]
            rng.shuffle(xs)
            test += [(label, x) for x in xs[:a.test_per_class]]
            train += [(label, x) for x in xs[a.test_per_class:]]
    else:
        raise SystemExit("give --idx or --subset")
    write(a.out / "train.csv", train)
    write(a.out / "test.csv", test)
    print(f"{len(train)} train, {len(test)} test rows in {a.out}")


if __name__ == "__main__":
    main()
