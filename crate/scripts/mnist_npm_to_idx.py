#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the `mnist` npm package to IDX.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/

The package stores each digit class in `<d>.json` as a flat list of
28x28 intensities scaled to [0, 1] and rounded to three decimals. Rounding
back to the nearest multiple of 1/255 recovers the original bytes. Images are
interleaved with a fixed-seed shuffle so any prefix is class-balanced enough
to serve as a train/test split.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIDE = 28
PIXELS = SIDE * SIDE


def main() -> None:
    if len(sys.argv) != 3:
        sys.exit(f"usage: {sys.argv[0]} <digits-dir> <out-dir>")
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    records = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % PIXELS == 0, f"{digit}.json: ragged payload"
        for k in range(len(flat) // PIXELS):
            chunk = flat[k * PIXELS:(k + 1) * PIXELS]
            pixels = bytes(min(255, max(0, round(v * 255))) for v in chunk)
            records.append((pixels, digit))

    random.Random(0).shuffle(records)
    n = len(records)

    images = struct.pack(">IIII", 0x00000803, n, SIDE, SIDE)
    images += b"".join(p for p, _ in records)
    labels = struct.pack(">II", 0x00000801, n) + bytes(d for _, d in records)

    # mtime=0 keeps the archives byte-reproducible.
    for name, payload in (("mnist10k-images-idx3-ubyte.gz", images),
                          ("mnist10k-labels-idx1-ubyte.gz", labels)):
        with open(out / name, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
