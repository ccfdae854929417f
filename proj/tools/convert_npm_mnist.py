#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The npm package ships 10,000 MNIST digits as JSON arrays of pixel
intensities in [0,1] rounded to three decimals, one file per class.
Multiplying by 255 and rounding recovers the original bytes exactly.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/convert_npm_mnist.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path


def main() -> None:
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    examples = []
    for label in range(10):
        flat = json.loads((src / f"{label}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            pixels = bytes(int(round(v * 255)) for v in flat[i:i + 784])
            examples.append((pixels, label))
    random.Random(20191015).shuffle(examples)
    n = len(examples)
    with open(dst / "mnist-10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in examples:
            f.write(pixels)
    with open(dst / "mnist-10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in examples))
    print(f"wrote {n} examples to {dst}")


if __name__ == "__main__":
    main()
