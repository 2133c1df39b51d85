"""Write a reduced MNIST in IDX layout from the 5,000-digit CSV bundled with mlxtend.

    pip download --no-deps mlxtend==0.24.0 -d /tmp/wheels
    python3 scripts/mnist_subset.py /tmp/wheels/mlxtend-0.24.0-py3-none-any.whl /data/mnist5k/mnist

The CSV is sorted by class; a seeded shuffle (stream "subset") precedes the
4,000 train / 1,000 test split. This is a stand-in for offline machines and
not the full 60k/10k distribution.
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from spatialcontrast.data import encode_idx_images, encode_idx_labels
from spatialcontrast.rng import make_rng

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
N_TRAIN = 4000


def main(wheel: str, out: str) -> None:
    with zipfile.ZipFile(wheel) as z:
        table = np.loadtxt(io.BytesIO(gzip.decompress(z.read(MEMBER))), delimiter=",", dtype=np.int64)
    order = make_rng(0, "subset").permutation(len(table))
    images = table[order, :-1].reshape(-1, 28, 28).astype(np.uint8)
    labels = table[order, -1]
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for split, sl in (("train", slice(0, N_TRAIN)), ("t10k", slice(N_TRAIN, None))):
        (d / f"{split}-images-idx3-ubyte").write_bytes(encode_idx_images(images[sl]))
        (d / f"{split}-labels-idx1-ubyte").write_bytes(encode_idx_labels(labels[sl]))
    print(f"{d}: {N_TRAIN} train, {len(table) - N_TRAIN} test; train label counts {np.bincount(labels[:N_TRAIN]).tolist()}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
