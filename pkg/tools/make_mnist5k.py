"""Build data/mnist5k/ from the 5000-image MNIST sample shipped inside mlxtend.

The full MNIST files are not bundled in this repository. mlxtend's wheel
carries 5000 genuine MNIST training digits (500 per class) as a gzipped CSV;
this script splits them 400/100 per class into train/t10k and writes the four
standard IDX file names (gzip-compressed).

    pip download --no-deps mlxtend -d /tmp/wheels
    python tools/make_mnist5k.py /tmp/wheels/mlxtend-*.whl data/mnist5k
"""
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from memcredit.data import MNIST_FILES, Dataset, write_idx
from memcredit.nn import Rng

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel, out_dir, per_class_val=100, seed=0):
    raw = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(np.int64)

    rng = Rng(seed)
    val_idx = []
    for c in range(10):
        members = np.flatnonzero(labels == c)
        val_idx.extend(members[rng.permutation(members.size)[:per_class_val]])
    is_val = np.zeros(labels.size, dtype=bool)
    is_val[val_idx] = True

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, mask in (("train", ~is_val), ("test", is_val)):
        ds = Dataset(pixels[mask].T / 255.0, labels[mask])
        img_name, lab_name = MNIST_FILES[split]
        write_idx(ds, out / f"{img_name}.gz", out / f"{lab_name}.gz", compress=True)
        print(f"{split}: {len(ds)} images -> {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
