"""
Training the decoder on MNIST digits
====================================

The decoder learns to map embeddings back to images; the encoder stays frozen
here. A few reconstructions are written as PGM files.
"""
from pathlib import Path

import numpy as np

from memcredit import DecoderParams, EncoderParams, Rng, load_mnist
from memcredit.autoencoder import decode, recon_step, write_pgm
from memcredit.credit import encode

data = load_mnist(Path(__file__).resolve().parents[1] / "data" / "mnist5k", "train")
data = data.subset(np.arange(1000))
rng = Rng(0)
enc, dec = EncoderParams.init(rng, 64), DecoderParams.init(rng, 64)
_, E = encode(enc, data.images)


def mse():
    return float(np.mean((decode(dec, E) - data.images) ** 2))


print(f"before: {mse():.4f}")
for i in Rng(1).integers(len(data), size=3000):
    recon_step(dec, E[:, i], data.images[:, i])
print(f"after:  {mse():.4f}")

out = Path("recon")
out.mkdir(exist_ok=True)
for j in range(3):
    write_pgm(out / f"digit{j}.pgm", data.images[:, j])
    write_pgm(out / f"recon{j}.pgm", decode(dec, E[:, j])[:, 0])
