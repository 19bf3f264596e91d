"""Noiseless N = B = S = 8 LVF design: pseudo-inverse and trained reconstructor.

Also reports how well a reconstructor trained on patches of a larger cube
generalises to a held-out crop, which is much harder for constant-lr Adam.
"""

import argparse
import math

import numpy as np

from pixspec.datacube import HyperCube, SynthSpec, sample_patches, split_columns, synth_cube
from pixspec.layout import lvf_layout
from pixspec.measurement import MeasurementSpec, build_H, forward
from pixspec.reconstruct import reconstruct
from pixspec.spectral import Domain, psnr, regular_filters
from pixspec.train import Model, TrainConfig, train

DOMAIN = Domain(450, 940, 5, 490)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--held-out", action="store_true", help="also train on a 48x48 cube")
    args = ap.parse_args()

    cube = synth_cube(SynthSpec(dims=(8, 8, 8), seed=3))
    layout = lvf_layout(regular_filters(8), (8, 8))
    H = build_H(layout, cube.grid, 8)
    y = forward(cube, layout, MeasurementSpec(steps=8, snr=math.inf))
    print(f"cond(H) {np.linalg.cond(H):.3f}")
    print(f"pseudo-inverse {psnr(cube.data.ravel(), np.linalg.pinv(H) @ y.serialize()):.1f} dB")

    model = Model.pushbroom(layout, cube.grid, 8, snr=math.inf, domain=DOMAIN)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, patience=0, batch_size=1)
    trained, _ = train(model, cube.data[None], cfg, val_data=cube.data[None])
    print(f"trained on the cube itself {psnr(cube.data, reconstruct(trained.reconstructor(), y)):.1f} dB")

    if args.held_out:
        big = synth_cube(SynthSpec(dims=(48, 48, 8), seed=3))
        left, right = split_columns(big, 40)
        crop = HyperCube(right.data[:8, :8], right.grid, right.max_value)
        patches = sample_patches(left, 1000, 8, True, seed=0)
        cfg = TrainConfig(learning_rate=args.lr, epochs=150, patience=0, batch_size=16)
        trained, _ = train(model, patches, cfg)
        yc = forward(crop, layout, MeasurementSpec(steps=8, snr=math.inf))
        print(f"held-out crop {psnr(crop.data, reconstruct(trained.reconstructor(), yc)):.1f} dB")


if __name__ == "__main__":
    main()
