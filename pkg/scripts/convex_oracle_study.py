"""Trained reconstructor vs closed-form ridge on a fixed regular LVF design.

Prints the oracle and trained test MSE for one (lr, batch, epochs) setting so
the optimiser budget can be explored from the shell, e.g.

    python scripts/convex_oracle_study.py --lr 3e-5 --batch 64 --epochs 1200
"""

import argparse
import time

import numpy as np

from pixspec.datacube import SynthSpec, sample_patches, split_columns, synth_cube, train_val_split
from pixspec.layout import lvf_layout
from pixspec.reconstruct import closed_form_reconstructor
from pixspec.spectral import regular_filters
from pixspec.train import Model, TrainConfig, as_samples, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patch", type=int, default=6)
    ap.add_argument("--patches", type=int, default=4000)
    ap.add_argument("--lr", type=float, default=3e-5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=1200)
    ap.add_argument("--l2", type=float, default=1e-4)
    ap.add_argument("--replicates", type=int, default=4, help="noise draws per sample for the oracle")
    args = ap.parse_args()

    cube = synth_cube(SynthSpec())
    left, right = split_columns(cube, 48)
    pool = sample_patches(left, args.patches, args.patch, True, seed=1)
    test = sample_patches(right, 300, args.patch, False, seed=2)
    tr, va = train_val_split(pool, 0.1, seed=0)
    model = Model.pushbroom(lvf_layout(regular_filters(6), (args.patch, args.patch)), cube.grid, 4)

    x = as_samples(tr, model)
    ys, xs = [], []
    for rep in range(args.replicates):
        y = model.measure(x)
        noise = np.random.default_rng([99, rep]).standard_normal(y.shape)
        ys.append(y + np.mean(np.abs(y)) / model.snr * noise)
        xs.append(x.reshape(len(x), -1))
    oracle = model.copy()
    oracle.weights = closed_form_reconstructor(np.concatenate(ys), np.concatenate(xs),
                                               args.l2 * args.patch**2 * cube.shape[2])
    ref = evaluate(oracle, test, noise_seed=5)
    print(f"oracle test mse {ref:.4e}  (|W| max {np.abs(oracle.weights).max():.3g})")

    cfg = TrainConfig(learning_rate=args.lr, l2_weight=args.l2, epochs=args.epochs, patience=0,
                      batch_size=args.batch)
    t0 = time.perf_counter()
    trained, hist = train(model, tr, cfg, val_data=va)
    got = evaluate(trained, test, noise_seed=5)
    print(f"trained test mse {got:.4e}  ratio {got / ref:.3f}  ({time.perf_counter() - t0:.0f}s)")
    for h in hist[:: max(1, len(hist) // 20)]:
        print(f"  epoch {h.epoch:5d} {h.split:5s} data {h.data_mse:.4e}")


if __name__ == "__main__":
    main()
