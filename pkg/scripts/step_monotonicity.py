"""Best test PSNR per number of push-broom steps over the lr x l2 grid."""

import argparse

from pixspec.datacube import SynthSpec, synth_cube
from pixspec.sweep import CONFIGURATIONS, DataConfig, FixedClock, SweepGrid, prepare_data, sweep
from pixspec.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configuration", default="regular-squarish", choices=CONFIGURATIONS)
    ap.add_argument("--n-filters", type=int, default=4)
    ap.add_argument("--patch", type=int, default=6)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out", default=None, help="write the sweep CSVs here")
    args = ap.parse_args()

    data = prepare_data(synth_cube(SynthSpec()),
                        DataConfig(patch_size=args.patch, n_train_patches=2000, n_spectra=2000,
                                   n_test_spectra=500))
    grid = SweepGrid(configurations=(args.configuration,), n_filters=(args.n_filters,),
                     n_steps=(1, 2, 4))
    results = sweep(data, TrainConfig(epochs=args.epochs, batch_size=32, patience=0), grid,
                    out_dir=args.out, clock=FixedClock())
    for r in results:
        b = r.best
        print(f"S={r.cell.n_steps}  lr={b.lr:g}  l2={b.l2:g}  val={b.val_loss:.4e}  "
              f"test psnr={b.test_psnr:.3f} dB  compression={b.compression_ratio:g}")


if __name__ == "__main__":
    main()
