"""End-to-end run through the command-line front end on a small synthetic cube."""

import argparse
import sys
from pathlib import Path

from pixspec.cli import main as cli

SMALL = """\
[data]
patch_size = 6
n_train_patches = 400
n_test_patches = 50
n_spectra = 1000
n_test_spectra = 200
[train]
epochs = 10
batch_size = 32
"""


def run(*args):
    code = cli([str(a) for a in args])
    if code:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "small.ini").write_text(SMALL)
    cfg = ["--config", out / "small.ini"]

    run("synth", "--out", out / "synth", "--dims", 32, 32, 16, "--seed", 1)
    cube = out / "synth" / "cube.hcub"
    run("analyze", cube, "--out", out / "analyze", "--max-pairs", 100000)
    run("optimize-filters", cube, "--n-filters", 4, "--out", out / "filters", *cfg)
    run("optimize-layout", cube, "--configuration", "optimized-squarish", "--n-filters", 4,
        "--n-steps", 2, "--out", out / "layout", *cfg)
    run("evaluate", cube, "--layout", out / "layout" / "layout.json",
        "--reconstructor", out / "layout" / "reconstructor.rcon", "--steps", 2,
        "--out", out / "evaluate")


if __name__ == "__main__":
    main()
