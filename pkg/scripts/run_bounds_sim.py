"""Gaussian-pair simulation of the anatomized 1-NN and 3-NN error bounds."""

import sys

from anatknn.cli import main

if __name__ == "__main__":
    sys.exit(main([
        "bounds-sim", "--n", "50000", "--n-test", "10000", "--separation", "2",
        "--l", "1,2,3", "--k", "1,3", "--seed", "0", "--out", "runs/bounds", *sys.argv[1:],
    ]))
