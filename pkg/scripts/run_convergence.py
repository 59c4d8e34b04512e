"""Five-partition convergence curves on Adult for original and anatomized (l=2,3) data."""

import sys

from anatknn.adult import resource_path
from anatknn.cli import main

if __name__ == "__main__":
    sys.exit(main([
        "convergence", "--in", "data/adult.csv",
        "--schema", str(resource_path("adult_schema.json")),
        "--l", "2,3", "--seed", "0", "--out", "runs/convergence", *sys.argv[1:],
    ]))
