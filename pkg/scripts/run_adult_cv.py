"""10-fold CV on Adult: original, anatomized (l=2,3) and 2-anonymous 1-NN error."""

import sys

from anatknn.adult import resource_path
from anatknn.cli import main

if __name__ == "__main__":
    sys.exit(main([
        "cv", "--in", "data/adult.csv",
        "--schema", str(resource_path("adult_schema.json")),
        "--hierarchies", str(resource_path("adult_hierarchies.json")),
        "--variants", "original,anatomized,anonymized",
        "--k", "1", "--l", "2,3", "--anon-k", "2", "--folds", "10",
        "--seed", "7", "--out", "runs/adult_cv", *sys.argv[1:],
    ]))
