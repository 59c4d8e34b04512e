"""k-nearest-neighbor learning on anatomized (l-diverse) training data."""

__version__ = "0.1.0"
