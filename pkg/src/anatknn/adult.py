"""UCI Adult preprocessing: merge the train/test files, drop incomplete rows, keep five attributes."""

from __future__ import annotations

import csv
import logging
from importlib import resources
from pathlib import Path

from .data import MISSING_TOKENS, DataError, Schema, load_schema

logger = logging.getLogger(__name__)

RAW_COLUMNS = (
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
    "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
    "hours-per-week", "native-country", "income",
)
KEPT_COLUMNS = ("education", "marital-status", "capital-gain", "capital-loss", "hours-per-week", "income")


def resource_path(name: str) -> Path:
    return Path(str(resources.files("anatknn") / "resources" / name))


def adult_schema() -> Schema:
    return load_schema(resource_path("adult_schema.json"))


def _read_raw(path: Path) -> list[list[str]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh, skipinitialspace=True):
            if len(rec) != len(RAW_COLUMNS):
                # blank lines and the "|1x3 Cross validator" banner in adult.test
                continue
            rows.append([cell.strip() for cell in rec])
    return rows


def prepare_adult(raw_dir: str | Path, out_csv: str | Path) -> int:
    """Write the preprocessed Adult CSV and return its row count.

    Rows with a missing value in *any* raw column are removed before the
    projection, which is what yields 45222 instances from the 48842 raw ones.
    """
    raw_dir = Path(raw_dir)
    rows: list[list[str]] = []
    for name in ("adult.data", "adult.test"):
        path = raw_dir / name
        if not path.exists():
            raise DataError(f"missing {path}; see scripts/fetch_adult.py")
        rows.extend(_read_raw(path))
    total = len(rows)
    complete = [r for r in rows if not any(cell in MISSING_TOKENS for cell in r)]
    keep = [RAW_COLUMNS.index(c) for c in KEPT_COLUMNS]
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KEPT_COLUMNS)
        for r in complete:
            out = [r[i] for i in keep]
            out[-1] = out[-1].rstrip(".")
            writer.writerow(out)
    logger.info("adult: kept %d of %d raw rows", len(complete), total)
    return len(complete)
