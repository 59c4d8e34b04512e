from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from anatknn.data import AttributeSchema, Dataset, Kind, Role

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
ADULT_CSV = ROOT / "data" / "adult.csv"

MIXED_SCHEMA = (
    AttributeSchema("age", Kind.NUMERIC, Role.QUASI_IDENTIFYING),
    AttributeSchema("city", Kind.CATEGORICAL, Role.QUASI_IDENTIFYING),
    AttributeSchema("disease", Kind.CATEGORICAL, Role.SENSITIVE),
    AttributeSchema("y", Kind.CATEGORICAL, Role.CLASS),
)


def random_dataset(
    rng: np.random.Generator,
    n: int,
    n_sensitive: int = 4,
    n_numeric: int = 1,
    n_categorical: int = 1,
    numeric_levels: int | None = 6,
    ids: np.ndarray | None = None,
) -> Dataset:
    """Mixed-type table; small integer grids make exact distance ties common."""
    schema, cols = [], {}
    for j in range(n_numeric):
        name = f"x{j}"
        schema.append(AttributeSchema(name, Kind.NUMERIC, Role.QUASI_IDENTIFYING))
        cols[name] = rng.integers(0, numeric_levels, n).astype(float) if numeric_levels else rng.normal(size=n)
    for j in range(n_categorical):
        name = f"c{j}"
        schema.append(AttributeSchema(name, Kind.CATEGORICAL, Role.QUASI_IDENTIFYING))
        cols[name] = np.array([f"v{v}" for v in rng.integers(0, 3, n)], dtype=object)
    schema.append(AttributeSchema("s", Kind.CATEGORICAL, Role.SENSITIVE))
    cols["s"] = np.array([f"s{v}" for v in rng.integers(0, n_sensitive, n)], dtype=object)
    schema.append(AttributeSchema("y", Kind.CATEGORICAL, Role.CLASS))
    cols["y"] = np.array(["a" if v else "b" for v in rng.integers(0, 2, n)], dtype=object)
    if ids is None:
        ids = rng.permutation(10 * n)[:n]
    return Dataset(tuple(schema), cols, ids)


@st.composite
def datasets(draw, max_n: int = 120, min_sensitive: int = 2, max_sensitive: int = 6):
    n = draw(st.integers(4, max_n))
    n_sens = draw(st.integers(min_sensitive, max_sensitive))
    seed = draw(st.integers(0, 2**32 - 1))
    n_num = draw(st.integers(0, 2))
    n_cat = draw(st.integers(0 if n_num else 1, 2))
    return random_dataset(np.random.default_rng(seed), n, n_sens, n_num, n_cat)


@pytest.fixture
def toy() -> Dataset:
    """Six patients; three diseases, two classes."""
    return Dataset(
        MIXED_SCHEMA,
        {
            "age": np.array([23.0, 27, 35, 59, 61, 65]),
            "city": np.array(["ny", "ny", "la", "la", "sf", "sf"], dtype=object),
            "disease": np.array(["flu", "flu", "cold", "flu", "hiv", "cold"], dtype=object),
            "y": np.array(["a", "a", "b", "b", "a", "b"], dtype=object),
        },
        np.arange(6),
    )


@pytest.fixture
def adult_csv() -> Path:
    if not ADULT_CSV.exists():
        pytest.skip("Adult data not prepared; run scripts/fetch_adult.py")
    return ADULT_CSV


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
