"""Experiment harness: cross-validated comparisons, incremental convergence runs,
synthetic bounds checks, a Parzen variance check, and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats as sps

from . import __version__
from .anatomy import anatomize
from .data import (
    AttributeSchema, DataError, Dataset, Kind, Role, concat, fit_normalization, load_csv, load_schema,
    split_folds, split_partitions,
)
from .generalize import Hierarchy, default_hierarchies, generalize, load_hierarchies
from .knn import DistanceSpec, KnnModel, error_rate
from .theory import ConvergenceModel, ParzenEstimator, check_bounds, convergence_fit, convergence_predict, parzen_bayes_error

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONFIDENCE_LEVELS = (0.8, 0.9, 0.95, 0.98, 0.99)
VARIANTS = ("original", "anatomized", "anonymized")


def derive_seed(*parts: int) -> int:
    """Independent child seed for a (master seed, fold, parameter...) key."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    schema: str | None = None
    protocol: str = "cv"
    variants: tuple[str, ...] = ("original", "anatomized")
    k_values: tuple[int, ...] = (1,)
    l_values: tuple[int, ...] = (2,)
    anonymity_k_values: tuple[int, ...] = (2,)
    folds: int = 10
    partitions: int = 5
    seed: int = 0
    out: str | None = None
    hierarchies: str | None = None
    tie_policy: str = "lowest_row_id"
    jobs: int = 1

    def __post_init__(self) -> None:
        for name in ("variants", "k_values", "l_values", "anonymity_k_values"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.variants:
            raise ValueError("at least one classifier variant must be enabled")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")
        if self.protocol not in ("cv", "convergence", "bounds_sim"):
            raise ValueError(f"unknown protocol {self.protocol!r}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)


def load_dataset(config: ExperimentConfig) -> Dataset:
    if not config.data or not config.schema:
        raise DataError("config needs both a data path and a schema path")
    data = load_csv(config.data, load_schema(config.schema)).dataset
    data.check_binary_class()
    return data


# --- paired t-test -------------------------------------------------------------


@dataclass(frozen=True)
class TTest:
    t: float
    df: int
    mean_diff: float
    significant: bool
    confidence: float
    critical: float


def t_critical(confidence: float, df: int) -> float:
    """Two-sided Student-t critical value (incomplete-beta inversion via scipy)."""
    return float(sps.t.ppf(0.5 + confidence / 2.0, df))


def paired_t_test(a: Sequence[float], b: Sequence[float], confidence: float = 0.95) -> TTest:
    """Two-sided paired t-test of ``a - b``.

    Zero spread with zero mean gives ``t = 0``; zero spread with a nonzero mean
    gives ``t = +-inf``, significant at every level.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("paired samples must be equal-length vectors with >= 2 entries")
    diff = a - b
    n = len(diff)
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    crit = t_critical(confidence, n - 1)
    if sd == 0.0 or not math.isfinite(mean / (sd / math.sqrt(n))):
        if mean == 0.0:
            return TTest(0.0, n - 1, 0.0, False, confidence, crit)
        return TTest(math.copysign(math.inf, mean), n - 1, mean, True, confidence, crit)
    t = mean / (sd / math.sqrt(n))
    return TTest(t, n - 1, mean, abs(t) > crit, confidence, crit)


# --- cross validation ----------------------------------------------------------


@dataclass(frozen=True)
class FoldError:
    variant: str
    k: int
    param: int  # l for anatomized, anonymity k for anonymized, 0 for original
    fold: int
    error: float
    n_train: int
    suppressed: int = 0

    @property
    def label(self) -> str:
        return variant_label(self.variant, self.k, self.param)


def variant_label(variant: str, k: int, param: int) -> str:
    if variant == "original":
        return f"original[k={k}]"
    if variant == "anatomized":
        return f"anatomized[k={k},l={param}]"
    return f"anonymized[k={k},anon_k={param}]"


@dataclass(frozen=True)
class Summary:
    label: str
    mean: float
    sd: float
    n: int


@dataclass(frozen=True)
class Comparison:
    a: str
    b: str
    t: float
    mean_diff: float
    df: int
    significant: Mapping[str, bool]


@dataclass(frozen=True)
class ErrorReport:
    config: Mapping[str, Any]
    seed: int
    records: tuple[FoldError, ...]
    summaries: tuple[Summary, ...] = ()
    comparisons: tuple[Comparison, ...] = ()
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def fold_errors(self, label: str) -> np.ndarray:
        rows = sorted((r for r in self.records if r.label == label), key=lambda r: r.fold)
        return np.array([r.error for r in rows])

    def summary(self, label: str) -> Summary:
        return next(s for s in self.summaries if s.label == label)

    def comparison(self, a: str, b: str) -> Comparison:
        return next(c for c in self.comparisons if c.a == a and c.b == b)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "seed": self.seed,
            "config": dict(self.config),
            "records": [asdict(r) for r in self.records],
            "summaries": [asdict(s) for s in self.summaries],
            "comparisons": [
                {**asdict(c), "t": _json_float(c.t), "significant": dict(c.significant)} for c in self.comparisons
            ],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> ErrorReport:
        return cls(
            config=raw["config"],
            seed=raw["seed"],
            records=tuple(FoldError(**r) for r in raw["records"]),
            summaries=tuple(Summary(**s) for s in raw["summaries"]),
            comparisons=tuple(
                Comparison(c["a"], c["b"], _parse_float(c["t"]), c["mean_diff"], c["df"], c["significant"])
                for c in raw["comparisons"]
            ),
            version=raw["version"],
            schema_version=raw["schema_version"],
        )


def _json_float(x: float) -> float | str:
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")


def _parse_float(x: float | str) -> float:
    return float(x)


def summarize(config: Mapping[str, Any], seed: int, records: Iterable[FoldError]) -> ErrorReport:
    records = tuple(sorted(records, key=lambda r: (VARIANTS.index(r.variant), r.k, r.param, r.fold)))
    labels = list(dict.fromkeys(r.label for r in records))
    by_label = {lab: np.array([r.error for r in records if r.label == lab]) for lab in labels}
    summaries = tuple(
        Summary(lab, float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0, len(v)) for lab, v in by_label.items()
    )
    k_of = {r.label: r.k for r in records}
    comparisons = []
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            if k_of[a] != k_of[b] or len(by_label[a]) != len(by_label[b]) or len(by_label[a]) < 2:
                continue
            # a later label minus an earlier one: privacy variant minus original
            tests = {str(c): paired_t_test(by_label[b], by_label[a], c) for c in CONFIDENCE_LEVELS}
            first = tests[str(CONFIDENCE_LEVELS[0])]
            comparisons.append(
                Comparison(b, a, first.t, first.mean_diff, first.df, {c: t.significant for c, t in tests.items()})
            )
    return ErrorReport(dict(config), seed, records, summaries, tuple(comparisons))


def _hierarchies_for(config: ExperimentConfig, data: Dataset) -> Mapping[str, Hierarchy]:
    if config.hierarchies:
        return load_hierarchies(config.hierarchies)
    return default_hierarchies(data)


def _fold_job(args: tuple[ExperimentConfig, int, Dataset, Dataset, Mapping[str, Hierarchy] | None]) -> list[FoldError]:
    config, f, train, test, hierarchies = args
    before = test.fingerprint()
    spec = DistanceSpec(fit_normalization(train))
    out = []

    def evaluate(variant: str, source, param: int, suppressed: int) -> None:
        for k in config.k_values:
            model = KnnModel(source, k, spec, config.tie_policy, derive_seed(config.seed, f, k))
            out.append(FoldError(variant, k, param, f, error_rate(model, test), len(source), suppressed))

    if "original" in config.variants:
        evaluate("original", train, 0, 0)
    if "anatomized" in config.variants:
        for l in config.l_values:
            try:
                partition, _, _, joined = anatomize(train, l, derive_seed(config.seed, f, l))
            except DataError as exc:
                raise DataError(f"fold {f}: anatomization with l={l} failed: {exc}") from exc
            evaluate("anatomized", joined, l, len(partition.suppressed))
    if "anonymized" in config.variants:
        for ka in config.anonymity_k_values:
            anon = generalize(train, ka, hierarchies)
            evaluate("anonymized", anon, ka, len(anon.suppressed))
    if test.fingerprint() != before:
        raise RuntimeError(f"fold {f}: test data changed during the experiment")
    logger.info("fold %d done", f)
    return out


def _map(jobs: int, fn, items: list) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_cv(config: ExperimentConfig, data: Dataset | None = None) -> ErrorReport:
    """k-fold CV: privacy transforms touch the training folds only; test folds stay exact."""
    data = data if data is not None else load_dataset(config)
    hierarchies = _hierarchies_for(config, data) if "anonymized" in config.variants else None
    folds = split_folds(data, config.folds, config.seed)
    jobs = [(config, f, train, test, hierarchies) for f, (train, test) in enumerate(folds)]
    records = [r for chunk in _map(config.jobs, _fold_job, jobs) for r in chunk]
    return summarize(config.to_dict(), config.seed, records)


# --- convergence ---------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceCurve:
    variant: str
    l: int
    # (n_train, mean error over test partitions)
    measured: tuple[tuple[int, float], ...]
    per_partition: tuple[tuple[float, ...], ...]
    model: ConvergenceModel
    predicted: tuple[float, ...]

    @property
    def label(self) -> str:
        return "original" if self.variant == "original" else f"anatomized[l={self.l}]"

    @property
    def residuals(self) -> np.ndarray:
        return np.array([e for _, e in self.measured]) - np.array(self.predicted)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


@dataclass(frozen=True)
class ConvergenceResult:
    config: Mapping[str, Any]
    seed: int
    d: int
    curves: tuple[ConvergenceCurve, ...]
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def curve(self, label: str) -> ConvergenceCurve:
        return next(c for c in self.curves if c.label == label)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "seed": self.seed,
            "config": dict(self.config),
            "d": self.d,
            "curves": [
                {
                    "variant": c.variant, "l": c.l, "label": c.label,
                    "measured": [list(m) for m in c.measured],
                    "per_partition": [list(p) for p in c.per_partition],
                    "model": asdict(c.model),
                    "predicted": list(c.predicted),
                    "max_residual": c.max_residual,
                }
                for c in self.curves
            ],
        }


def _partition_job(args) -> dict[tuple[str, int], list[tuple[int, float]]]:
    config, p, test, rest = args
    before = test.fingerprint()
    steps = config.partitions - 1
    order = np.random.default_rng(derive_seed(config.seed, p)).permutation(len(rest))
    out: dict[tuple[str, int], list[tuple[int, float]]] = {}
    for j in range(1, steps + 1):
        size = int(round(j * len(rest) / steps))
        prefix = rest.take(order[:size])
        spec = DistanceSpec(fit_normalization(prefix))
        if "original" in config.variants:
            err = error_rate(KnnModel(prefix, 1, spec, config.tie_policy), test)
            out.setdefault(("original", 1), []).append((size, err))
        if "anatomized" in config.variants:
            for l in config.l_values:
                _, _, _, joined = anatomize(prefix, l, derive_seed(config.seed, p, j, l))
                err = error_rate(KnnModel(joined, 1, spec, config.tie_policy), test)
                out.setdefault(("anatomized", l), []).append((size, err))
    if test.fingerprint() != before:
        raise RuntimeError(f"partition {p}: test data changed during the experiment")
    return out


def run_convergence(config: ExperimentConfig, data: Dataset | None = None, fit_asymptote: bool = False) -> ConvergenceResult:
    """Each partition in turn is the test set; the rest is fed to 1-NN in growing cumulative prefixes."""
    data = data if data is not None else load_dataset(config)
    parts = split_partitions(data, config.partitions, config.seed)
    jobs = [
        (config, p, parts[p], concat([q for i, q in enumerate(parts) if i != p])) for p in range(len(parts))
    ]
    results = _map(config.jobs, _partition_job, jobs)
    d = len(data.quasi_identifiers)
    curves = []
    for key in results[0]:
        variant, l = key
        runs = [r[key] for r in results]
        n_steps = len(runs[0])
        sizes = [int(round(np.mean([run[j][0] for run in runs]))) for j in range(n_steps)]
        per = tuple(tuple(run[j][1] for run in runs) for j in range(n_steps))
        measured = tuple((sizes[j], float(np.mean(per[j]))) for j in range(n_steps))
        model = convergence_fit(measured, max(d, 1), l, fit_asymptote)
        predicted = tuple(float(x) for x in convergence_predict(model, [s for s, _ in measured]))
        curves.append(ConvergenceCurve(variant, l, measured, per, model, predicted))
    return ConvergenceResult(config.to_dict(), config.seed, d, tuple(curves))


# --- synthetic bounds ----------------------------------------------------------

SIM_SCHEMA = (
    AttributeSchema("x", Kind.NUMERIC, Role.QUASI_IDENTIFYING),
    AttributeSchema("s", Kind.CATEGORICAL, Role.SENSITIVE),
    AttributeSchema("y", Kind.CATEGORICAL, Role.CLASS),
)


def gaussian_pair(n: int, separation: float, rng: np.random.Generator, sensitive_values: int = 8, id_offset: int = 0) -> Dataset:
    """Equal-prior classes with unit-variance normal ``x`` at -+separation/2 and an
    independent uniform sensitive attribute."""
    y = rng.integers(0, 2, size=n)
    x = rng.normal(np.where(y == 0, -separation / 2.0, separation / 2.0), 1.0)
    s = rng.integers(0, sensitive_values, size=n)
    return Dataset(
        SIM_SCHEMA,
        {"x": x, "s": np.array([f"s{v}" for v in s], dtype=object), "y": np.where(y == 0, "1", "2").astype(object)},
        np.arange(id_offset, id_offset + n),
    )


def gaussian_bayes_error(separation: float) -> float:
    return float(sps.norm.cdf(-separation / 2.0))


@dataclass(frozen=True)
class BoundsEntry:
    l: int
    k: int
    error: float
    within: bool


@dataclass(frozen=True)
class BoundsReport:
    n: int
    n_test: int
    separation: float
    seed: int
    r_star: float
    lower: float
    upper: float
    tolerance: float
    entries: tuple[BoundsEntry, ...]
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    @property
    def asymptotic_1nn(self) -> float:
        """Two-class large-sample 1-NN error when the posterior is constant: 2R*(1-R*)."""
        return 2 * self.r_star * (1 - self.r_star)

    def error(self, l: int, k: int) -> float:
        return next(e.error for e in self.entries if e.l == l and e.k == k)

    @property
    def ok(self) -> bool:
        return all(e.within for e in self.entries)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["asymptotic_1nn"] = self.asymptotic_1nn
        out["ok"] = self.ok
        return out


def run_bounds_sim(
    n: int,
    l: int | Sequence[int],
    k: int | Sequence[int],
    separation: float,
    seed: int,
    n_test: int = 10_000,
    tolerance: float = 0.01,
    sensitive_values: int = 8,
) -> BoundsReport:
    """Measure anatomized k-NN error on a Gaussian pair with known Bayes error.

    One training and one test sample are drawn per call and shared by every
    (l, k); ``l = 1`` skips anatomization.
    """
    if n < 1000:
        raise ValueError("bounds simulation needs n >= 1000")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    l_values = [l] if isinstance(l, int) else list(l)
    k_values = [k] if isinstance(k, int) else list(k)
    if any(kk < 1 or kk % 2 == 0 for kk in k_values):
        raise ValueError("k must be odd")
    rng = np.random.default_rng(seed)
    train = gaussian_pair(n, separation, rng, sensitive_values)
    test = gaussian_pair(n_test, separation, rng, sensitive_values, id_offset=n)
    r_star = gaussian_bayes_error(separation)
    spec = DistanceSpec(fit_normalization(train))
    entries = []
    for ll in l_values:
        source = train if ll == 1 else anatomize(train, ll, derive_seed(seed, ll))[3]
        for kk in k_values:
            err = error_rate(KnnModel(source, kk, spec), test)
            entries.append(BoundsEntry(ll, kk, err, check_bounds(r_star, err, kk, tolerance)))
    return BoundsReport(n, n_test, separation, seed, r_star, r_star, 2 * r_star, tolerance, tuple(entries))


# --- Parzen variance check -------------------------------------------------------

PARZEN_SCHEMA = (
    AttributeSchema("x1", Kind.NUMERIC, Role.QUASI_IDENTIFYING),
    AttributeSchema("x2", Kind.NUMERIC, Role.QUASI_IDENTIFYING),
    AttributeSchema("s", Kind.NUMERIC, Role.SENSITIVE),
    AttributeSchema("y", Kind.CATEGORICAL, Role.CLASS),
)


def parzen_sample(n: int, rng: np.random.Generator, shift: float = 1.0, sensitive_values: int = 6) -> Dataset:
    """Two equal-prior Gaussian classes in two identifying dimensions plus an
    independent integer-valued sensitive attribute."""
    y = rng.integers(0, 2, size=n)
    centre = np.where(y == 0, -shift / 2.0, shift / 2.0)
    x = rng.normal(centre[:, None], 1.0, size=(n, 2))
    s = rng.integers(0, sensitive_values, size=n).astype(np.float64)
    return Dataset(
        PARZEN_SCHEMA,
        {"x1": x[:, 0], "x2": x[:, 1], "s": s, "y": np.where(y == 0, "1", "2").astype(object)},
        np.arange(n),
    )


@dataclass(frozen=True)
class VarianceTrial:
    var_original: float
    var_anatomized: float

    @property
    def anatomized_not_larger(self) -> bool:
        return self.var_anatomized <= self.var_original


@dataclass(frozen=True)
class VarianceCheck:
    trials: tuple[VarianceTrial, ...]
    l: int
    n: int
    resamples: int
    seed: int

    @property
    def fraction(self) -> float:
        return float(np.mean([t.anatomized_not_larger for t in self.trials]))


def _variance_trial(args: tuple[int, int, int, int, int, int, ParzenEstimator]) -> VarianceTrial:
    seed, t, resamples, n, n_eval, l, est = args
    rng = np.random.default_rng(derive_seed(seed, t))
    base = parzen_sample(n, rng)
    evaluation = parzen_sample(n_eval, rng)
    stats = fit_normalization(base)
    orig, anat = [], []
    for b in range(resamples):
        pick = rng.integers(0, n, size=n)
        boot = Dataset(base.schema, {k: v[pick] for k, v in base.columns.items()}, np.arange(n))
        orig.append(parzen_bayes_error(boot, evaluation, est, stats))
        joined = anatomize(boot, l, derive_seed(seed, t, b))[3].data
        anat.append(parzen_bayes_error(joined, evaluation, est, stats))
    return VarianceTrial(float(np.var(orig, ddof=1)), float(np.var(anat, ddof=1)))


def run_parzen_variance(
    trials: int = 20,
    resamples: int = 30,
    n: int = 2000,
    n_eval: int = 2000,
    l: int = 2,
    seed: int = 0,
    est: ParzenEstimator | None = None,
    jobs: int = 1,
) -> VarianceCheck:
    """Bootstrap variance of the Parzen Bayes-error estimate on original vs anatomized resamples."""
    est = est or ParzenEstimator()
    items = [(seed, t, resamples, n, n_eval, l, est) for t in range(trials)]
    return VarianceCheck(tuple(_map(jobs, _variance_trial, items)), l, n, resamples, seed)


# --- report files ----------------------------------------------------------------

ERRORS_HEADER = ("variant", "parameter", "x", "y")
CURVES_HEADER = ("variant", "parameter", "x", "y", "series")


def _dump(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parameter(r: FoldError) -> str:
    if r.variant == "original":
        return f"k={r.k}"
    key = "l" if r.variant == "anatomized" else "anon_k"
    return f"k={r.k},{key}={r.param}"


def emit_report(report: ErrorReport | ConvergenceResult | BoundsReport, out_dir: str | Path, fmt: str | None = None) -> list[Path]:
    """Write report files; ``fmt`` is ``json``, ``csv`` or None for both."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt not in (None, "json", "csv"):
        raise ValueError(f"unknown format {fmt!r}")
    written = []
    if isinstance(report, ErrorReport):
        if fmt in (None, "json"):
            _dump(report.to_dict(), out / "report.json")
            written.append(out / "report.json")
        if fmt in (None, "csv"):
            path = out / "errors.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ERRORS_HEADER)
                for r in report.records:
                    w.writerow([r.variant, _parameter(r), r.fold, repr(r.error)])
                for s in report.summaries:
                    r = next(x for x in report.records if x.label == s.label)
                    w.writerow([r.variant, _parameter(r), "mean", repr(s.mean)])
                    w.writerow([r.variant, _parameter(r), "sd", repr(s.sd)])
            written.append(path)
    elif isinstance(report, ConvergenceResult):
        if fmt in (None, "json"):
            _dump(report.to_dict(), out / "report.json")
            written.append(out / "report.json")
        if fmt in (None, "csv"):
            path = out / "curves.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CURVES_HEADER)
                for c in report.curves:
                    for (n, e), p in zip(c.measured, c.predicted):
                        w.writerow([c.variant, f"l={c.l}", n, repr(e), "measured"])
                        w.writerow([c.variant, f"l={c.l}", n, repr(p), "predicted"])
            written.append(path)
    elif isinstance(report, BoundsReport):
        _dump(report.to_dict(), out / "bounds.json")
        written.append(out / "bounds.json")
    else:
        raise TypeError(f"cannot emit {type(report).__name__}")
    return written


def load_report(path: str | Path) -> ErrorReport:
    return ErrorReport.from_dict(json.loads(Path(path).read_text()))


def read_errors_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
