"""Asymptotic k-NN error, Bayes error, error bounds, the 1-NN convergence model,
and a Parzen-window Bayes error estimate."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .data import Dataset, DataError, Kind, NormalizationStats, fit_normalization

# exact integer binomials up to this k, log-gamma above
_EXACT_BINOM_LIMIT = 30


@dataclass(frozen=True)
class PosteriorPoint:
    q1: float
    q2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.q1 <= 1.0 and 0.0 <= self.q2 <= 1.0):
            raise ValueError(f"posteriors must lie in [0, 1]: {self.q1}, {self.q2}")
        if abs(self.q1 + self.q2 - 1.0) > 1e-12:
            raise ValueError(f"posteriors must sum to 1: {self.q1} + {self.q2}")

    @classmethod
    def of(cls, q1: float) -> PosteriorPoint:
        return cls(q1, 1.0 - q1)


def _log_binom(n: int, r: int) -> float:
    return gammaln(n + 1) - gammaln(r + 1) - gammaln(n - r + 1)


def _binom_power(n: int, r: int, p: float, power: int) -> float:
    """C(n, r) * p**power, via log-gamma once the binomial gets large."""
    if p == 0.0:
        return 0.0
    if n <= _EXACT_BINOM_LIMIT:
        return math.comb(n, r) * p**power
    return math.exp(_log_binom(n, r) + power * math.log(p))


def _series_term(i: int, p: float) -> float:
    return _binom_power(2 * i - 2, i - 1, p, i) / i


def knn_asymptotic_error(q: PosteriorPoint, k: int) -> float:
    """Large-sample k-NN error at a point with posteriors ``q`` (odd ``k``)."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be an odd positive integer, got {k}")
    p = q.q1 * q.q2
    half = (k + 1) // 2
    total = sum(_series_term(i, p) for i in range(1, half + 1))
    return total + 0.5 * _binom_power(k + 1, half, p, half)


def bayes_error_point(q: PosteriorPoint, series_terms: int) -> tuple[float, float]:
    """``(min(q1, q2), truncated series)``; the series converges to the minimum from below."""
    if series_terms < 1:
        raise ValueError("series_terms must be >= 1")
    p = q.q1 * q.q2
    series = sum(_series_term(i, p) for i in range(1, series_terms + 1))
    return min(q.q1, q.q2), series


def check_bounds(r_star: float, r_measured: float, k: int = 1, tolerance: float = 0.0) -> bool:
    """Is ``r_star - tol <= r_measured <= 2 * r_star + tol``?"""
    if not 0.0 <= r_star <= 0.5:
        raise ValueError(f"Bayes error must lie in [0, 0.5], got {r_star}")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"k must be an odd positive integer, got {k}")
    return r_star - tolerance <= r_measured <= 2.0 * r_star + tolerance


def check_bound_chain(r_star: float, measured_by_k: dict[int, float], tolerance: float = 0.0) -> bool:
    """Bounds for every k plus non-increasing error over increasing odd k."""
    ks = sorted(measured_by_k)
    if not all(check_bounds(r_star, measured_by_k[k], k, tolerance) for k in ks):
        return False
    return all(measured_by_k[b] <= measured_by_k[a] + tolerance for a, b in zip(ks, ks[1:]))


def beta_constant(d: int) -> float:
    """Gamma-function constant of the finite-sample 1-NN bias term (``d + 1`` dimensions)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    e = 2.0 / (d + 1)
    return math.exp(e * math.lgamma((d + 3) / 2.0) + math.lgamma(e + 1.0)) / (math.pi * (d + 1))


@dataclass(frozen=True)
class ConvergenceModel:
    asymptote: float
    constant: float
    d: int
    l: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.asymptote <= 0.5:
            raise ValueError(f"asymptote must lie in [0, 0.5], got {self.asymptote}")
        if not math.isfinite(self.constant):
            raise ValueError("constant must be finite")
        if self.d < 1 or self.l < 1:
            raise ValueError("d and l must be >= 1")

    @property
    def exponent(self) -> float:
        return 2.0 / (self.d + 1)

    @property
    def beta(self) -> float:
        return beta_constant(self.d)


def convergence_rate(n_train: int | np.ndarray, d: int, l: int = 1) -> np.ndarray | float:
    return (np.asarray(n_train, dtype=np.float64) * l) ** (-2.0 / (d + 1))


def convergence_predict(model: ConvergenceModel, n_train: int | Sequence[int] | np.ndarray) -> float | np.ndarray:
    n = np.asarray(n_train, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("n_train must be >= 1")
    out = model.asymptote + model.constant * convergence_rate(n, model.d, model.l)
    return float(out) if out.ndim == 0 else out


def convergence_fit(
    measured: Sequence[tuple[int, float]], d: int, l: int = 1, fit_asymptote: bool = False
) -> ConvergenceModel:
    """Fit ``error ~ asymptote + c * (n l)^(-2/(d+1))``.

    By default the asymptote is the smallest measured error and only ``c`` is
    fitted by least squares. ``fit_asymptote=True`` fits both by ordinary
    least squares instead. ``c`` is clamped at 0.
    """
    if len(measured) < 2:
        raise ValueError("need at least 2 measured points")
    n = np.array([m[0] for m in measured], dtype=np.float64)
    err = np.array([m[1] for m in measured], dtype=np.float64)
    x = convergence_rate(n, d, l)
    if fit_asymptote:
        design = np.stack([np.ones_like(x), x], axis=1)
        (a, c), *_ = np.linalg.lstsq(design, err, rcond=None)
        a = float(np.clip(a, 0.0, 0.5))
    else:
        a = float(err.min())
        if a > 0.5:
            raise ValueError(f"smallest measured error {a:.4f} is above 0.5: the classifier does no better than chance")
        c = float(np.dot(x, err - a) / np.dot(x, x))
    return ConvergenceModel(a, max(float(c), 0.0), d, l)


# --- Parzen-window Bayes error -------------------------------------------------


class Kernel(str, enum.Enum):
    GAUSSIAN_PRODUCT = "gaussian_product"
    UNIFORM_HYPERCUBE = "uniform_hypercube"


@dataclass(frozen=True)
class ParzenEstimator:
    kernel: Kernel = Kernel.GAUSSIAN_PRODUCT
    # None: width rule r = mean feature std * N**(-1/(D+4)), D = feature dimension
    width: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", Kernel(self.kernel))
        if self.width is not None and not self.width > 0:
            raise ValueError(f"kernel width must be > 0, got {self.width}")


def _features(data: Dataset, stats: NormalizationStats) -> np.ndarray:
    """Min-max scaled numerics; categoricals one-hot scaled by 1/sqrt(2)."""
    cols = []
    for attr in data.features:
        col = data.columns[attr.name]
        if attr.kind is Kind.NUMERIC:
            cols.append(stats.scale(attr.name, col)[:, None])
        else:
            cats = stats.categories[attr.name]
            cols.append((col[:, None] == np.array(cats, dtype=object)[None, :]).astype(np.float64) / math.sqrt(2.0))
    return np.hstack(cols)


def width_rule(train_x: np.ndarray) -> float:
    n, dim = train_x.shape
    scale = float(np.mean(np.std(train_x, axis=0)))
    if scale <= 0:
        scale = 1.0
    return scale * n ** (-1.0 / (dim + 4))


def _log_density(train_x: np.ndarray, eval_x: np.ndarray, r: float, kernel: Kernel, chunk: int = 512) -> np.ndarray:
    n, dim = train_x.shape
    out = np.empty(len(eval_x))
    for s in range(0, len(eval_x), chunk):
        diff = eval_x[s : s + chunk, None, :] - train_x[None, :, :]
        if kernel is Kernel.GAUSSIAN_PRODUCT:
            log_k = -(diff**2).sum(axis=2) / (2 * r * r) - dim * math.log(math.sqrt(2 * math.pi) * r)
            out[s : s + chunk] = logsumexp(log_k, axis=1) - math.log(n)
        else:
            inside = np.all(np.abs(diff) <= r / 2.0, axis=2).sum(axis=1)
            with np.errstate(divide="ignore"):
                out[s : s + chunk] = np.log(inside / (n * r**dim))
    return out


def parzen_bayes_error(
    train: Dataset,
    eval_data: Dataset,
    est: ParzenEstimator | None = None,
    stats: NormalizationStats | None = None,
) -> float:
    """Plug-in Bayes error estimate: Parzen class densities, threshold on the log-likelihood ratio.

    An eval row is assigned class 1 when ``-ln(p1/p2) < ln(P1/P2)``; when both
    densities vanish the more frequent training class wins.
    """
    est = est or ParzenEstimator()
    classes = train.class_labels()
    if len(classes) != 2:
        raise DataError(f"need both classes in the training data, got {list(classes)}")
    if len(eval_data) == 0:
        raise DataError("eval set is empty")
    stats = stats or fit_normalization(train)
    tx = _features(train, stats)
    ex = _features(eval_data, stats)
    labels = train.labels
    r = est.width if est.width is not None else width_rule(tx)
    logs, priors = [], []
    for c in classes:
        mask = labels == c
        logs.append(_log_density(tx[mask], ex, r, est.kernel))
        priors.append(mask.mean())
    t = math.log(priors[0] / priors[1])
    with np.errstate(invalid="ignore"):
        h = -(logs[0] - logs[1])
    pick_first = h < t
    both_zero = np.isneginf(logs[0]) & np.isneginf(logs[1])
    majority_first = priors[0] >= priors[1]
    pick_first = np.where(both_zero, majority_first, pick_first)
    predicted = np.where(pick_first, classes[0], classes[1])
    return float(np.mean(predicted != eval_data.labels))
