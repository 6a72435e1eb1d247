"""Series cleaning, stability statistics and the accuracy verdict."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import DataQualityError, InputDomainError

TUKEY_K = 1.5
MAX_TRIM = 0.10


@dataclass(frozen=True)
class StabilityStats:
    mu: float
    sigma: float
    cv_percent: float


@dataclass(frozen=True)
class ComparisonVerdict:
    estimated: float
    reference: float
    deviation_fraction: float
    passed: bool


def _fences(values: np.ndarray, k: float = TUKEY_K) -> tuple[float, float]:
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    # rounding noise must not turn a flat series into outliers
    slack = 1e-9 * max(abs(q1), abs(q3), 1e-12)
    return q1 - k * iqr - slack, q3 + k * iqr + slack


def clean_outliers(series, max_fraction: float = MAX_TRIM) -> np.ndarray:
    """Drop points outside the Tukey fences ``[Q1 - 1.5 IQR, Q3 + 1.5 IQR]``.

    Raises :class:`DataQualityError` rather than discard more than
    ``max_fraction`` of the series.
    """
    values = np.asarray(series, dtype=float)
    if values.ndim != 1 or values.size < 4:
        raise InputDomainError("cleaning needs a 1-d series of at least 4 points")
    lo, hi = _fences(values)
    keep = (values >= lo) & (values <= hi)
    removed = int(values.size - keep.sum())
    if removed > max_fraction * values.size:
        raise DataQualityError(
            f"outlier rule would drop {removed} of {values.size} points (cap {max_fraction:.0%})"
        )
    return values[keep]


class TukeyOutlierFilter(TransformerMixin, BaseEstimator):
    """Tukey-fence filter with the fences learned on ``fit``.

    ``transform`` drops rows of a single-column array whose value falls
    outside the fitted fences.
    """

    def __init__(self, k=TUKEY_K, max_fraction=MAX_TRIM):
        self.k = k
        self.max_fraction = max_fraction

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=4)
        if X.shape[1] != 1:
            raise InputDomainError("TukeyOutlierFilter works on one column")
        self.lower_, self.upper_ = _fences(X[:, 0], self.k)
        return self

    def transform(self, X):
        check_is_fitted(self, ["lower_", "upper_"])
        X = check_array(X)
        keep = (X[:, 0] >= self.lower_) & (X[:, 0] <= self.upper_)
        removed = X.shape[0] - int(keep.sum())
        if removed > self.max_fraction * X.shape[0]:
            raise DataQualityError(f"filter would drop {removed} of {X.shape[0]} rows")
        return X[keep]


def coefficient_of_variation(series) -> float:
    """Sample standard deviation over mean, in percent."""
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise InputDomainError("CV of an empty series is undefined")
    mu = float(values.mean())
    if mu <= 0:
        raise InputDomainError(f"CV is undefined for non-positive mean {mu}")
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1)) / mu * 100.0


def stability(series) -> StabilityStats:
    values = np.asarray(series, dtype=float)
    cv = coefficient_of_variation(values)
    sigma = float(values.std(ddof=1)) if values.size > 1 else 0.0
    mu = float(values.mean())
    return StabilityStats(mu, sigma, cv)


def compare(estimated: float, reference: float, margin: float = 0.05) -> ComparisonVerdict:
    if reference <= 0:
        raise InputDomainError(f"reference must be positive, got {reference}")
    dev = abs(estimated - reference) / reference
    return ComparisonVerdict(float(estimated), float(reference), dev, dev <= margin)
