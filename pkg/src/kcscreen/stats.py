"""Two-group statistics for inter-disc distances.

Welch's t with Welch-Satterthwaite degrees of freedom, a two-sided p-value,
the ``t / sqrt(n1 + n2)`` effect size, Cohen's d with pooled SD and Tukey
box-plot summaries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special


class InsufficientSamples(ValueError):
    pass


class ZeroPooledVariance(ValueError):
    pass


@dataclass(frozen=True)
class GroupSample:
    values: np.ndarray
    n: int
    m: float
    sigma: float

    @classmethod
    def of(cls, values) -> "GroupSample":
        v = np.asarray(values, dtype=np.float64).ravel()
        v = v[~np.isnan(v)]
        if v.size < 2:
            raise InsufficientSamples("a group needs at least two values")
        return cls(v, int(v.size), float(v.mean()), float(v.std(ddof=1)))


def _group(g) -> GroupSample:
    return g if isinstance(g, GroupSample) else GroupSample.of(g)


def welch_t(g1, g2) -> tuple[float, float]:
    """Welch t-score and Welch-Satterthwaite degrees of freedom."""
    a, b = _group(g1), _group(g2)
    va, vb = a.sigma**2 / a.n, b.sigma**2 / b.n
    se2 = va + vb
    diff = a.m - b.m
    if se2 == 0:
        if diff == 0:
            return 0.0, float(a.n + b.n - 2)
        return math.copysign(math.inf, diff), float(a.n + b.n - 2)
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (a.n - 1) + vb**2 / (b.n - 1))
    return float(t), float(df)


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` for ``t >= 0`` via the regularized incomplete beta."""
    x = df / (df + t * t)
    return 0.5 * float(special.betainc(df / 2.0, 0.5, x))


def p_value(t: float, df: float) -> float:
    """Two-sided p-value of a t statistic."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return min(1.0, 2.0 * t_sf(abs(t), df))


def format_p(p: float, floor: float = 1e-6) -> str:
    """Display form of a p-value; anything below ``floor`` prints as a bound."""
    if p < floor:
        return f"<{floor:.0e}"
    return f"{p:.4g}"


def effect_size_from_t(t: float, n1: int, n2: int) -> float:
    """Effect size ``t / sqrt(n1 + n2)``, used in the reports."""
    if n1 + n2 <= 0:
        raise ValueError("n1 + n2 must be positive")
    return t / math.sqrt(n1 + n2)


def effect_size_from_t_conventional(t: float, n1: int, n2: int) -> float:
    """The usual independent-groups conversion ``t * sqrt(1/n1 + 1/n2)``; for comparison only."""
    return t * math.sqrt(1.0 / n1 + 1.0 / n2)


def pooled_sd(g1, g2) -> float:
    a, b = _group(g1), _group(g2)
    return math.sqrt(((a.n - 1) * a.sigma**2 + (b.n - 1) * b.sigma**2) / (a.n + b.n - 2))


def cohens_d(g1, g2) -> float:
    a, b = _group(g1), _group(g2)
    sd = pooled_sd(a, b)
    if sd == 0:
        raise ZeroPooledVariance("pooled standard deviation is zero")
    return (a.m - b.m) / sd


@dataclass(frozen=True)
class TestReport:
    t_score: float
    df: float
    p_value: float
    effect_size_t: float
    cohens_d: float
    n1: int
    n2: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_display"] = format_p(self.p_value)
        return d


TestReport.__test__ = False  # not a pytest class


def compare_groups(g1, g2) -> TestReport:
    a, b = _group(g1), _group(g2)
    t, df = welch_t(a, b)
    try:
        d = cohens_d(a, b)
    except ZeroPooledVariance:
        d = 0.0 if a.m == b.m else math.copysign(math.inf, a.m - b.m)
    return TestReport(t, df, p_value(t, df), effect_size_from_t(t, a.n, b.n), d, a.n, b.n)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def box_stats(values) -> BoxStats:
    """Tukey box: linear-interpolation quartiles, whiskers at the most
    extreme data within 1.5 IQR of the box."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    v = v[~np.isnan(v)]
    if v.size == 0:
        raise ValueError("box_stats needs at least one value")
    q1, med, q3 = (float(x) for x in np.percentile(v, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]]
    return BoxStats(med, q1, q3, iqr, float(inside.min()), float(inside.max()), outliers)
