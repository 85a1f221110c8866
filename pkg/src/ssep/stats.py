"""Mergeable moment summaries and the normal-limit checks built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps


@dataclass
class McSummary:
    """Count, mean and central-moment sums M2..M4 of a sample.

    Updates and merges use the pairwise formulas of Chan et al. / Pebay, so per-worker
    summaries combine into the summary of the pooled sample.
    """

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    def add(self, x: float) -> "McSummary":
        n1 = self.n
        n = n1 + 1
        delta = x - self.mean
        dn = delta / n
        dn2 = dn * dn
        term = delta * dn * n1
        self.mean += dn
        self.m4 += term * dn2 * (n * n - 3 * n + 3) + 6.0 * dn2 * self.m2 - 4.0 * dn * self.m3
        self.m3 += term * dn * (n - 2) - 3.0 * dn * self.m2
        self.m2 += term
        self.n = n
        return self

    @classmethod
    def of(cls, values) -> "McSummary":
        """Summary of a whole array, by two passes."""
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size == 0:
            return cls()
        mean = float(x.mean())
        d = x - mean
        d2 = d * d
        return cls(n=int(x.size), mean=mean, m2=float(d2.sum()),
                   m3=float((d2 * d).sum()), m4=float((d2 * d2).sum()))

    def merge(self, other: "McSummary") -> "McSummary":
        if other.n == 0:
            return McSummary(self.n, self.mean, self.m2, self.m3, self.m4)
        if self.n == 0:
            return McSummary(other.n, other.mean, other.m2, other.m3, other.m4)
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        d2 = delta * delta
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + d2 * na * nb / n
        m3 = (self.m3 + other.m3 + d2 * delta * na * nb * (na - nb) / (n * n)
              + 3.0 * delta * (na * other.m2 - nb * self.m2) / n)
        m4 = (self.m4 + other.m4
              + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n ** 3)
              + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
              + 4.0 * delta * (na * other.m3 - nb * self.m3) / n)
        return McSummary(n, mean, m2, m3, m4)

    __add__ = merge

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std_error(self) -> float:
        """Standard error of the mean."""
        return math.sqrt(self.variance / self.n) if self.n > 1 else 0.0


def accumulate(summary: McSummary, x: float) -> McSummary:
    return summary.add(x)


def variance_with_se(summary: McSummary) -> tuple[float, float]:
    """Sample variance and the fourth-moment standard error of it."""
    n = summary.n
    if n < 2:
        raise ValueError("need at least two samples")
    var = summary.m2 / (n - 1)
    spread = summary.m4 / n - (summary.m2 / n) ** 2
    return var, math.sqrt(max(spread, 0.0) / n)


def moment_tests(summary: McSummary) -> tuple[float, float]:
    """Sample skewness and excess kurtosis."""
    n = summary.n
    if n < 4:
        raise ValueError("need at least four samples")
    if summary.m2 <= 0.0:
        raise ValueError("zero variance")
    skew = math.sqrt(n) * summary.m3 / summary.m2 ** 1.5
    kurt = n * summary.m4 / summary.m2 ** 2 - 3.0
    return skew, kurt


@dataclass(frozen=True)
class KsResult:
    d_stat: float
    n: int


def jittered_ks(samples, sigma2: float, rng: np.random.Generator) -> KsResult:
    """KS distance between (samples + U(-1/2, 1/2)) / sqrt(sigma2) and the standard normal.

    The uniform jitter spreads each integer atom over its unit cell so that a lattice
    variable can be compared with a continuous law.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    z = (x + rng.uniform(-0.5, 0.5, x.size)) / math.sqrt(sigma2)
    return KsResult(d_stat=float(_sps.kstest(z, "norm").statistic), n=int(x.size))


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    var: float
    mean: float
    se: float

    @property
    def margin(self) -> float:
        """How far the variance sits below the allowed ceiling mean + 3 se."""
        return self.mean + 3.0 * self.se - self.var


def k_variance_bound(k_summary: McSummary) -> BoundCheck:
    """Check sample Var K <= sample E K within three combined standard errors."""
    var, se_var = variance_with_se(k_summary)
    mean = k_summary.mean
    se = math.hypot(se_var, k_summary.std_error)
    return BoundCheck(passed=var <= mean + 3.0 * se, var=var, mean=mean, se=se)
