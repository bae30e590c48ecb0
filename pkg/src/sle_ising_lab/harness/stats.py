"""Metrics, verdicts and the two-sample statistics used by the reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

SIGMAS = 3.0
POWER_FRACTION = 0.25


@dataclass
class Metric:
    """One compared quantity. Statistical metrics pass iff |estimate - reference|
    <= 3 stderr; deterministic ones iff it is <= tol; threshold metrics (p-values)
    iff estimate >= lower."""
    name: str
    estimate: float
    reference: float
    stderr: float = 0.0
    tol: float | None = None
    lower: float | None = None
    effect: float | None = None
    expect_fail: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def statistical(self) -> bool:
        return self.tol is None and self.lower is None

    @property
    def within(self) -> bool:
        if self.lower is not None:
            return math.isfinite(self.estimate) and self.estimate >= self.lower
        return within(self.estimate, self.reference, self.stderr, self.tol)

    @property
    def verdict(self) -> str:
        return "pass" if self.within != self.expect_fail else "fail"

    @property
    def underpowered(self) -> bool:
        if not self.statistical:
            return False
        eff = abs(self.reference) if self.effect is None else abs(self.effect)
        return underpowered(self.stderr, eff)

    def as_dict(self) -> dict:
        d = {"name": self.name, "estimate": _num(self.estimate), "reference": _num(self.reference),
             "stderr": _num(self.stderr), "verdict": self.verdict}
        if self.tol is not None:
            d["tol"] = self.tol
        if self.lower is not None:
            d["lower"] = self.lower
        if self.expect_fail:
            d["expect_fail"] = True
        if self.underpowered:
            d["underpowered"] = True
        d.update(self.extra)
        return d


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def within(estimate, reference, stderr, tol=None) -> bool:
    if not (math.isfinite(estimate) and math.isfinite(reference)):
        return False
    gap = abs(estimate - reference)
    if tol is not None:
        return gap <= tol
    return math.isfinite(stderr) and gap <= SIGMAS * stderr


def underpowered(stderr, effect) -> bool:
    """stderr above a quarter of the effect size it is meant to resolve."""
    return not math.isfinite(stderr) or stderr > POWER_FRACTION * effect


@dataclass
class Report:
    kind: str
    metrics: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def add(self, *metrics):
        self.metrics.extend(metrics)
        return self

    @property
    def passed(self) -> bool:
        return all(m.verdict == "pass" for m in self.metrics)

    @property
    def underpowered(self) -> list:
        return [m.name for m in self.metrics if m.underpowered]

    def as_dict(self) -> dict:
        return {"kind": self.kind, "verdict": "pass" if self.passed else "fail",
                "underpowered": self.underpowered, "info": self.info,
                "metrics": [m.as_dict() for m in self.metrics]}


# ------------------------------------------------------------- estimators

def mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()) if x.size else math.nan, math.nan
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def var_se(x):
    """Sample variance and its delta-method standard error from the fourth moment."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return math.nan, math.nan
    c = x - x.mean()
    v = float(c @ c / (n - 1))
    m4 = float(np.mean(c ** 4))
    return v, math.sqrt(max(m4 - v * v, 0.0) / n)


def proportion_se(hits, n):
    if n == 0:
        return math.nan, math.nan
    q = hits / n
    return q, math.sqrt(max(q * (1 - q), 1.0 / n) / n)


def welch(a, b):
    """Welch t statistic and two-sided p-value for equal means; identical
    samples give (0, 1)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == b.size and np.array_equal(a, b):
        return 0.0, 1.0
    res = sps.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def ks(a, b):
    """Two-sample Kolmogorov-Smirnov statistic and p-value."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == b.size and np.array_equal(np.sort(a), np.sort(b)):
        return 0.0, 1.0
    res = sps.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def diff_metric(name, a, b, which="mean") -> Metric:
    """Two-sample difference of means or variances with the combined stderr."""
    f = mean_se if which == "mean" else var_se
    ea, sa = f(a)
    eb, sb = f(b)
    return Metric(name, ea - eb, 0.0, math.hypot(sa, sb), effect=max(abs(ea), abs(eb)),
                  extra={"a": _num(ea), "b": _num(eb)})
