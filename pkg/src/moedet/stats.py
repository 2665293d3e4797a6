"""Descriptive statistics over repeated runs and paired inferential
comparison: exact Wilcoxon signed-rank with Holm step-down correction.

The Wilcoxon p-value is exact for up to 25 nonzero differences: the
distribution of W+ over all 2^n equiprobable sign assignments is built
by subset-sum counting over the (doubled, hence integer) midranks, which
enumerates exactly the same assignments without materializing them.
Larger n falls back to the normal approximation with continuity
correction and tie correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np


class StatsError(Exception):
    pass


class InsufficientSamplesError(StatsError):
    pass


class LengthMismatchError(StatsError):
    pass


class AllZeroDifferencesError(StatsError):
    pass


class SeedMismatchError(StatsError):
    pass


# ---------------------------------------------------------------------------
# descriptive statistics


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    mode: float
    range: float
    variance: float
    std_dev: float
    p25: float
    p50: float
    p75: float
    iqr: float
    skewness: float
    kurtosis: float

    def as_dict(self) -> dict[str, float]:
        return dict(vars(self))


def describe(samples: Sequence[float]) -> SummaryStats:
    """Summary of n >= 2 samples.

    Conventions: sample variance (n-1 denominator); percentiles by linear
    interpolation between closest ranks; mode is the smallest value among
    the most frequent (the minimum when all values are unique); skewness
    is adjusted Fisher-Pearson; kurtosis is unbiased excess (normal -> 0,
    needs n >= 4 to be finite).
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))  # fixes summation order: permutation-invariant bit-for-bit
    n = x.size
    if n < 2:
        raise InsufficientSamplesError(f"describe needs at least 2 samples, got {n}")
    mean = x.mean()
    centered = x - mean
    m2 = (centered**2).mean()
    m3 = (centered**3).mean()
    m4 = (centered**4).mean()
    variance = centered @ centered / (n - 1)

    values, counts = np.unique(x, return_counts=True)
    mode = float(values[counts == counts.max()].min())

    if m2 > 0:
        g1 = m3 / m2**1.5
        skew = g1 * math.sqrt(n * (n - 1)) / (n - 2) if n > 2 else float("nan")
        if n > 3:
            g2 = m4 / m2**2 - 3.0
            kurt = ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))
        else:
            kurt = float("nan")
    else:
        skew = 0.0
        kurt = 0.0

    p25, p50, p75 = (float(np.percentile(x, q)) for q in (25, 50, 75))
    return SummaryStats(
        mean=float(mean),
        median=float(np.median(x)),
        mode=mode,
        range=float(x.max() - x.min()),
        variance=float(variance),
        std_dev=float(math.sqrt(variance)),
        p25=p25,
        p50=p50,
        p75=p75,
        iqr=p75 - p25,
        skewness=float(skew),
        kurtosis=float(kurt),
    )


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank


def midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with tied values sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _exact_two_sided_p(doubled_ranks: Sequence[int], w_doubled: int) -> float:
    """P over all 2^n sign assignments, via subset-sum counts."""
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled_ranks:
        for s in range(total, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    denom = Fraction(2) ** len(doubled_ranks)
    p_le = Fraction(sum(counts[: w_doubled + 1]), 1) / denom
    p_ge = Fraction(sum(counts[w_doubled:]), 1) / denom
    return float(min(Fraction(1), 2 * min(p_le, p_ge)))


def _normal_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction: each group of t tied ranks removes (t^3 - t)/48
    _, counts = np.unique(ranks, return_counts=True)
    var -= float(((counts**3 - counts) / 48.0).sum())
    sd = math.sqrt(var)
    p_le = 0.5 * math.erfc(-((w_plus - mu + 0.5) / sd) / math.sqrt(2))
    p_ge = 0.5 * math.erfc(((w_plus - mu - 0.5) / sd) / math.sqrt(2))
    return min(1.0, 2.0 * min(p_le, p_ge))


EXACT_LIMIT = 25


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> dict:
    """Two-sided paired test on the signed ranks of x - y.

    Zero differences are dropped (n_effective counts the rest); tied
    absolute differences get midranks. Exact enumeration of the 2^n sign
    assignments up to n_effective = 25, normal approximation with
    continuity correction beyond.
    """
    if len(x) != len(y):
        raise LengthMismatchError(f"paired samples differ in length: {len(x)} vs {len(y)}")
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise AllZeroDifferencesError("every paired difference is zero")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_LIMIT:
        doubled = [int(round(2 * r)) for r in ranks]
        p = _exact_two_sided_p(doubled, int(round(2 * w_plus)))
    else:
        p = _normal_two_sided_p(ranks, w_plus)
    return {"W_plus": w_plus, "n_effective": int(n), "raw_p": p}


def exact_w_distribution(n: int) -> dict[int, float]:
    """P(W+ = w) for tie-free ranks 1..n (diagnostic/verification aid)."""
    counts = [0] * (n * (n + 1) // 2 + 1)
    counts[0] = 1
    for r in range(1, n + 1):
        for s in range(len(counts) - 1, r - 1, -1):
            if counts[s - r]:
                counts[s] += counts[s - r]
    total = 2**n
    return {w: c / total for w, c in enumerate(counts)}


# ---------------------------------------------------------------------------
# Holm step-down correction


def holm_adjust(raw_ps: Sequence[float]) -> list[float]:
    """Step-down adjusted p-values, returned in the input order."""
    for p in raw_ps:
        if not 0.0 <= p <= 1.0:
            raise StatsError(f"p-value out of range: {p}")
    m = len(raw_ps)
    order = sorted(range(m), key=lambda i: raw_ps[i])
    adjusted = [0.0] * m
    running = 0.0
    for pos, idx in enumerate(order):
        running = max(running, (m - pos) * raw_ps[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


# ---------------------------------------------------------------------------
# paired comparison report


@dataclass
class PairedComparison:
    name: str
    n: int
    raw_p: float
    holm_p: float
    reject: bool
    median_diff: float
    direction: str


@dataclass
class RunTable:
    """Metric values from repeated runs, keyed by seed for pairing."""

    name: str
    seeds: list[int]
    metrics: dict[str, list[float]]

    def column(self, metric: str) -> np.ndarray:
        return np.asarray(self.metrics[metric], dtype=np.float64)


def paired_report(
    runs_a: RunTable,
    runs_b_per_baseline: Sequence[RunTable],
    metric_names: Sequence[str],
    alpha: float = 0.05,
) -> dict[str, list[PairedComparison]]:
    """Per metric: Wilcoxon against each baseline on seed-matched runs,
    Holm correction across the baselines within the metric family, and the
    median paired difference (positive means runs_a ahead)."""
    report: dict[str, list[PairedComparison]] = {}
    for metric in metric_names:
        rows = []
        raws = []
        for b in runs_b_per_baseline:
            common = [s for s in runs_a.seeds if s in b.seeds]
            if not common:
                raise SeedMismatchError(f"no matched seeds between {runs_a.name} and {b.name}")
            a_vals = [runs_a.metrics[metric][runs_a.seeds.index(s)] for s in common]
            b_vals = [b.metrics[metric][b.seeds.index(s)] for s in common]
            name = f"{runs_a.name} vs {b.name}"
            try:
                test = wilcoxon_signed_rank(a_vals, b_vals)
            except AllZeroDifferencesError as err:
                raise AllZeroDifferencesError(f"{name} ({metric}): {err}") from err
            diff = float(np.median(np.asarray(a_vals) - np.asarray(b_vals)))
            rows.append((name, test, diff))
            raws.append(test["raw_p"])
        adjusted = holm_adjust(raws)
        comparisons = []
        for (name, test, diff), holm_p in zip(rows, adjusted):
            if diff > 0:
                direction = f"{runs_a.name} > {name.split(' vs ')[1]}"
            elif diff < 0:
                direction = f"{runs_a.name} < {name.split(' vs ')[1]}"
            else:
                direction = f"{runs_a.name} = {name.split(' vs ')[1]}"
            comparisons.append(
                PairedComparison(
                    name=name,
                    n=test["n_effective"],
                    raw_p=test["raw_p"],
                    holm_p=holm_p,
                    reject=holm_p < alpha,
                    median_diff=diff,
                    direction=direction,
                )
            )
        report[metric] = comparisons
    return report


# ---------------------------------------------------------------------------
# plain-text rendering


def format_summary_table(named: Mapping[str, SummaryStats]) -> str:
    """Aligned columns: one metric per column, one statistic per row."""
    rows = [
        "mean", "median", "mode", "range", "variance", "std_dev",
        "p25", "p50", "p75", "iqr", "skewness", "kurtosis",
    ]
    names = list(named)
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["".ljust(12) + "".join(n.rjust(width) for n in names)]
    for row in rows:
        cells = "".join(f"{getattr(named[n], row):>{width}.6f}" for n in names)
        lines.append(row.ljust(12) + cells)
    return "\n".join(lines)


def format_comparison_table(comparisons: Sequence[PairedComparison]) -> str:
    header = f"{'comparison':<32}{'raw p':>12}{'holm p':>12}{'reject':>8}{'median diff':>14}  direction"
    lines = [header]
    for c in comparisons:
        lines.append(
            f"{c.name:<32}{c.raw_p:>12.6f}{c.holm_p:>12.6f}"
            f"{('yes' if c.reject else 'no'):>8}{c.median_diff:>+14.6f}  {c.direction}"
        )
    return "\n".join(lines)
