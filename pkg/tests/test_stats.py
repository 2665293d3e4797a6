import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from moedet import stats as S


# ---------------------------------------------------------------------------
# describe


def test_describe_symmetric_sequence():
    out = S.describe([1, 2, 3, 4, 5])
    assert out.mean == 3.0
    assert out.median == 3.0
    assert out.range == 4.0
    assert out.variance == 2.5
    assert out.p25 == 2.0 and out.p75 == 4.0 and out.iqr == 2.0
    assert out.skewness == 0.0
    assert out.std_dev == pytest.approx(math.sqrt(2.5), abs=1e-15)


def test_describe_mode_most_frequent():
    assert S.describe([1, 2, 2, 3]).mode == 2.0


def test_describe_mode_all_unique_is_minimum():
    assert S.describe([5.0, 1.5, 3.25, 7.0]).mode == 1.5


def test_describe_rejects_single_sample():
    with pytest.raises(S.InsufficientSamplesError):
        S.describe([1.0])


def _two_pass_oracle(xs):
    """Independent recomputation of every summary field."""
    n = len(xs)
    srt = sorted(xs)
    mean = sum(xs) / n
    var = sum((v - mean) ** 2 for v in xs) / (n - 1)

    def pct(q):
        pos = q / 100 * (n - 1)
        lo = int(math.floor(pos))
        hi = min(lo + 1, n - 1)
        frac = pos - lo
        return srt[lo] * (1 - frac) + srt[hi] * frac

    freq = {}
    for v in xs:
        freq[v] = freq.get(v, 0) + 1
    top = max(freq.values())
    mode = min(v for v, c in freq.items() if c == top)
    m2 = sum((v - mean) ** 2 for v in xs) / n
    m3 = sum((v - mean) ** 3 for v in xs) / n
    m4 = sum((v - mean) ** 4 for v in xs) / n
    g1 = m3 / m2**1.5
    skew = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    g2 = m4 / m2**2 - 3
    kurt = ((n + 1) * g2 + 6) * (n - 1) / ((n - 2) * (n - 3))
    return {
        "mean": mean, "median": pct(50), "mode": mode, "range": srt[-1] - srt[0],
        "variance": var, "std_dev": math.sqrt(var), "p25": pct(25), "p50": pct(50),
        "p75": pct(75), "iqr": pct(75) - pct(25), "skewness": skew, "kurtosis": kurt,
    }


def test_describe_matches_independent_oracle():
    rng = np.random.default_rng(0)
    for trial in range(5):
        xs = (0.9 + 0.1 * rng.random(50)).tolist()
        got = S.describe(xs).as_dict()
        want = _two_pass_oracle(xs)
        for key, val in want.items():
            assert got[key] == pytest.approx(val, abs=1e-10), key


def test_describe_skew_kurt_match_scipy():
    rng = np.random.default_rng(1)
    xs = rng.normal(size=40)
    out = S.describe(xs)
    assert out.skewness == pytest.approx(scipy.stats.skew(xs, bias=False), abs=1e-12)
    assert out.kurtosis == pytest.approx(scipy.stats.kurtosis(xs, bias=False), abs=1e-12)


def test_describe_permutation_invariant():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=30)
    a = S.describe(xs)
    b = S.describe(xs[rng.permutation(30)])
    assert a == b


# ---------------------------------------------------------------------------
# Wilcoxon


def test_wilcoxon_n10_all_positive():
    x = [float(i + 1) for i in range(10)]
    y = [0.0] * 10
    out = S.wilcoxon_signed_rank(x, y)
    assert out["n_effective"] == 10
    assert out["W_plus"] == 55.0
    assert out["raw_p"] == 2 / 2**10
    assert round(out["raw_p"], 6) == 0.001953


def test_wilcoxon_n8_all_positive():
    x = [0.1 * (i + 1) for i in range(8)]
    y = [0.0] * 8
    out = S.wilcoxon_signed_rank(x, y)
    assert out["raw_p"] == 2 / 2**8
    assert round(out["raw_p"], 6) == 0.007812


def test_wilcoxon_single_nonzero_difference():
    x = [1.0, 2.0, 3.0]
    y = [1.0, 2.0, 2.5]
    out = S.wilcoxon_signed_rank(x, y)
    assert out["n_effective"] == 1
    assert out["raw_p"] == 1.0


def test_wilcoxon_rejects_length_mismatch():
    with pytest.raises(S.LengthMismatchError):
        S.wilcoxon_signed_rank([1.0, 2.0], [1.0])


def test_wilcoxon_rejects_all_zero():
    with pytest.raises(S.AllZeroDifferencesError):
        S.wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])


def test_wilcoxon_matches_scipy_exact():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(5, 15))
        x = rng.normal(size=n)
        y = rng.normal(size=n)
        ours = S.wilcoxon_signed_rank(list(x), list(y))
        ref = scipy.stats.wilcoxon(x, y, zero_method="wilcox", mode="exact")
        assert ours["raw_p"] == pytest.approx(ref.pvalue, abs=1e-12)


def test_wilcoxon_symmetry_under_swap():
    rng = np.random.default_rng(4)
    x = rng.normal(size=12)
    y = rng.normal(size=12)
    a = S.wilcoxon_signed_rank(list(x), list(y))
    b = S.wilcoxon_signed_rank(list(y), list(x))
    assert a["raw_p"] == pytest.approx(b["raw_p"], abs=1e-12)


def test_exact_distribution_sums_to_one_and_symmetric():
    for n in (3, 7, 12):
        dist = S.exact_w_distribution(n)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
        top = n * (n + 1) // 2
        for w, p in dist.items():
            assert p == pytest.approx(dist[top - w], abs=1e-15)


def test_wilcoxon_normal_approximation_branch():
    rng = np.random.default_rng(5)
    x = rng.normal(loc=0.8, size=40)
    y = rng.normal(size=40)
    ours = S.wilcoxon_signed_rank(list(x), list(y))
    ref = scipy.stats.wilcoxon(x, y, zero_method="wilcox", correction=True, mode="approx")
    assert ours["n_effective"] == 40
    assert ours["raw_p"] == pytest.approx(ref.pvalue, rel=1e-6)


def test_midranks_ties():
    assert S.midranks([3.0, 1.0, 3.0, 2.0]).tolist() == [3.5, 1.0, 3.5, 2.0]


# ---------------------------------------------------------------------------
# Holm


def test_holm_reference_five_values():
    # exact achievable p-values whose 6-decimal roundings are
    # 0.001953, 0.001953, 0.009766, 0.193359, 0.007812
    raw = [Fraction(2, 1024), Fraction(2, 1024), Fraction(10, 1024), Fraction(198, 1024), Fraction(2, 256)]
    adjusted = S.holm_adjust([float(p) for p in raw])
    assert [round(p, 6) for p in adjusted] == [0.009766, 0.009766, 0.023438, 0.193359, 0.023438]


def test_holm_single_value_identity():
    assert S.holm_adjust([0.05]) == [0.05]


def test_holm_all_ones_capped():
    assert S.holm_adjust([1.0, 1.0, 1.0]) == [1.0, 1.0, 1.0]


def test_holm_monotone_and_dominates_raw():
    rng = np.random.default_rng(6)
    for _ in range(30):
        raw = rng.random(int(rng.integers(1, 9))).tolist()
        adj = S.holm_adjust(raw)
        assert all(a >= r for a, r in zip(adj, raw))
        order = sorted(range(len(raw)), key=lambda i: raw[i])
        sorted_adj = [adj[i] for i in order]
        assert all(b >= a for a, b in zip(sorted_adj, sorted_adj[1:]))


def test_holm_rejects_out_of_range():
    with pytest.raises(S.StatsError):
        S.holm_adjust([0.2, 1.2])


# ---------------------------------------------------------------------------
# paired report


def _table(name, seeds, offset, rng):
    vals = [0.9 + offset + 0.01 * rng.standard_normal() for _ in seeds]
    return S.RunTable(name=name, seeds=list(seeds), metrics={"map50": vals})


def test_paired_report_dominance():
    rng = np.random.default_rng(7)
    seeds = list(range(10))
    a = S.RunTable("ours", seeds, {"map50": [0.95 + 0.001 * s for s in seeds]})
    b = S.RunTable("base", seeds, {"map50": [0.90 + 0.001 * s for s in seeds]})
    report = S.paired_report(a, [b], ["map50"])
    (cmp,) = report["map50"]
    assert cmp.direction == "ours > base"
    assert cmp.median_diff == pytest.approx(0.05)
    assert cmp.reject is True
    assert cmp.raw_p == 2 / 2**10


def test_paired_report_identical_runs_surfaces_error():
    seeds = list(range(5))
    a = S.RunTable("ours", seeds, {"map50": [0.9] * 5})
    b = S.RunTable("base", seeds, {"map50": [0.9] * 5})
    with pytest.raises(S.AllZeroDifferencesError, match="ours vs base"):
        S.paired_report(a, [b], ["map50"])


def test_paired_report_reproduces_reference_adjustments():
    # five baselines rigged so the raw p-values match the known precision
    # comparisons; the Holm column must reproduce their adjusted values
    seeds = list(range(10))
    base_vals = [1.0 + 0.1 * s for s in seeds]
    a = S.RunTable("ours", seeds, {"m": base_vals})

    def rigged(name, signs):
        vals = [base_vals[i] - signs[i] * (1.0 + 0.05 * i) for i in range(10)]
        return S.RunTable(name, seeds, {"m": vals})

    baselines = [
        rigged("b1", [1] * 10),                           # W+=55 -> 2/1024
        rigged("b2", [1] * 10),                           # W+=55 -> 2/1024
        rigged("b3", [1, 1, -1, 1, 1, 1, 1, 1, 1, 1]),    # W+=52 -> 10/1024
        rigged("b4", [1, 1, 1, -1, 1, 1, 1, 1, 1, -1]),   # W+=41 -> 198/1024
        rigged("b5", [1] * 8 + [0, 0]),                   # n=8, W+=36 -> 2/256
    ]
    report = S.paired_report(a, baselines, ["m"])
    raws = [round(c.raw_p, 6) for c in report["m"]]
    holms = [round(c.holm_p, 6) for c in report["m"]]
    assert raws == [0.001953, 0.001953, 0.009766, 0.193359, 0.007812]
    assert holms == [0.009766, 0.009766, 0.023438, 0.193359, 0.023438]


def test_paired_report_seed_mismatch():
    a = S.RunTable("ours", [1, 2], {"m": [0.5, 0.6]})
    b = S.RunTable("base", [3, 4], {"m": [0.5, 0.6]})
    with pytest.raises(S.SeedMismatchError):
        S.paired_report(a, [b], ["m"])


def test_paired_report_swap_negates_median():
    rng = np.random.default_rng(8)
    seeds = list(range(10))
    a = _table("a", seeds, 0.02, rng)
    b = _table("b", seeds, 0.0, rng)
    ab = S.paired_report(a, [b], ["map50"])["map50"][0]
    ba = S.paired_report(b, [a], ["map50"])["map50"][0]
    assert ab.median_diff == pytest.approx(-ba.median_diff, abs=1e-15)
    assert ab.raw_p == pytest.approx(ba.raw_p, abs=1e-15)


def test_format_tables_render():
    rng = np.random.default_rng(9)
    table = S.format_summary_table({"map50": S.describe(rng.random(20))})
    assert "skewness" in table and "map50" in table
    seeds = list(range(10))
    a = _table("a", seeds, 0.05, rng)
    b = _table("b", seeds, 0.0, rng)
    text = S.format_comparison_table(S.paired_report(a, [b], ["map50"])["map50"])
    assert "a vs b" in text and "holm p" in text
