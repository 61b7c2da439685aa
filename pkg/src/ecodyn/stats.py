"""Hitting-time summaries and the Mann-Whitney U rank test."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

NORMAL_MIN_N = 20


@dataclass
class EnsembleStats:
    samples: np.ndarray
    mean: float
    ci95: tuple
    five_number: tuple
    histogram: tuple  # (edges, counts)
    censored_count: int = 0

    def to_dict(self) -> dict:
        edges, counts = self.histogram
        return {
            "n": int(self.samples.size),
            "mean": self.mean,
            "ci95": list(self.ci95),
            "five_number": list(self.five_number),
            "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
            "censored_count": self.censored_count,
        }


@dataclass
class RankTestResult:
    u_statistic: float
    z_score: float
    p_value: float
    tie_correction_applied: bool
    method: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"u_statistic": self.u_statistic, "z_score": self.z_score, "p_value": self.p_value,
                "tie_correction_applied": self.tie_correction_applied, "method": self.method,
                "metadata": self.metadata}


def summarize(samples, censored=None) -> EnsembleStats:
    """Mean, normal 95% interval, linear quartiles and a Freedman-Diaconis histogram.

    Entries flagged in ``censored`` are dropped and counted.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if censored is None:
        censored = np.zeros(x.size, bool)
    censored = np.asarray(censored, bool)
    kept = x[~censored]
    if kept.size == 0:
        raise ValueError("all samples are censored")
    if kept.size < 2:
        raise ValueError("at least two uncensored samples are required")
    mean = float(np.mean(kept))
    half = 1.96 * float(np.std(kept, ddof=1)) / math.sqrt(kept.size)
    q = np.percentile(kept, [0, 25, 50, 75, 100])
    if np.ptp(kept) == 0:
        edges, counts = np.array([kept[0], kept[0]]), np.array([kept.size])
    else:
        counts, edges = np.histogram(kept, bins="fd")
    return EnsembleStats(kept, mean, (mean - half, mean + half), tuple(float(v) for v in q),
                         (edges, counts), int(np.count_nonzero(censored)))


def midranks(values) -> np.ndarray:
    """Ranks starting at 1 with tied values sharing their average rank."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_tails(ranks2, n1: int, stat2: int):
    """P(S <= stat) and P(S >= stat) for the doubled rank sum of ``n1`` draws.

    Dynamic programme over subsets of the pooled doubled midranks; each of
    the ``C(N, n1)`` subsets is equally likely under the null.
    """
    total = int(ranks2.sum())
    # counts[k][s]: number of k-subsets with doubled rank sum s
    counts = np.zeros((n1 + 1, total + 1), dtype=object)
    counts[0, 0] = 1
    for r in ranks2:
        r = int(r)
        for k in range(n1, 0, -1):
            counts[k, r:] = counts[k, r:] + counts[k - 1, :total + 1 - r]
    row = counts[n1]
    denom = sum(row)
    lower = sum(row[:stat2 + 1]) / denom
    upper = sum(row[stat2:]) / denom
    return float(lower), float(upper)


def mann_whitney_u(a, b) -> RankTestResult:
    """Two-sided Mann-Whitney U test of ``a`` against ``b``.

    ``U`` counts pairs with ``a > b`` plus half the ties. For both samples
    of size at least 20 the normal approximation with tie-corrected
    variance and continuity correction is used; smaller samples use the
    exact permutation distribution of the midrank sum. The one-sided
    p-value for ``a`` tending smaller sits in ``metadata["p_less"]``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    ranks = midranks(pooled)
    R1 = float(ranks[:n1].sum())
    U = R1 - n1 * (n1 + 1) / 2.0
    N = n1 + n2
    mu = n1 * n2 / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    ties = bool(np.any(tie_counts > 1))
    var = n1 * n2 / 12.0 * ((N + 1) - tie_term / (N * (N - 1))) if N > 1 else 0.0
    meta = {"n1": n1, "n2": n2, "alternative": "two-sided"}
    if var <= 0:
        meta["p_less"] = 1.0
        return RankTestResult(U, 0.0, 1.0, ties, "degenerate", meta)
    sd = math.sqrt(var)
    if n1 >= NORMAL_MIN_N and n2 >= NORMAL_MIN_N:
        d = U - mu
        z = (d - math.copysign(0.5, d)) / sd if abs(d) >= 0.5 else 0.0
        p_less = float(ndtr((U - mu + 0.5) / sd))
        p_greater = float(ndtr(-(U - mu - 0.5) / sd))
        p = min(1.0, 2.0 * min(p_less, p_greater))
        method = "normal"
    else:
        r2 = np.rint(2.0 * ranks).astype(int)
        lower, upper = _exact_tails(r2, n1, int(round(2.0 * R1)))
        p_less, p_greater = lower, upper
        p = min(1.0, 2.0 * min(lower, upper))
        z = (U - mu) / sd
        method = "exact"
    meta["p_less"] = p_less
    meta["p_greater"] = p_greater
    return RankTestResult(float(U), float(z), float(p), ties, method, meta)
