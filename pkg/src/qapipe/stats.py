"""Paired preference significance tests and inter-annotator agreement.

The binomial sign test discards ties and sums exact tail probabilities.
The Wilcoxon signed-rank test keeps zeros in the ranking and drops them
from the statistic (Pratt handling); it enumerates the exact conditional
distribution for small n and falls back to a continuity-corrected normal
approximation above that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

EXACT_WILCOXON_LIMIT = 25


def binomial_sign_test(wins_a: int, wins_b: int, ties: int = 0,
                       sided: str = "two") -> float:
    """Exact binomial test at p=0.5 over the non-tied preferences.

    'two' doubles the larger tail (capped at 1); 'one' is the upper tail
    of wins_a.
    """
    if wins_a < 0 or wins_b < 0 or ties < 0:
        raise ValueError("counts must be non-negative")
    n = wins_a + wins_b
    if n == 0:
        return 1.0
    denom = 1 << n  # 2^n
    if sided == "one":
        tail = sum(math.comb(n, k) for k in range(wins_a, n + 1))
        return float(Fraction(tail, denom))
    if sided != "two":
        raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")
    hi = max(wins_a, wins_b)
    tail = sum(math.comb(n, k) for k in range(hi, n + 1))
    p = 2 * Fraction(tail, denom)
    return float(min(p, Fraction(1)))


@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # W+ over the nonzero preferences
    n_nonzero: int
    method: str  # "exact" or "normal"


def _pratt_ranks(prefs: Sequence[int]) -> list[float]:
    """Average ranks of |pref| over all items (zeros included), Pratt style.

    All preferences are +1/-1/0, so zeros share the low average rank and
    every nonzero shares the high one.
    """
    n = len(prefs)
    n_zero = sum(1 for d in prefs if d == 0)
    nonzero_rank = (n_zero + 1 + n) / 2.0
    return [nonzero_rank for d in prefs if d != 0]


def wilcoxon_sign_test(prefs: Iterable[int], sided: str = "two") -> WilcoxonResult:
    """Signed-rank test over a sequence of +1/-1/0 preferences."""
    prefs = list(prefs)
    for d in prefs:
        if d not in (-1, 0, 1):
            raise ValueError(f"preferences must be +1, -1, or 0, got {d!r}")
    if sided not in ("one", "two"):
        raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")
    ranks = _pratt_ranks(prefs)
    signs = [d for d in prefs if d != 0]
    n = len(signs)
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0, "exact")
    w_plus = sum(r for r, s in zip(ranks, signs) if s > 0)
    if n <= EXACT_WILCOXON_LIMIT:
        p = _exact_signed_rank_p(ranks, w_plus, sided)
        return WilcoxonResult(p, w_plus, n, "exact")
    mean = sum(ranks) / 2.0
    var = sum(r * r for r in ranks) / 4.0
    sd = math.sqrt(var)
    # continuity correction pulls the statistic toward the mean
    z = (w_plus - mean - 0.5 * _sign(w_plus - mean)) / sd if sd > 0 else 0.0
    upper = 0.5 * math.erfc(z / math.sqrt(2))
    if sided == "one":
        p = upper
    else:
        p = min(1.0, 2.0 * min(upper, 1.0 - upper))
    return WilcoxonResult(p, w_plus, n, "normal")


def _sign(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def _exact_signed_rank_p(ranks: Sequence[float], w_plus: float, sided: str) -> float:
    """Exact distribution of W+ by subset-sum counting over the given ranks.

    Ranks arrive as halves of integers (average ranks), so everything is
    doubled to stay in integer arithmetic.
    """
    doubled = [round(2 * r) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    n_outcomes = 1 << len(doubled)
    w2 = round(2 * w_plus)
    ge = sum(counts[w2:])
    le = sum(counts[: w2 + 1])
    if sided == "one":
        return ge / n_outcomes
    return min(1.0, 2.0 * min(ge, le) / n_outcomes)


@dataclass(frozen=True)
class KappaResult:
    kappa: Optional[float]  # None when chance agreement is 1 (degenerate)
    observed_agreement: float
    expected_agreement: float

    @property
    def degenerate(self) -> bool:
        return self.kappa is None


def cohens_kappa(judgments_a: Sequence[str], judgments_b: Sequence[str]) -> KappaResult:
    """Chance-corrected agreement from two aligned categorical vectors."""
    if len(judgments_a) != len(judgments_b):
        raise ValueError("judges must cover the same question set")
    n = len(judgments_a)
    if n == 0:
        raise ValueError("no judgments")
    p_o = sum(1 for a, b in zip(judgments_a, judgments_b) if a == b) / n
    categories = set(judgments_a) | set(judgments_b)
    p_e = sum(
        (judgments_a.count(c) / n) * (judgments_b.count(c) / n)
        for c in categories
    )
    if p_e >= 1.0 - 1e-15:
        return KappaResult(None, p_o, 1.0)
    return KappaResult((p_o - p_e) / (1.0 - p_e), p_o, p_e)


def prefs_from_counts(wins_a: int, wins_b: int, ties: int) -> list[int]:
    """Expand preference counts into a +1/-1/0 sequence for the rank test."""
    return [1] * wins_a + [-1] * wins_b + [0] * ties
