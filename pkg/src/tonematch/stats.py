"""Pairwise preference probabilities and binomial significance of subjective votes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

CATEGORIES = ("Humans", "DarkNoisy", "Indoor", "Structures", "Landscapes")
REPORT_HEADER = ["scene", "category", "wins", "ties", "n", "preference", "verdict", "favored_min", "disfavored_max"]


class Verdict(str, Enum):
    FAVORED = "Favored"
    DISFAVORED = "Disfavored"
    INCONCLUSIVE = "Inconclusive"


class VoteError(ValueError):
    pass


@dataclass(frozen=True)
class VoteRecord:
    scene: str
    category: str
    wins: int
    ties: int
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise VoteError(f"{self.scene}: participant count must be positive, got {self.n}")
        if self.wins < 0 or self.ties < 0 or self.wins + self.ties > self.n:
            raise VoteError(f"{self.scene}: need 0 <= wins + ties <= n, got wins={self.wins} ties={self.ties} n={self.n}")
        if self.category not in CATEGORIES:
            raise VoteError(f"{self.scene}: unknown category {self.category!r}; valid: {', '.join(CATEGORIES)}")


def preference_prob(wins: int, ties: int, n: int) -> float:
    """Winning frequency with ties split evenly: w/n + t/(2n)."""
    if n <= 0:
        raise VoteError("participant count must be positive")
    return wins / n + ties / (2.0 * n)


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P(X <= k) for X ~ Binomial(n, p), summed from log-space terms."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    lp, lq = math.log(p), math.log1p(-p)
    logs = [math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * lp + (n - i) * lq
            for i in range(k + 1)]
    top = max(logs)
    return min(1.0, math.exp(top) * math.fsum(math.exp(v - top) for v in logs))


def thresholds(n: int, level: float = 0.95) -> tuple[int, int]:
    """(favored_min, disfavored_max) win counts at the given one-sided level under p = 0.5.

    ``favored_min`` is the largest k whose CDF is still below ``level``, the
    point where the cumulative probability crosses it; ``disfavored_max`` is
    the smallest k whose CDF exceeds ``1 - level``. At n = 20 this gives 13 and 6.
    """
    cdf = [binomial_cdf(k, n, 0.5) for k in range(n + 1)]
    below = [k for k in range(n + 1) if cdf[k] < level]
    above = [k for k in range(n + 1) if cdf[k] > 1.0 - level]
    return (max(below) if below else 0), (min(above) if above else n)


def significance(wins: int, n: int, level: float = 0.95) -> Verdict:
    hi, lo = thresholds(n, level)
    if wins >= hi:
        return Verdict.FAVORED
    if wins <= lo:
        return Verdict.DISFAVORED
    return Verdict.INCONCLUSIVE


def read_votes(path) -> list:
    records = []
    with open(path, newline="") as f:
        rows = csv.DictReader(ln for ln in f if not ln.startswith("#"))
        missing = {"scene", "category", "wins", "ties", "n"} - set(rows.fieldnames or [])
        if missing:
            raise VoteError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(rows, 2):
            try:
                records.append(VoteRecord(row["scene"], row["category"], int(row["wins"]), int(row["ties"]),
                                          int(row["n"])))
            except ValueError as exc:
                raise VoteError(f"{path}:{lineno}: {exc}") from None
    return records


def report_rows(records, level: float = 0.95) -> list:
    rows = []
    for v in records:
        hi, lo = thresholds(v.n, level)
        rows.append([v.scene, v.category, v.wins, v.ties, v.n, f"{preference_prob(v.wins, v.ties, v.n):.6f}",
                     significance(v.wins, v.n, level).value, hi, lo])
    return rows
