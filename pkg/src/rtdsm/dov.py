"""Difference-of-variables transforms.

A transform maps power difference variables ``t[j, n]`` to spectra via

    s[k, n] = sum_j beta_n[k](j) * t[j, n] + P_tot[n] * gamma[k, n]

with zero column sums in ``beta`` so that every ``t`` keeps each user's total
power fixed.  Coefficients are stored sparsely per row (``rows[k]`` holds the
``(j, beta)`` pairs) and per column (``cols[j]`` holds ``(k, beta)``), which
are the index sets B and A.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Scenario

Row = tuple[tuple[int, float], ...]

TRANSFORM_NAMES = ("two-tone", "three-tone", "two-tone-rand", "three-tone-2")

# tolerance used by validate() for the conditions on sums
_VALIDATE_RTOL = 1e-9


@dataclass(frozen=True)
class DovPattern:
    """Sparse coefficients of one user's transform."""

    name: str
    rows: tuple[Row, ...]
    cols: tuple[Row, ...]

    @classmethod
    def from_rows(cls, name: str, rows: Sequence[Sequence[tuple[int, float]]]) -> "DovPattern":
        k_tones = len(rows)
        merged_rows = []
        for k, row in enumerate(rows):
            acc: dict[int, float] = {}
            for j, coef in row:
                if not 0 <= j < k_tones:
                    raise ValueError(f"row {k} references tone {j} outside 0..{k_tones - 1}")
                acc[j] = acc.get(j, 0.0) + float(coef)
            merged_rows.append(tuple((j, c) for j, c in sorted(acc.items()) if c != 0.0))
        cols: list[list[tuple[int, float]]] = [[] for _ in range(k_tones)]
        for k, row in enumerate(merged_rows):
            for j, coef in row:
                cols[j].append((k, coef))
        return cls(name, tuple(merged_rows), tuple(tuple(c) for c in cols))

    @property
    def num_tones(self) -> int:
        return len(self.rows)

    def beta(self, k: int, j: int) -> float:
        for jj, coef in self.rows[k]:
            if jj == j:
                return coef
        return 0.0

    def B(self, k: int) -> set[int]:
        return {j for j, _ in self.rows[k]}

    def A(self, j: int) -> set[int]:
        return {k for k, _ in self.cols[j]}


class DovTransform:
    """Per-user coefficient patterns plus the offsets ``gamma[k, n]``.

    ``gamma`` may be left ``None`` until the solver initializes it.
    """

    def __init__(self, patterns: Sequence[DovPattern], gamma=None, seed: int | None = None):
        self.patterns = tuple(patterns)
        if len({p.num_tones for p in self.patterns}) != 1:
            raise ValueError("all user patterns must cover the same number of tones")
        self.gamma = None if gamma is None else np.array(gamma, dtype=float)
        self.seed = seed

    @classmethod
    def shared(cls, pattern: DovPattern, num_users: int, gamma=None, seed=None) -> "DovTransform":
        return cls([pattern] * num_users, gamma, seed)

    @property
    def name(self) -> str:
        return self.patterns[0].name

    @property
    def num_users(self) -> int:
        return len(self.patterns)

    @property
    def num_tones(self) -> int:
        return self.patterns[0].num_tones

    def B(self, n: int, k: int) -> set[int]:
        return self.patterns[n].B(k)

    def A(self, n: int, k: int) -> set[int]:
        return self.patterns[n].A(k)

    def with_gamma(self, gamma) -> "DovTransform":
        return DovTransform(self.patterns, gamma, self.seed)


def equal_gamma(num_tones: int, num_users: int) -> np.ndarray:
    return np.full((num_tones, num_users), 1.0 / num_tones)


def validate(transform: DovTransform, scenario: Scenario, totals=None) -> list[str]:
    """Check zero column sums, positive diagonal, and the offsets.

    ``totals`` is the tracked per-user total power; it defaults to the
    budgets, in which case the offsets must sum to one.  Returns the list of
    violations (empty when valid).
    """
    K, N = scenario.num_tones, scenario.num_users
    out = []
    if transform.num_tones != K or transform.num_users != N:
        return [f"dimension mismatch: transform ({transform.num_tones}, {transform.num_users}) vs scenario ({K}, {N})"]
    for n, pat in enumerate(transform.patterns):
        for j in range(K):
            col_sum = sum(c for _, c in pat.cols[j])
            scale = max((abs(c) for _, c in pat.cols[j]), default=1.0)
            if abs(col_sum) > 1e-12 * scale:
                out.append(f"column sum: user {n} variable {j} column sum {col_sum!r}")
        for k in range(K):
            if not pat.beta(k, k) > 0:
                out.append(f"diagonal: user {n} tone {k} diagonal {pat.beta(k, k)!r}")
    if transform.gamma is not None:
        gamma = transform.gamma
        if gamma.shape != (K, N):
            out.append(f"gamma shape {gamma.shape} != {(K, N)}")
            return out
        budgets = scenario.budgets
        target = budgets if totals is None else np.asarray(totals, dtype=float)
        got = budgets * gamma.sum(axis=0)
        for n in range(N):
            if abs(got[n] - target[n]) > _VALIDATE_RTOL * budgets[n]:
                out.append(f"offset total: user {n} offsets give total {got[n]!r}, expected {target[n]!r}")
        slack = 1e-12
        for k, n in zip(*np.nonzero(gamma < -slack)):
            out.append(f"gamma bound: user {n} tone {k} negative offset")
        over = gamma * budgets > scenario.masks * (1 + slack)
        for k, n in zip(*np.nonzero(over)):
            out.append(f"gamma bound: user {n} tone {k} offset exceeds mask")
    return out


def apply(transform: DovTransform, t, scenario: Scenario, n: int) -> np.ndarray:
    """Spectrum of user ``n`` (length K) for difference variables ``t``.

    ``t`` is either a length-K vector for user ``n`` or the full [K][N] array.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim == 2:
        t = t[:, n]
    base = scenario.budgets[n] * transform.gamma[:, n]
    pat = transform.patterns[n]
    out = np.empty(pat.num_tones)
    for k, row in enumerate(pat.rows):
        acc = 0.0
        for j, coef in row:
            acc += coef * t[j]
        out[k] = acc + base[k]
    return out


def apply_all(transform: DovTransform, t, scenario: Scenario) -> np.ndarray:
    return np.column_stack([apply(transform, t, scenario, n) for n in range(scenario.num_users)])


# -- factories ---------------------------------------------------------------

def make_two_tone(K: int) -> DovPattern:
    """s_k = t_k - t_{k-1} (cyclic)."""
    if K < 2:
        raise ValueError("two-tone transform needs K >= 2")
    return DovPattern.from_rows("two-tone", [[(k, 1.0), ((k - 1) % K, -1.0)] for k in range(K)])


def make_three_tone(K: int) -> DovPattern:
    """s_k = -t_{k+1} + 2 t_k - t_{k-1} (cyclic)."""
    if K < 3:
        raise ValueError("three-tone transform needs K >= 3")
    return DovPattern.from_rows(
        "three-tone",
        [[((k + 1) % K, -1.0), (k, 2.0), ((k - 1) % K, -1.0)] for k in range(K)],
    )


def make_three_tone_2(K: int) -> DovPattern:
    """s_k = 2 t_k - t_{k+1} - t_{k+2} (cyclic)."""
    if K < 3:
        raise ValueError("three-tone-2 transform needs K >= 3")
    return DovPattern.from_rows(
        "three-tone-2",
        [[(k, 2.0), ((k + 1) % K, -1.0), ((k + 2) % K, -1.0)] for k in range(K)],
    )


def random_cycle(K: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation with a single K-cycle (Sattolo's algorithm).

    A single cycle has no fixed point, and it keeps the two-tone pattern at
    rank K-1: with several cycles each cycle's total power would be frozen.
    """
    perm = np.arange(K)
    for i in range(K - 1, 0, -1):
        j = int(rng.integers(i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def num_cycles(perm: Sequence[int]) -> int:
    seen, count = set(), 0
    for start in range(len(perm)):
        if start in seen:
            continue
        count += 1
        k = start
        while k not in seen:
            seen.add(k)
            k = int(perm[k])
    return count


def make_two_tone_perm(perm: Sequence[int]) -> DovPattern:
    """s_k = t_k - t_{perm[k]}; ``perm`` must be a derangement (0-based)."""
    perm = [int(p) for p in perm]
    K = len(perm)
    if sorted(perm) != list(range(K)):
        raise ValueError("not a permutation")
    if any(p == k for k, p in enumerate(perm)):
        raise ValueError("permutation has a fixed point")
    return DovPattern.from_rows("two-tone-rand", [[(k, 1.0), (perm[k], -1.0)] for k in range(K)])


def make_two_tone_rand(K: int, seed: int) -> DovPattern:
    if K < 2:
        raise ValueError("two-tone-rand transform needs K >= 2")
    perm = random_cycle(K, np.random.default_rng(seed))
    return make_two_tone_perm(perm)


def make_pattern(name: str, K: int, seed: int = 0) -> DovPattern:
    if name == "two-tone":
        return make_two_tone(K)
    if name == "three-tone":
        return make_three_tone(K)
    if name == "two-tone-rand":
        return make_two_tone_rand(K, seed)
    if name == "three-tone-2":
        return make_three_tone_2(K)
    raise ValueError(f"unknown transform {name!r}; expected one of {TRANSFORM_NAMES}")


def make_transform(name: str, scenario: Scenario, seed: int = 0, gamma=None) -> DovTransform:
    """Build a transform shared by all users of ``scenario``."""
    pattern = make_pattern(name, scenario.num_tones, seed)
    return DovTransform.shared(pattern, scenario.num_users, gamma, seed)
