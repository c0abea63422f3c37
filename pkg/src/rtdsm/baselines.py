"""Reference solvers: iterative spectrum balancing, exhaustive search, waterfilling."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .ipdb import GRID_FLOOR_DBM, OuterRecord, RunTrace, equal_power, random_power
from .model import EQUALITY, BitCounter, Scenario, check_feasible, fit_total, weighted_objective

ORACLE_LIMIT = 10**7


@dataclass
class IsbConfig:
    delta_db: float = 0.5
    eps_power: float = 1e-3
    max_dual_iters: int = 50
    inner_rounds: int = 10
    lambda_init: float = 1.0
    max_outer: int = 20
    init_power: str = "ep"
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        self.init_power = self.init_power.lower()
        if not (self.delta_db > 0 and self.eps_power > 0 and self.lambda_init > 0):
            raise ValueError("delta_db, eps_power and lambda_init must be positive")
        if min(self.max_dual_iters, self.inner_rounds, self.max_outer) < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.init_power not in ("ep", "rp"):
            raise ValueError("init_power must be 'ep' or 'rp'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IsbConfig":
        return cls(**d)


def power_grid(top: float, delta_db: float) -> np.ndarray:
    """{0} plus 10**((-140 + j*delta)/10) mW up to ``top``."""
    count = int(math.floor((10 * math.log10(top) - GRID_FLOOR_DBM) / delta_db)) + 2
    levels = 10.0 ** ((GRID_FLOOR_DBM + np.arange(count) * delta_db) / 10.0)
    return np.concatenate([[0.0], levels[levels <= top]])


class _Isb:
    def __init__(self, scenario: Scenario, config: IsbConfig, counter: BitCounter):
        self.sc = scenario
        self.cfg = config
        self.counter = counter
        self.grid = power_grid(float(scenario.masks.max()), config.delta_db)
        self.valid = self.grid[None, :, None] <= scenario.masks[:, None, :]  # [K, G, N]

    def sweep_user(self, s: np.ndarray, lam: np.ndarray, n: int) -> bool:
        """Per-tone exhaustive search over user ``n``'s power; True if anything moved."""
        sc, g = self.sc, self.grid
        others = s.copy()
        others[:, n] = 0.0
        partial = np.einsum("kml,kl->km", sc.gains, others) + sc.noise  # [K, N]
        denom = partial[:, None, :] + g[None, :, None] * sc.gains[:, None, :, n]  # [K, G, N]
        num = np.broadcast_to(s[:, None, :], denom.shape).copy()
        num[:, :, n] = g[None, :]
        lagr = np.log2(1.0 + num / denom) @ sc.weights - lam[n] * g[None, :]
        self.counter.add(denom.size)
        lagr[~self.valid[:, :, n]] = -np.inf
        choice = g[np.argmax(lagr, axis=1)]
        moved = not np.array_equal(choice, s[:, n])
        s[:, n] = choice
        return moved

    def solve(self, s: np.ndarray, lam: np.ndarray) -> np.ndarray:
        s = s.copy()
        for _ in range(self.cfg.inner_rounds):
            moved = False
            for n in range(self.sc.num_users):
                moved |= self.sweep_user(s, lam, n)
            if not moved:
                break
        return s

    def bisect(self, s: np.ndarray, lam: np.ndarray, n: int, on_eval) -> tuple[np.ndarray, bool]:
        """Search the multiplier of user ``n``; returns spectra and convergence flag."""
        budget = self.sc.budgets[n]
        eps = self.cfg.eps_power * budget
        equality = self.sc.constraint_mode == EQUALITY

        def power_at(value):
            trial = lam.copy()
            trial[n] = value
            out = self.solve(s, trial)
            on_eval(out)
            return out, out[:, n].sum()

        lo = 0.0
        s_lo, p_lo = power_at(lo)
        if p_lo <= budget + eps:
            lam[n] = 0.0
            return s_lo, (p_lo >= budget - eps) or not equality
        hi = max(lam[n], self.cfg.lambda_init)
        s_hi, p_hi = power_at(hi)
        while p_hi > budget + eps:
            lo, s_lo, p_lo = hi, s_hi, p_hi
            hi *= 2.0
            s_hi, p_hi = power_at(hi)
        if abs(p_hi - budget) <= eps:
            lam[n] = hi
            return s_hi, True
        for _ in range(self.cfg.max_dual_iters):
            mid = 0.5 * (lo + hi)
            s_mid, p_mid = power_at(mid)
            if abs(p_mid - budget) <= eps:
                lam[n] = mid
                return s_mid, True
            if p_mid > budget:
                lo = mid
            else:
                hi, s_hi, p_hi = mid, s_mid, p_mid
        # keep the feasible side of the bracket
        lam[n] = hi
        return s_hi, False


def project_feasible(scenario: Scenario, spectra) -> np.ndarray:
    """Rescale each user's spectrum onto its power constraint, respecting masks."""
    s = np.array(spectra, dtype=float)
    for n in range(scenario.num_users):
        p, budget = s[:, n].sum(), scenario.budgets[n]
        if scenario.constraint_mode == EQUALITY or p > budget:
            if p > 0:
                s[:, n] *= budget / p
            else:
                s[:, n] = budget / scenario.num_tones
            s[:, n] = fit_total(s[:, n], scenario.masks[:, n], budget)
    return s


def isb_run(scenario: Scenario, config: IsbConfig | None = None,
            clock: Callable[[], float] | None = None) -> tuple[np.ndarray, RunTrace]:
    """Dual decomposition with per-tone grid coordinate ascent.

    Intermediate iterates generally violate the power budgets; every
    evaluated multiplier is logged as a ``dual`` record in the trace.  Outer
    records hold the objective of the iterate projected onto the budgets.
    """
    config = config or IsbConfig()
    counter = BitCounter()
    rng = np.random.default_rng(config.seed)
    s = equal_power(scenario) if config.init_power == "ep" else random_power(scenario, rng)
    lam = np.zeros(scenario.num_users)
    isb = _Isb(scenario, config, counter)
    trace = RunTrace("isb", scenario.num_users)
    t0 = clock() if clock else 0.0

    def on_eval(spectra):
        trace.update_objective.append(weighted_objective(scenario, spectra))
        trace.update_power.append(spectra.sum(axis=0).tolist())
        trace.update_kind.append("dual")

    def snapshot(iteration, spectra):
        feasible = project_feasible(scenario, spectra)
        elapsed = (clock() - t0) * 1e3 if clock else 0.0
        trace.outer.append(OuterRecord(
            iteration, weighted_objective(scenario, feasible), feasible.sum(axis=0).tolist(),
            counter.count, elapsed, len(trace.update_kind),
        ))
        return feasible

    on_eval(s)
    trace.update_kind[-1] = "init"
    snapshot(0, s)
    converged = False
    stop = "max_outer"
    lambdas = []
    for outer in range(1, config.max_outer + 1):
        previous = trace.outer[-1].objective
        flags = []
        for n in range(scenario.num_users):
            s, ok = isb.bisect(s, lam, n, on_eval)
            flags.append(ok)
        lambdas.append(lam.tolist())
        snapshot(outer, s)
        converged = all(flags)
        current = trace.outer[-1].objective
        settled = abs(current - previous) <= config.tol * abs(current)
        if converged and settled:
            stop = "converged"
            break
        if settled and len(lambdas) > 1 and lambdas[-1] == lambdas[-2]:
            # grid too coarse to meet the power tolerance; multipliers stopped moving
            stop = "stationary"
            break

    final = project_feasible(scenario, s)
    trace.final_spectra = final
    trace.stop_reason = stop
    trace.bit_evals = counter.count
    trace.flags["dual_converged"] = converged
    trace.flags["lambdas"] = lambdas
    if check_feasible(scenario, final):
        raise RuntimeError("projection failed to produce feasible spectra")
    return final, trace


# -- exhaustive oracle ---------------------------------------------------------

def compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    out = []
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(total + parts - 2 - prev)
        out.append(row)
    return np.array(out, dtype=int).reshape(-1, parts)


def oracle_size(num_users: int, num_tones: int, quanta: int, equality: bool = True) -> int:
    per_user = math.comb(quanta + num_tones - 1, num_tones - 1) if equality \
        else math.comb(quanta + num_tones, num_tones)
    return per_user**num_users


@dataclass
class OracleResult:
    spectra: np.ndarray
    objective: float
    allocation: np.ndarray
    evaluated: int


def oracle_search(scenario: Scenario, quanta: int, counter: BitCounter | None = None) -> OracleResult:
    """Exact optimum over allocations of ``quanta`` equal power steps per user."""
    K, N = scenario.num_tones, scenario.num_users
    equality = scenario.constraint_mode == EQUALITY
    size = oracle_size(N, K, quanta, equality)
    if size > ORACLE_LIMIT:
        raise ValueError(f"oracle enumeration of {size} points exceeds {ORACLE_LIMIT}")
    if equality:
        units = compositions(quanta, K)
    else:
        units = compositions(quanta, K + 1)[:, :K]
        units = units[np.lexsort(units.T[::-1])]
    options = []
    for n in range(N):
        alloc = units * (scenario.budgets[n] / quanta)
        ok = np.all(alloc <= scenario.masks[:, n], axis=1)
        options.append((units[ok], alloc[ok]))
    if any(len(o[1]) == 0 for o in options):
        raise ValueError("no allocation respects the masks")

    best_val, best_idx, evaluated = -np.inf, None, 0
    last = options[-1][1]
    for head in itertools.product(*(range(len(o[1])) for o in options[:-1])):
        s = np.empty((last.shape[0], K, N))
        for n, i in enumerate(head):
            s[:, :, n] = options[n][1][i]
        s[:, :, N - 1] = last
        interference = np.einsum("knm,ckm->ckn", scenario.gains, s) + scenario.noise
        vals = (np.log2(1.0 + s / interference) @ scenario.weights).sum(axis=1)
        evaluated += vals.size
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), (*head, j)
    if counter is not None:
        counter.add(evaluated * K * N)
    spectra = np.column_stack([options[n][1][i] for n, i in enumerate(best_idx)])
    allocation = np.column_stack([options[n][0][i] for n, i in enumerate(best_idx)])
    return OracleResult(spectra, best_val, allocation, evaluated)


# -- single-user waterfilling ---------------------------------------------------

def waterfill(noise, budget: float, mask=None, iters: int = 200) -> np.ndarray:
    """Rate-optimal single-user powers ``clip(mu - noise, 0, mask)`` summing to ``budget``."""
    z = np.asarray(noise, dtype=float)
    cap = np.full_like(z, np.inf) if mask is None else np.broadcast_to(np.asarray(mask, float), z.shape)
    lo, hi = float(z.min()), float(z.max()) + budget
    for _ in range(iters):
        mu = 0.5 * (lo + hi)
        if np.clip(mu - z, 0.0, cap).sum() > budget:
            hi = mu
        else:
            lo = mu
    return np.clip(0.5 * (lo + hi) - z, 0.0, cap)
