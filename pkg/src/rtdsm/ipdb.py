"""Iterative power difference balancing.

Primal coordinate ascent over the power difference variables of a DoV
transform.  Every single update is an exact line search over a log-scaled
grid that contains zero, so each update keeps the spectra feasible and never
lowers the weighted rate sum.  The solver can therefore be stopped after any
update (``update_budget``).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import procedures
from .dov import DovTransform, equal_gamma, validate
from .model import (
    EQUALITY,
    BitCounter,
    Scenario,
    check_feasible,
    fit_total,
    tone_objective,
)

TONE_ORDERS = ("to1", "to2", "to3", "to4")
INIT_POWERS = ("ep", "rp")

# anchor of the log grid, dBm per tone
GRID_FLOOR_DBM = -140.0


class InfeasibleStateError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    tone_order: str = "to1"
    user_order: tuple[int, ...] | None = None
    init_power: str = "ep"
    delta_db: float = 1.0
    inner_iters: int = 1
    equalize_every: int = 0  # 0 disables equalization
    inequality: bool = False
    alpha: float = 1.1
    beta: float = 0.8
    max_outer: int = 200
    update_budget: int | None = None
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        self.tone_order = self.tone_order.lower()
        self.init_power = self.init_power.lower()
        if self.tone_order not in TONE_ORDERS:
            raise ValueError(f"tone_order must be one of {TONE_ORDERS}")
        if self.init_power not in INIT_POWERS:
            raise ValueError(f"init_power must be one of {INIT_POWERS}")
        if not self.delta_db > 0:
            raise ValueError("delta_db must be positive")
        if self.inner_iters < 1 or self.max_outer < 1:
            raise ValueError("inner_iters and max_outer must be >= 1")
        if self.equalize_every < 0:
            raise ValueError("equalize_every must be >= 0")
        if not self.alpha > 1 or not 0 < self.beta < 1:
            raise ValueError("need alpha > 1 and 0 < beta < 1")
        if self.update_budget is not None and self.update_budget < 1:
            raise ValueError("update_budget must be positive")
        if self.user_order is not None:
            self.user_order = tuple(int(n) for n in self.user_order)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["user_order"] is not None:
            d["user_order"] = list(d["user_order"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass(frozen=True)
class Bounds:
    t_min: float
    t_max: float


@dataclass
class OuterRecord:
    iteration: int
    objective: float
    user_power: list[float]
    bit_evals: int
    elapsed_ms: float
    updates: int


@dataclass
class RunTrace:
    """Objective and per-user power after every update, plus outer snapshots.

    Update 0 is the initial point.  ``update_kind`` tags each record as
    ``init``, ``ls`` (line search), ``ineq`` (inequality tone step), ``eq``
    (equalization pass) or, for the dual baseline, ``dual``.
    """

    algorithm: str
    num_users: int
    update_objective: list[float] = field(default_factory=list)
    update_power: list[list[float]] = field(default_factory=list)
    update_kind: list[str] = field(default_factory=list)
    outer: list[OuterRecord] = field(default_factory=list)
    final_spectra: np.ndarray | None = None
    stop_reason: str = ""
    bit_evals: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def final_objective(self) -> float:
        return self.outer[-1].objective if self.outer else self.update_objective[-1]

    def outer_objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.outer])

    def num_updates(self, kinds: Sequence[str] = ("ls", "ineq")) -> int:
        return sum(1 for k in self.update_kind if k in kinds)


# -- grid --------------------------------------------------------------------

@lru_cache(maxsize=32)
def _grid_levels(delta_db: float, top_dbm: float) -> np.ndarray:
    count = int(np.floor((top_dbm - GRID_FLOOR_DBM) / delta_db)) + 2
    k = np.arange(max(count, 1))
    levels = 10.0 ** ((GRID_FLOOR_DBM + k * delta_db) / 10.0)
    levels.setflags(write=False)
    return levels


def _positive_levels(limit: float, delta_db: float) -> np.ndarray:
    """Grid magnitudes ``10**((-140 + k*delta)/10) <= limit`` for k >= 0."""
    if not limit > 0:
        return np.empty(0)
    top = 10.0 * np.log10(limit)
    # round the cache key up so nearby limits share a table
    levels = _grid_levels(float(delta_db), float(np.ceil(top / 10.0) * 10.0 + 10.0))
    return levels[: np.searchsorted(levels, limit, side="right")]


def build_grid(bounds: Bounds, delta_db: float) -> np.ndarray:
    """Ascending candidate set: zero plus +/- log-spaced levels, clipped to the bounds."""
    lo, hi = bounds.t_min, bounds.t_max
    if lo > hi:
        raise InfeasibleStateError(f"empty interval [{lo}, {hi}]")
    if not lo <= 0.0 <= hi:
        raise InfeasibleStateError(f"interval [{lo}, {hi}] does not contain 0")
    levels = _positive_levels(max(-lo, hi), delta_db)
    neg = -levels[levels <= -lo][::-1]
    pos = levels[levels <= hi]
    return np.concatenate([neg, [0.0], pos])


# -- solver state -------------------------------------------------------------

class SolverState:
    """Mutable state of one run: spectra, difference variables and offsets.

    ``base[k, n]`` holds ``P_tot[n] * gamma[k, n]`` in mW; keeping the product
    rather than gamma makes recentering exact.
    """

    def __init__(self, scenario: Scenario, transform: DovTransform, spectra,
                 counter: BitCounter | None = None):
        self.scenario = scenario
        self.transform = transform
        self.s = np.array(spectra, dtype=float)
        self.t = np.zeros_like(self.s)
        self.base = self.s.copy()
        self.p_hat = self.s.sum(axis=0)
        self.counter = counter if counter is not None else BitCounter()
        self.tone_obj = tone_objective(scenario, self.s)
        self.objective = float(np.sum(self.tone_obj))
        self.trace: RunTrace | None = None
        self.update_budget: int | None = None
        self.updates = 0
        self._cols = [
            [(np.array([q for q, _ in col], dtype=np.intp), np.array([c for _, c in col]))
             for col in pat.cols]
            for pat in transform.patterns
        ]

    @property
    def gamma(self) -> np.ndarray:
        return self.base / self.scenario.budgets

    def exhausted(self) -> bool:
        return self.update_budget is not None and self.updates >= self.update_budget

    def refresh(self, tones=None) -> None:
        if tones is None:
            self.tone_obj = tone_objective(self.scenario, self.s)
        else:
            rows = self.s[tones]
            sc = self.scenario
            interference = np.einsum("knm,km->kn", sc.gains[tones], rows) + sc.noise[tones]
            self.tone_obj[tones] = np.log2(1.0 + rows / interference) @ sc.weights
        self.objective = float(np.sum(self.tone_obj))

    def record(self, kind: str) -> None:
        if kind in ("ls", "ineq"):
            self.updates += 1
        if self.trace is not None:
            self.trace.update_objective.append(self.objective)
            self.trace.update_power.append(self.s.sum(axis=0).tolist())
            self.trace.update_kind.append(kind)


def compute_bounds(state: SolverState, n: int, k: int) -> Bounds:
    """Interval of ``t[k, n]`` that keeps every affected tone inside [0, mask]."""
    q_idx, coefs = state._cols[n][k]
    rest = state.s[q_idx, n] - coefs * state.t[k, n]
    mask = state.scenario.masks[q_idx, n]
    lower = np.where(coefs > 0, -rest / coefs, (mask - rest) / coefs)
    upper = np.where(coefs > 0, (mask - rest) / coefs, -rest / coefs)
    t_min, t_max = float(lower.max()), float(upper.min())
    if t_min > t_max:
        raise InfeasibleStateError(f"user {n} variable {k}: bounds [{t_min}, {t_max}] are empty")
    return Bounds(t_min, t_max)


def _candidate_values(state: SolverState, n: int, k: int, grid: np.ndarray):
    """Per-candidate objective over the affected tones and the candidate powers."""
    sc = state.scenario
    q_idx, coefs = state._cols[n][k]
    rest = state.s[q_idx, n] - coefs * state.t[k, n]
    cand = rest[None, :] + grid[:, None] * coefs[None, :]
    rows = state.s[q_idx]
    gains = sc.gains[q_idx]
    others = rows.copy()
    others[:, n] = 0.0
    partial = np.einsum("qml,ql->qm", gains, others) + sc.noise[q_idx]
    denom = partial[None, :, :] + cand[:, :, None] * gains[None, :, :, n]
    num = np.broadcast_to(rows[None, :, :], denom.shape).copy()
    num[:, :, n] = cand
    values = (np.log2(1.0 + num / denom) @ sc.weights).sum(axis=1)
    state.counter.add(denom.size)
    mask = sc.masks[q_idx, n]
    bad = np.any((cand < 0.0) | (cand > mask[None, :]), axis=1)
    values[bad] = -np.inf
    return values, cand


def _pick(grid: np.ndarray, values: np.ndarray) -> int:
    best = values.max()
    ties = np.flatnonzero(values == best)
    if ties.size == 1:
        return int(ties[0])
    # prefer t = 0, then the smallest magnitude; first (negative) wins a +/- tie
    return int(ties[np.argmin(np.abs(grid[ties]))])


def line_search(state: SolverState, n: int, k: int, grid: np.ndarray) -> float:
    """Best grid value for ``t[k, n]`` with the other variables held fixed."""
    values, _ = _candidate_values(state, n, k, grid)
    return float(grid[_pick(grid, values)])


def update_variable(state: SolverState, n: int, k: int, delta_db: float) -> float:
    """Bounds, grid, line search and spectra update for one variable."""
    grid = build_grid(compute_bounds(state, n, k), delta_db)
    values, cand = _candidate_values(state, n, k, grid)
    i = _pick(grid, values)
    q_idx, _ = state._cols[n][k]
    state.t[k, n] = grid[i]
    state.s[q_idx, n] = cand[i]
    state.refresh(q_idx)
    state.record("ls")
    return float(grid[i])


def recenter(state: SolverState, n: int) -> None:
    """Zero user ``n``'s difference variables and absorb the spectrum into the offsets."""
    state.t[:, n] = 0.0
    state.base[:, n] = state.s[:, n]
    state.p_hat[n] = state.s[:, n].sum()


# -- initialization -----------------------------------------------------------

def equal_power(scenario: Scenario) -> np.ndarray:
    s = equal_gamma(scenario.num_tones, scenario.num_users) * scenario.budgets
    if np.any(s > scenario.masks):
        raise ValueError("equal power allocation violates the masks")
    return s


def random_power(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Levels uniform in dB within [-60, 0] dB of the mask, fit to the budget."""
    K, N = scenario.num_tones, scenario.num_users
    s = np.empty((K, N))
    for n in range(N):
        mask = scenario.masks[:, n]
        x = mask * 10.0 ** (rng.uniform(-60.0, 0.0, K) / 10.0)
        x *= scenario.budgets[n] / x.sum()
        s[:, n] = fit_total(x, mask, scenario.budgets[n])
    return s


def initial_spectra(scenario: Scenario, config: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    if config.init_power == "ep":
        return equal_power(scenario)
    return random_power(scenario, rng)


def tone_sequence(order: str, K: int, rng: np.random.Generator) -> np.ndarray:
    if order == "to1":
        return np.arange(K)
    if order == "to2":
        return np.arange(K)[::-1]
    if order == "to3":
        return np.arange(K) if rng.random() < 0.5 else np.arange(K)[::-1]
    return rng.permutation(K)


# -- main loop ----------------------------------------------------------------

def run(scenario: Scenario, transform: DovTransform, config: SolverConfig,
        clock: Callable[[], float] | None = None) -> tuple[np.ndarray, RunTrace]:
    """Run the solver and return the final spectra with the full trace.

    ``clock`` (seconds) feeds the elapsed-time column of the trace; without
    it elapsed times are recorded as zero so traces are reproducible.
    """
    rng = np.random.default_rng(config.seed)
    if transform.gamma is None:
        spectra = initial_spectra(scenario, config, rng)
        transform = transform.with_gamma(spectra / scenario.budgets)
    problems = validate(transform, scenario)
    if problems:
        raise ValueError("invalid transform: " + "; ".join(problems[:5]))
    spectra = transform.gamma * scenario.budgets
    if check_feasible(scenario, spectra):
        raise ValueError("initial spectra are infeasible")

    state = SolverState(scenario, transform, spectra)
    trace = RunTrace("ipdb", scenario.num_users)
    trace.flags["objective_drops"] = []
    state.trace = trace
    state.update_budget = config.update_budget
    users = config.user_order if config.user_order is not None else tuple(range(scenario.num_users))
    ineq_params = procedures.InequalityParams(config.alpha, config.beta)
    if config.inequality and scenario.constraint_mode == EQUALITY:
        raise ValueError("the inequality procedure needs an inequality-mode scenario")

    t0 = clock() if clock else 0.0

    def snapshot(iteration: int) -> None:
        elapsed = (clock() - t0) * 1e3 if clock else 0.0
        trace.outer.append(OuterRecord(
            iteration, state.objective, state.s.sum(axis=0).tolist(),
            state.counter.count, elapsed, state.updates,
        ))

    state.record("init")
    snapshot(0)
    stop = "max_outer"
    K = scenario.num_tones
    for outer in range(1, config.max_outer + 1):
        previous = state.objective
        for n in users:
            for _ in range(config.inner_iters):
                for k in tone_sequence(config.tone_order, K, rng):
                    if state.exhausted():
                        break
                    update_variable(state, n, int(k), config.delta_db)
                recenter(state, n)
                if state.exhausted():
                    break
            if state.exhausted():
                break
        if config.inequality and not state.exhausted():
            for n in users:
                order = tone_sequence(config.tone_order, K, rng)
                procedures.inequality_pass(state, n, ineq_params, order)
                recenter(state, n)
                if state.exhausted():
                    break
        if config.equalize_every and outer % config.equalize_every == 0 and not state.exhausted():
            for n in dict.fromkeys(users):
                before = state.objective
                procedures.equalize_pass(state, n)
                recenter(state, n)
                if state.objective < before:
                    trace.flags["objective_drops"].append((outer, int(n), before - state.objective))
        snapshot(outer)
        if state.exhausted():
            stop = "update_budget"
            break
        if abs(state.objective - previous) <= config.tol * abs(state.objective):
            stop = "converged"
            break

    trace.final_spectra = state.s.copy()
    trace.stop_reason = stop
    trace.bit_evals = state.counter.count
    report = check_feasible(scenario, state.s)
    if report:
        raise InfeasibleStateError(f"solver produced infeasible spectra: {report.as_dict()}")
    return state.s.copy(), trace


def stop_anytime_probe(scenario: Scenario, transform: DovTransform, config: SolverConfig,
                       budgets: Sequence[int]):
    """Feasibility report and objective after stopping at each update budget."""
    if not budgets:
        raise ValueError("need at least one budget")
    out = []
    for budget in budgets:
        cfg = SolverConfig(**{**config.to_dict(), "update_budget": int(budget)})
        spectra, trace = run(scenario, transform, cfg)
        out.append((int(budget), check_feasible(scenario, spectra), trace.final_objective, trace))
    return out
