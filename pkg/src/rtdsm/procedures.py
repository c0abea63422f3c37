"""Inequality procedure (per-tone scale up/down) and spike equalization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import EQUALITY, fit_total

log = logging.getLogger(__name__)

# spike threshold of the equalizer, dB
SPIKE_DB = 10.0


@dataclass(frozen=True)
class InequalityParams:
    alpha: float = 1.1
    beta: float = 0.8

    def __post_init__(self):
        if not self.alpha > 1 or not 0 < self.beta < 1:
            raise ValueError("need alpha > 1 and 0 < beta < 1")


def _tone_value(scenario, column: np.ndarray, k: int) -> float:
    interference = scenario.gains[k] @ column + scenario.noise[k]
    return float(np.log2(1.0 + column / interference) @ scenario.weights)


def inequality_pass(state, n: int, params: InequalityParams, tone_order) -> int:
    """Try alpha-scaled and beta-scaled power on each tone of user ``n``.

    Keeps the current value on ties.  Returns the number of tones changed.
    """
    sc = state.scenario
    if sc.constraint_mode == EQUALITY:
        raise ValueError("inequality procedure is only defined for inequality-mode scenarios")
    budget = sc.budgets[n]
    changed = 0
    for k in tone_order:
        if state.exhausted():
            break
        k = int(k)
        current = state.s[k, n]
        others = state.s[:, n].sum() - current
        s_alpha = min(params.alpha * current, budget - others, sc.masks[k, n])
        s_beta = params.beta * current
        column = state.s[k].copy()
        best, best_val = current, None
        for value in (current, s_alpha, s_beta):
            if value < 0:
                continue
            column[n] = value
            v = _tone_value(sc, column, k)
            if best_val is None or v > best_val:
                best, best_val = value, v
        state.counter.add(3 * sc.num_users)
        if best != current:
            state.s[k, n] = best
            changed += 1
        state.refresh([k])
        state.record("ineq")
    return changed


def find_spikes(row) -> list[tuple[int, str]]:
    """Positions ``k+1`` where the equalizer's down/up spike test fires."""
    s = np.asarray(row, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(s)
    out = []
    for k in range(s.size - 3):
        mid, left, right = db[k + 1], db[k], db[k + 3]
        if mid < left - SPIKE_DB and mid < right - SPIKE_DB:
            out.append((k + 1, "down"))
        elif mid > left + SPIKE_DB and mid > right + SPIKE_DB:
            out.append((k + 1, "up"))
    return out


def equalize_spectrum(row) -> np.ndarray:
    """One left-to-right spike smoothing sweep over tones (k, k+1, k+3).

    Down spikes average the three tones; up spikes flatten the middle tone to
    its lower neighbour and rescale the whole row back to its total power.
    Returns the input unchanged if a rescale would divide by zero.
    """
    s = np.array(row, dtype=float)
    p = s.sum()
    with np.errstate(divide="ignore"):
        for k in range(s.size - 3):
            left = 10.0 * np.log10(s[k])
            right = 10.0 * np.log10(s[k + 3])
            mid = 10.0 * np.log10(s[k + 1])
            if mid < left - SPIKE_DB and mid < right - SPIKE_DB:
                mean = (s[k] + s[k + 1] + s[k + 3]) / 3.0
                s[k] = s[k + 1] = s[k + 3] = mean
            elif mid > left + SPIKE_DB and mid > right + SPIKE_DB:
                s[k + 1] = min(s[k], s[k + 3])
                p_r = s.sum()
                if not p_r > 0:
                    return np.array(row, dtype=float)
                s *= p / p_r
    return s


def equalize_pass(state, n: int) -> None:
    """Equalize user ``n`` in place and restore feasibility against the masks."""
    sc = state.scenario
    before = state.s[:, n].copy()
    p = before.sum()
    s = equalize_spectrum(before)
    mask = sc.masks[:, n]
    if np.any(s > mask):
        if sc.constraint_mode == EQUALITY:
            s = fit_total(s, mask, p)
        else:
            s = np.minimum(s, mask)
            log.info("equalization clipped user %d to its mask, power %.6g -> %.6g", n, p, s.sum())
    state.s[:, n] = s
    state.refresh()
    state.record("eq")
