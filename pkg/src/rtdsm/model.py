"""Problem instances, achievable-rate arithmetic and feasibility checks.

All powers are linear mW per tone.  dBm and dBm/Hz only appear in the JSON
boundary (:func:`scenario_to_json` / :func:`scenario_from_json`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

EQUALITY = "equality"
INEQUALITY = "inequality"
CONSTRAINT_MODES = (EQUALITY, INEQUALITY)

# relative slack on per-user total power
POWER_RTOL = 1e-9


class ScenarioError(ValueError):
    pass


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def mw_to_dbm(mw):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(mw, dtype=float))


def psd_to_mw(dbm_hz, tone_spacing):
    """dBm/Hz to mW per tone."""
    return dbm_to_mw(dbm_hz) * tone_spacing


def mw_to_psd(mw, tone_spacing):
    return mw_to_dbm(np.asarray(mw, dtype=float) / tone_spacing)


class BitCounter:
    """Counts evaluations of the per-tone bit-rate formula for one run."""

    __slots__ = ("count",)

    def __init__(self, count: int = 0):
        self.count = count

    def add(self, n: int) -> None:
        self.count += int(n)

    def __repr__(self):
        return f"BitCounter({self.count})"


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable multi-user multi-carrier problem instance.

    ``gains[k, n, m]`` is the normalized crosstalk from user ``m`` into user
    ``n`` on tone ``k`` (diagonal forced to zero), ``noise[k, n]`` the
    normalized noise and ``masks[k, n]`` the per-tone power cap.  The SNR gap
    is already folded into ``gains`` and ``noise``.
    """

    weights: np.ndarray
    gains: np.ndarray
    noise: np.ndarray
    masks: np.ndarray
    budgets: np.ndarray
    tone_spacing: float = 4312.5
    symbol_rate: float = 4000.0
    constraint_mode: str = EQUALITY
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        n_users = w.size
        a = np.array(self.gains, dtype=float)
        z = np.array(self.noise, dtype=float)
        if a.ndim != 3 or a.shape[1:] != (n_users, n_users):
            raise ScenarioError(f"gains must be [K][N][N], got {a.shape}")
        k_tones = a.shape[0]
        if z.shape != (k_tones, n_users):
            raise ScenarioError(f"noise must be [K][N], got {z.shape}")
        masks = np.broadcast_to(np.asarray(self.masks, dtype=float), (k_tones, n_users)).copy()
        budgets = np.broadcast_to(np.asarray(self.budgets, dtype=float), (n_users,)).copy()
        idx = np.arange(n_users)
        a[:, idx, idx] = 0.0
        for arr in (w, a, z, masks, budgets):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "gains", a)
        object.__setattr__(self, "noise", z)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "budgets", budgets)
        if self.constraint_mode not in CONSTRAINT_MODES:
            raise ScenarioError(f"unknown constraint_mode {self.constraint_mode!r}")
        problems = self.validate()
        if problems:
            raise ScenarioError("; ".join(problems))

    @property
    def num_users(self) -> int:
        return self.weights.size

    @property
    def num_tones(self) -> int:
        return self.gains.shape[0]

    def validate(self) -> list[str]:
        out = []
        if np.any(self.weights < 0) or not self.weights.sum() > 0:
            out.append("weights must be nonnegative with positive sum")
        if np.any(self.gains < 0) or not np.all(np.isfinite(self.gains)):
            out.append("gains must be finite and nonnegative")
        if not np.all(self.noise > 0):
            out.append("noise must be positive")
        if not np.all(self.masks > 0):
            out.append("masks must be positive")
        if not np.all(self.budgets > 0):
            out.append("budgets must be positive")
        if self.constraint_mode == EQUALITY:
            short = np.flatnonzero(self.budgets > self.masks.sum(axis=0))
            if short.size:
                out.append(f"budgets exceed total mask for users {short.tolist()}")
        if self.tone_spacing <= 0 or self.symbol_rate <= 0:
            out.append("tone_spacing and symbol_rate must be positive")
        return out

    def with_mode(self, constraint_mode: str) -> "Scenario":
        return Scenario(
            self.weights, self.gains, self.noise, self.masks, self.budgets,
            self.tone_spacing, self.symbol_rate, constraint_mode, self.name, dict(self.meta),
        )


def bit_rate(scenario: Scenario, s_k, n: int, k: int, counter: BitCounter | None = None) -> float:
    """Achievable bits of user ``n`` on tone ``k`` given the tone's power column."""
    s_k = np.asarray(s_k, dtype=float)
    if s_k.shape != (scenario.num_users,):
        raise ValueError(f"expected {scenario.num_users} powers, got {s_k.shape}")
    if np.any(s_k < 0):
        raise ValueError("negative transmit power")
    interference = float(scenario.gains[k, n] @ s_k) + scenario.noise[k, n]
    if counter is not None:
        counter.add(1)
    return math.log2(1.0 + s_k[n] / interference)


def bit_loading(scenario: Scenario, spectra, counter: BitCounter | None = None) -> np.ndarray:
    """Bits per tone and user, shape [K][N]."""
    s = _check_dims(scenario, spectra)
    interference = np.einsum("knm,km->kn", scenario.gains, s) + scenario.noise
    if counter is not None:
        counter.add(s.size)
    return np.log2(1.0 + s / interference)


def tone_objective(scenario: Scenario, spectra, counter: BitCounter | None = None) -> np.ndarray:
    """Weighted bit sum per tone."""
    return bit_loading(scenario, spectra, counter) @ scenario.weights


def weighted_objective(scenario: Scenario, spectra, counter: BitCounter | None = None) -> float:
    """Weighted sum of bits per DMT symbol over all users and tones."""
    return float(np.sum(tone_objective(scenario, spectra, counter)))


def user_rates(scenario: Scenario, spectra) -> np.ndarray:
    return bit_loading(scenario, spectra).sum(axis=0)


def to_bitrate_bps(bits_per_symbol: float, scenario: Scenario) -> float:
    return scenario.symbol_rate * bits_per_symbol


@dataclass
class FeasibilityReport:
    mask_violations: list = field(default_factory=list)
    power_violations: list = field(default_factory=list)
    negativity_violations: list = field(default_factory=list)

    def __bool__(self):
        # truthy when something is wrong
        return bool(self.mask_violations or self.power_violations or self.negativity_violations)

    @property
    def ok(self) -> bool:
        return not self

    def as_dict(self) -> dict:
        return {
            "mask_violations": self.mask_violations,
            "power_violations": self.power_violations,
            "negativity_violations": self.negativity_violations,
        }


def check_feasible(scenario: Scenario, spectra, rtol: float = POWER_RTOL) -> FeasibilityReport:
    """Report every violated constraint.  Entries are (tone, user) or (user, total)."""
    s = _check_dims(scenario, spectra)
    report = FeasibilityReport()
    for k, n in zip(*np.nonzero(s < 0)):
        report.negativity_violations.append((int(k), int(n)))
    for k, n in zip(*np.nonzero(s > scenario.masks)):
        report.mask_violations.append((int(k), int(n)))
    totals = s.sum(axis=0)
    for n, (p, budget) in enumerate(zip(totals, scenario.budgets)):
        if scenario.constraint_mode == EQUALITY:
            bad = abs(p - budget) > rtol * budget
        else:
            bad = p > budget * (1.0 + rtol)
        if bad:
            report.power_violations.append((n, float(p)))
    return report


def _check_dims(scenario: Scenario, spectra) -> np.ndarray:
    s = np.asarray(spectra, dtype=float)
    if s.shape != (scenario.num_tones, scenario.num_users):
        raise ValueError(
            f"spectra shape {s.shape} does not match scenario "
            f"({scenario.num_tones}, {scenario.num_users})"
        )
    return s


# -- JSON boundary -----------------------------------------------------------

def _uniform_or_list(arr: np.ndarray):
    flat = arr.reshape(-1)
    if flat.size and np.all(flat == flat[0]):
        return float(flat[0])
    return arr.tolist()


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    df = scenario.tone_spacing
    masks = mw_to_psd(scenario.masks, df)
    if np.all(masks == masks[:, :1]):
        masks_out = _uniform_or_list(masks[:, 0])
    else:
        masks_out = masks.tolist()
    out = {
        "name": scenario.name,
        "num_users": scenario.num_users,
        "num_tones": scenario.num_tones,
        "weights": scenario.weights.tolist(),
        "budgets_dbm": mw_to_dbm(scenario.budgets).tolist(),
        "masks_dbm_hz": masks_out,
        "tone_spacing_hz": float(df),
        "symbol_rate_hz": float(scenario.symbol_rate),
        "constraint_mode": scenario.constraint_mode,
        "gains": scenario.gains.tolist(),
        "noise_dbm_hz": mw_to_psd(scenario.noise, df).tolist(),
    }
    if scenario.meta:
        out["meta"] = scenario.meta
    return out


def scenario_from_dict(doc: dict[str, Any]) -> Scenario:
    try:
        n_users = int(doc["num_users"])
        k_tones = int(doc["num_tones"])
        df = float(doc["tone_spacing_hz"])
        masks = np.asarray(doc["masks_dbm_hz"], dtype=float)
        if masks.ndim == 1:
            masks = masks[:, None]
        gains = np.asarray(doc["gains"], dtype=float).reshape(k_tones, n_users, n_users)
        return Scenario(
            weights=doc["weights"],
            gains=gains,
            noise=psd_to_mw(doc["noise_dbm_hz"], df),
            masks=np.broadcast_to(psd_to_mw(masks, df), (k_tones, n_users)),
            budgets=dbm_to_mw(doc["budgets_dbm"]),
            tone_spacing=df,
            symbol_rate=float(doc["symbol_rate_hz"]),
            constraint_mode=doc.get("constraint_mode", EQUALITY),
            name=doc.get("name", ""),
            meta=dict(doc.get("meta", {})),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document missing field {exc}") from None


def scenario_to_json(scenario: Scenario) -> str:
    # json emits repr() floats: shortest round-tripping form, 17 significant digits max
    return json.dumps(scenario_to_dict(scenario), indent=1)


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(scenario_to_json(scenario), encoding="utf-8")


def load_scenario(path) -> Scenario:
    return scenario_from_json(Path(path).read_text(encoding="utf-8"))


def fit_total(x, mask, total: float, max_rounds: int = 32) -> np.ndarray:
    """Clip ``x`` into ``[0, mask]`` and rescale it to sum to ``total``.

    Surplus or deficit is spread proportionally over the tones that can still
    absorb it.  Raises if ``total`` is not reached within ``max_rounds``.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, mask)
    mask = np.broadcast_to(np.asarray(mask, dtype=float), x.shape)
    if total > mask.sum() * (1 + 1e-12):
        raise ValueError(f"total {total} exceeds the sum of masks {mask.sum()}")
    for _ in range(max_rounds):
        gap = total - x.sum()
        if abs(gap) <= 1e-13 * total:
            return x
        if gap > 0:
            free = x < mask
            share = np.where(free, x, 0.0)
            if not share.sum() > 0:
                share = np.where(free, mask - x, 0.0)
        else:
            share = x.copy()
        x = np.clip(x + gap * share / share.sum(), 0.0, mask)
    if abs(total - x.sum()) <= 1e-9 * total:
        return x
    raise ValueError(f"could not fit spectrum to total {total} within {max_rounds} rounds")
