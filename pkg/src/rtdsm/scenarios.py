"""Synthetic DSL and two-cell wireless scenarios.

DSL channels use a sqrt(f)*L insertion-loss law and the 1% worst-case FEXT
model; the wireless setting uses a log-distance pathloss with seeded
multipath.  Both are deterministic functions of their topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import EQUALITY, INEQUALITY, Scenario, dbm_to_mw, psd_to_mw

FEET_PER_METER = 3.280839895
K_FEXT = 8.536e-19
ATTEN_DB_PER_KM_SQRT_MHZ = 14.0
DSL_GAP_DB = 12.9
DSL_NOISE_DBM_HZ = -140.0
DEFAULT_MASK_DBM_HZ = -30.0

NAMED = ("near-far-adsl", "adsl2plus-12user", "vdsl-6user-upstream", "lte-macro-femto")


@dataclass
class DslTopology:
    """Lines sharing one binder.

    A line starts ``offsets_m[n]`` metres from the central office (0 for CO
    lines, the cabinet distance for remote terminals) and runs
    ``lengths_m[n]`` metres towards its customer.
    """

    lengths_m: Sequence[float]
    offsets_m: Sequence[float] | None = None
    num_tones: int = 224
    first_tone_hz: float = 32 * 4312.5
    tone_spacing: float = 4312.5
    symbol_rate: float = 4000.0
    direction: str = "downstream"
    weights: Sequence[float] | None = None
    budget_dbm: float | Sequence[float] = 20.4
    mask_dbm_hz: float = DEFAULT_MASK_DBM_HZ
    noise_dbm_hz: float = DSL_NOISE_DBM_HZ
    gap_db: float = DSL_GAP_DB
    atten_db: float = ATTEN_DB_PER_KM_SQRT_MHZ
    k_fext: float = K_FEXT
    constraint_mode: str = EQUALITY
    name: str = ""

    def __post_init__(self):
        n = len(self.lengths_m)
        if n < 1 or any(not L > 0 for L in self.lengths_m):
            raise ValueError("line lengths must be positive")
        if self.offsets_m is None:
            self.offsets_m = [0.0] * n
        if len(self.offsets_m) != n or any(o < 0 for o in self.offsets_m):
            raise ValueError("need one nonnegative offset per line")
        if self.num_tones < 2:
            raise ValueError("need at least 2 tones")
        if self.direction not in ("downstream", "upstream"):
            raise ValueError("direction must be downstream or upstream")

    def frequencies(self) -> np.ndarray:
        return self.first_tone_hz + self.tone_spacing * np.arange(self.num_tones)


def direct_gain(freq_hz, length_m: float, atten_db: float = ATTEN_DB_PER_KM_SQRT_MHZ) -> np.ndarray:
    """Power gain of a line: ``-atten * L[km] * sqrt(f[MHz])`` dB."""
    f = np.asarray(freq_hz, dtype=float)
    return 10.0 ** (-atten_db * (length_m / 1000.0) * np.sqrt(f / 1e6) / 10.0)


def _overlap(a0, a1, b0, b1) -> tuple[float, float]:
    return max(a0, b0), min(a1, b1)


def fext_path(topo: DslTopology, victim: int, disturber: int) -> tuple[float, float]:
    """Coupling length and total attenuating path length (m) from ``disturber`` into ``victim``."""
    o_v, L_v = topo.offsets_m[victim], topo.lengths_m[victim]
    o_d, L_d = topo.offsets_m[disturber], topo.lengths_m[disturber]
    start, end = _overlap(o_v, o_v + L_v, o_d, o_d + L_d)
    if end <= start:
        return 0.0, 0.0
    if topo.direction == "downstream":
        # disturber transmitter -> end of shared section -> victim receiver
        path = (end - o_d) + (o_v + L_v - end)
    else:
        path = (o_d + L_d - start) + (start - o_v)
    return end - start, path


def gen_dsl(topo: DslTopology) -> Scenario:
    f = topo.frequencies()
    N, K = len(topo.lengths_m), topo.num_tones
    gap = 10.0 ** (topo.gap_db / 10.0)
    sigma2 = psd_to_mw(topo.noise_dbm_hz, topo.tone_spacing)
    direct = np.column_stack([direct_gain(f, L, topo.atten_db) for L in topo.lengths_m])
    gains = np.zeros((K, N, N))
    for n in range(N):
        for m in range(N):
            if m == n:
                continue
            coupling_m, path_m = fext_path(topo, n, m)
            if coupling_m == 0.0:
                continue
            g_x = topo.k_fext * f**2 * (coupling_m * FEET_PER_METER) * direct_gain(f, path_m, topo.atten_db)
            gains[:, n, m] = gap * np.minimum(1.0, g_x) / direct[:, n]
    noise = gap * sigma2 / direct
    weights = np.full(N, 1.0 / N) if topo.weights is None else np.asarray(topo.weights, dtype=float)
    budgets = dbm_to_mw(np.broadcast_to(np.asarray(topo.budget_dbm, dtype=float), (N,)))
    masks = np.full((K, N), psd_to_mw(topo.mask_dbm_hz, topo.tone_spacing))
    return Scenario(
        weights, gains, noise, masks, budgets,
        topo.tone_spacing, topo.symbol_rate, topo.constraint_mode, topo.name,
        {"generator": "dsl", "first_tone_hz": topo.first_tone_hz, "direction": topo.direction},
    )


@dataclass
class CellTopology:
    """Two or more cells on shared subcarriers, one scheduled user per cell.

    ``distances_m[n][m]`` is the distance between user ``n`` and the base
    station of cell ``m``.
    """

    bs_power_dbm: Sequence[float] = (43.0, 15.0)
    distances_m: Sequence[Sequence[float]] = ((500.0, 20.0), (500.0, 20.0))
    num_tones: int = 300
    tone_spacing: float = 15e3
    symbol_rate: float = 14e3
    noise_dbm_hz: float = -174.0
    pathloss_a: float = 31.5
    pathloss_b: float = 35.0
    tap_delays_s: Sequence[float] = (0.0, 200e-9, 800e-9, 1200e-9, 2300e-9, 3700e-9)
    tap_decay_db: float = 3.0
    mask_factor: float = 4.0
    weights: Sequence[float] | None = None
    seed: int = 0
    constraint_mode: str = EQUALITY
    name: str = ""

    def __post_init__(self):
        n = len(self.bs_power_dbm)
        d = np.asarray(self.distances_m, dtype=float)
        if d.shape != (n, n) or np.any(d <= 0):
            raise ValueError("distances must be a positive [N][N] matrix")


def pathloss_db(distance_m, a: float = 31.5, b: float = 35.0):
    return a + b * np.log10(np.asarray(distance_m, dtype=float))


def multipath_response(freq_hz, delays_s, decay_db: float, rng: np.random.Generator) -> np.ndarray:
    """Power response of a unit-energy tapped delay line with random phases."""
    power = 10.0 ** (-decay_db * np.arange(len(delays_s)) / 10.0)
    power /= power.sum()
    taps = np.sqrt(power) * np.exp(2j * np.pi * rng.random(len(delays_s)))
    h = np.exp(-2j * np.pi * np.outer(freq_hz, delays_s)) @ taps
    return np.abs(h) ** 2


def gen_cell(topo: CellTopology) -> Scenario:
    N, K = len(topo.bs_power_dbm), topo.num_tones
    rng = np.random.default_rng(topo.seed)
    f = (np.arange(K) - K / 2) * topo.tone_spacing
    dist = np.asarray(topo.distances_m, dtype=float)
    link = np.empty((K, N, N))  # link[k, n, m]: BS m -> user n
    for n in range(N):
        for m in range(N):
            loss = 10.0 ** (-pathloss_db(dist[n, m], topo.pathloss_a, topo.pathloss_b) / 10.0)
            link[:, n, m] = loss * multipath_response(f, topo.tap_delays_s, topo.tap_decay_db, rng)
    direct = link[:, np.arange(N), np.arange(N)]
    gains = link / direct[:, :, None]
    noise = psd_to_mw(topo.noise_dbm_hz, topo.tone_spacing) / direct
    budgets = dbm_to_mw(topo.bs_power_dbm)
    masks = np.broadcast_to(topo.mask_factor * budgets / K, (K, N))
    weights = np.full(N, 1.0 / N) if topo.weights is None else np.asarray(topo.weights, dtype=float)
    return Scenario(
        weights, gains, noise, masks, budgets,
        topo.tone_spacing, topo.symbol_rate, topo.constraint_mode, topo.name,
        {"generator": "cell", "seed": topo.seed},
    )


def near_far_topology(num_tones: int = 224) -> DslTopology:
    # user 0: 5 km CO line; user 1: remote terminal 3.5 km out, 1.5 km line
    return DslTopology(
        lengths_m=[5000.0, 1500.0], offsets_m=[0.0, 3500.0], num_tones=num_tones,
        weights=[0.9, 0.1], budget_dbm=20.4, name="near-far-adsl",
    )


def adsl2plus_topology(num_tones: int = 512) -> DslTopology:
    return DslTopology(
        lengths_m=[5000, 4000, 3000, 2000, 2000, 1000, 4800, 3800, 2800, 2300, 1500, 1300],
        offsets_m=[0, 0, 1000, 1000, 2000, 2000, 0, 0, 1200, 1200, 2400, 2400],
        num_tones=num_tones, budget_dbm=20.4, name="adsl2plus-12user",
    )


def vdsl_upstream_topology(num_tones: int = 1024) -> DslTopology:
    return DslTopology(
        lengths_m=[1200, 1000, 800, 600, 450, 300], num_tones=num_tones,
        first_tone_hz=3.75e6, direction="upstream", budget_dbm=11.5,
        constraint_mode=INEQUALITY, name="vdsl-6user-upstream",
    )


def lte_topology(num_tones: int = 300, seed: int = 0) -> CellTopology:
    # macro user at the cell edge, femto user at the same spot
    return CellTopology(num_tones=num_tones, seed=seed, name="lte-macro-femto")


def gen_named(name: str, num_tones: int | None = None, seed: int = 0) -> Scenario:
    """Build one of the named fixtures; ``num_tones`` shrinks it for quick runs."""
    kw = {} if num_tones is None else {"num_tones": num_tones}
    if name == "near-far-adsl":
        return gen_dsl(near_far_topology(**kw))
    if name == "adsl2plus-12user":
        return gen_dsl(adsl2plus_topology(**kw))
    if name == "vdsl-6user-upstream":
        return gen_dsl(vdsl_upstream_topology(**kw))
    if name == "lte-macro-femto":
        return gen_cell(lte_topology(seed=seed, **kw))
    raise ValueError(f"unknown scenario {name!r}; expected one of {NAMED}")
