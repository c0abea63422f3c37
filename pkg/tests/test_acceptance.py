"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (shown even
without ``-s``) and then asserts, runtime limit included.
"""

import filecmp
import time

import numpy as np
import pytest

from conftest import make_scenario, random_tiny
from rtdsm import harness
from rtdsm.baselines import IsbConfig, isb_run, oracle_search, waterfill
from rtdsm.dov import TRANSFORM_NAMES, DovTransform, apply, make_pattern
from rtdsm.harness import ExperimentSpec
from rtdsm.ipdb import SolverConfig, SolverState, run, stop_anytime_probe
from rtdsm.model import check_feasible, weighted_objective
from rtdsm.procedures import equalize_pass, find_spikes
from rtdsm.scenarios import DslTopology, gen_dsl, vdsl_upstream_topology

SEEDS = range(15)


@pytest.fixture
def verdict(capsys):
    def emit(n, title, ok, detail, elapsed, limit):
        ok = bool(ok) and elapsed < limit
        line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail} [{elapsed:.1f}s / {limit:g}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


@pytest.fixture(scope="module")
def isb_reference():
    """ISB (EP, 0.5 dB, EQ off) over the 15 seeds; shared by the trend criteria."""
    t0 = time.perf_counter()
    spec = ExperimentSpec(scenario="near-far-adsl", algorithm="isb", isb=IsbConfig(), repetitions=len(SEEDS))
    results = harness.run_traces(spec)
    sc = harness.resolve_scenario("near-far-adsl")
    return spec, harness.aggregate(spec, sc, results), time.perf_counter() - t0


def test_c01_conservation(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    sizes = range(3, 40)
    users = 16
    # per size: one scenario whose users carry log-uniform budgets, and a pattern pool
    scenarios = {K: make_scenario(K=K, N=users, budgets=10 ** rng.uniform(-3, 3, users)) for K in sizes}
    pools = {name: {K: [make_pattern(name, K, int(rng.integers(1 << 30))) for _ in range(4 if name == "two-tone-rand" else 1)]
                    for K in sizes} for name in TRANSFORM_NAMES}
    worst = 0.0
    for name in TRANSFORM_NAMES:
        for _ in range(1000):
            K = int(rng.integers(3, 40))
            sc, n = scenarios[K], int(rng.integers(users))
            P = sc.budgets[n]
            pool = pools[name][K]
            gamma = np.zeros((K, users))
            gamma[:, n] = rng.dirichlet(np.ones(K))
            tr = DovTransform([pool[int(rng.integers(len(pool)))]] * users, gamma)
            t = rng.uniform(-P, P, K)
            err = abs(apply(tr, t, sc, n).sum() - P * gamma[:, n].sum()) / P
            worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    verdict(1, "conservation", worst <= 1e-12, f"max relative error {worst:.2e} over 4000 samples", elapsed, 1.0)


def test_c02_anytime_feasibility(verdict, near_far):
    t0 = time.perf_counter()
    tr = harness.make_transform("two-tone-rand", near_far)
    rows = stop_anytime_probe(near_far, tr, SolverConfig(), [1, 7, 123, 10_000])
    ok = all(r[1].ok for r in rows)
    detail = ", ".join(f"U={b}: {'ok' if rep.ok else rep.as_dict()}" for b, rep, _, _ in rows)
    verdict(2, "anytime feasibility", ok, detail, time.perf_counter() - t0, 10.0)


def test_c03_monotonicity(verdict, near_far):
    t0 = time.perf_counter()
    worst, bad = 0.0, []
    for name in TRANSFORM_NAMES:
        for order in ("to1", "to2", "to3", "to4"):
            for init in ("ep", "rp"):
                cfg = SolverConfig(tone_order=order, init_power=init, seed=1, max_outer=30)
                _, trace = run(near_far, harness.make_transform(name, near_far, seed=1), cfg)
                obj = np.asarray(trace.update_objective)
                drop = np.min(np.diff(obj) / np.abs(obj[1:]))
                worst = min(worst, drop)
                if drop < -1e-12:
                    bad.append((name, order, init))
    detail = f"32 runs, worst relative step {worst:.2e}, violations {bad}"
    verdict(3, "monotonicity", not bad, detail, time.perf_counter() - t0, 120.0)


def test_c04_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    ratios = []
    for seed in range(20):
        sc = random_tiny(seed)
        opt = oracle_search(sc, 4).objective
        _, trace = run(sc, harness.make_transform("two-tone-rand", sc, seed=seed), SolverConfig(max_outer=200))
        ratios.append(trace.final_objective / opt)
    detail = f"min IPDB/oracle {min(ratios):.4f}, mean {np.mean(ratios):.4f} over 20 instances"
    verdict(4, "oracle equivalence", min(ratios) >= 0.95, detail, time.perf_counter() - t0, 30.0)


def test_c05_weighted_rate_trend(verdict, near_far, isb_reference):
    t0 = time.perf_counter()
    spec = ExperimentSpec(scenario="near-far-adsl", transform="two-tone-rand",
                          solver=SolverConfig(delta_db=1.0, equalize_every=5), repetitions=len(SEEDS))
    ipdb = harness.aggregate(spec, near_far, harness.run_traces(spec))
    _, isb, isb_time = isb_reference
    elapsed = time.perf_counter() - t0 + isb_time
    a, b = ipdb.mean_objective_bps, isb.mean_objective_bps
    detail = f"IPDB EQ on {a / 1e6:.4f} Mbps vs ISB EP {b / 1e6:.4f} Mbps ({100 * (a / b - 1):+.1f}%)"
    verdict(5, "weighted rate trend", a >= 0.98 * b, detail, elapsed, 600.0)


def test_c06_convergence_speed(verdict):
    t0 = time.perf_counter()
    spec = ExperimentSpec(scenario="near-far-adsl", solver=SolverConfig(delta_db=1.0), repetitions=len(SEEDS))
    cfg = harness.run_experiment(spec).configs[0]
    iters = [r.iters_to["0.99"] for r in cfg.runs]
    detail = f"outer iterations to 99%: mean {np.mean(iters):.2f}, max {max(iters)} over {len(iters)} seeds"
    verdict(6, "convergence speed", max(iters) <= 30 and not cfg.failed, detail, time.perf_counter() - t0, 120.0)


def test_c07_relative_complexity(verdict, near_far, isb_reference):
    t0 = time.perf_counter()
    isb_spec, isb, isb_time = isb_reference
    spec = ExperimentSpec(scenario="near-far-adsl", solver=SolverConfig(delta_db=10.0), repetitions=len(SEEDS))
    ipdb = harness.aggregate(spec, near_far, harness.run_traces(spec))
    rel = harness.relative_complexity([isb, ipdb], isb.label)[ipdb.label]["0.99"]
    elapsed = time.perf_counter() - t0 + isb_time
    detail = (f"bit evals to 99%: IPDB 10 dB {ipdb.mean_evals_to['0.99']:.3g} vs ISB "
              f"{isb.mean_evals_to['0.99']:.3g}, relative {rel:.3f}")
    verdict(7, "relative complexity", rel < 1.0, detail, elapsed, 600.0)


def test_c08_equalization(verdict):
    t0 = time.perf_counter()
    K = 64
    row = np.full(K, 1e-4)
    row[5] *= 1e2            # one-tone up spike, 20 dB
    row[15:17] *= 10 ** 2.5  # two-tone up spike, 25 dB
    row[28] *= 1e-2          # one-tone down spike
    row[41:43] *= 1e-3       # two-tone down spike, 30 dB
    row[55] *= 1e3           # one-tone up spike, 30 dB
    sc = make_scenario(K=K, N=1, weights=[1.0], budgets=row.sum(), masks=1.0)
    state = SolverState(sc, harness.make_transform("two-tone", sc, gamma=row[:, None] / row.sum()), row[:, None])
    before = find_spikes(row)
    equalize_pass(state, 0)
    equalize_pass(state, 0)
    after = find_spikes(state.s[:, 0])
    drift = abs(state.s[:, 0].sum() - row.sum()) / row.sum()
    detail = f"spikes {len(before)} -> {len(after)}, power drift {drift:.1e}"
    ok = len(before) >= 5 and not after and drift <= 1e-9
    verdict(8, "equalization", ok, detail, time.perf_counter() - t0, 1.0)


def test_c09_inequality_mode(verdict, monkeypatch):
    t0 = time.perf_counter()
    sc = gen_dsl(vdsl_upstream_topology(num_tones=128))
    violations = []
    original = SolverState.record

    def checked(self, kind):
        rep = check_feasible(self.scenario, self.s)
        if rep:
            violations.append((kind, rep.as_dict()))
        original(self, kind)

    results = {}
    for ineq in (False, True):
        monkeypatch.setattr(SolverState, "record", checked)
        s, trace = run(sc, harness.make_transform("two-tone-rand", sc), SolverConfig(inequality=ineq, max_outer=60))
        monkeypatch.setattr(SolverState, "record", original)
        results[ineq] = (trace.final_objective, s.sum(axis=0) / sc.budgets)
    frac = results[True][1]
    ok = frac.min() < 0.9 and not violations and results[True][0] >= results[False][0]
    detail = (f"power fractions {np.round(frac, 3).tolist()}, objective {results[True][0]:.1f} with vs "
              f"{results[False][0]:.1f} without, {len(violations)} infeasible updates")
    verdict(9, "inequality mode", ok, detail, time.perf_counter() - t0, 120.0)


def test_c10_single_user_baselines(verdict):
    t0 = time.perf_counter()
    instances = [make_scenario(K=2, N=1, weights=[1.0], noise=[[1.0], [0.1]], budgets=2.0, masks=2.0)]
    instances += [gen_dsl(DslTopology(lengths_m=[L], weights=[1.0], num_tones=128)) for L in (1000, 3000, 5000, 6000)]
    gaps = []
    for sc in instances:
        best = weighted_objective(sc, waterfill(sc.noise[:, 0], sc.budgets[0], sc.masks[:, 0])[:, None])
        s_isb, _ = isb_run(sc, IsbConfig())
        s_ipdb, _ = run(sc, harness.make_transform("two-tone-rand", sc), SolverConfig())
        gaps += [1 - weighted_objective(sc, s_isb) / best, 1 - weighted_objective(sc, s_ipdb) / best]
    detail = f"largest gap to waterfilling {max(gaps):.2e} (ISB and IPDB, {len(instances)} single-line instances)"
    verdict(10, "single-user sanity", max(gaps) <= 0.01, detail, time.perf_counter() - t0, 10.0)


def test_c11_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    specs = [
        ExperimentSpec(scenario="near-far-adsl", num_tones=64, repetitions=2,
                       solver=SolverConfig(tone_order="to4", init_power="rp", equalize_every=2, seed=42, max_outer=10)),
        ExperimentSpec(scenario="near-far-adsl", num_tones=64, algorithm="isb", repetitions=1, isb=IsbConfig(max_outer=3)),
    ]
    for d in ("a", "b"):
        harness.compare(specs, output_dir=tmp_path / d)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files]
    detail = f"{sum(same)}/{len(files)} files byte-identical"
    verdict(11, "determinism", files and all(same), detail, time.perf_counter() - t0, 60.0)
