"""Experiment orchestration, convergence metrics and persistence.

Traces are written as JSONL (one record per outer iteration plus a summary)
or CSV; reports as JSON.  Floats are written with ``repr`` so every artifact
reads back to identical values.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import IsbConfig, isb_run, oracle_search
from .dov import make_transform
from .ipdb import OuterRecord, RunTrace, SolverConfig, run, stop_anytime_probe
from .model import (
    Scenario,
    bit_loading,
    check_feasible,
    load_scenario,
    mw_to_psd,
    to_bitrate_bps,
)
from .scenarios import NAMED, gen_named

ALGORITHMS = ("ipdb", "isb", "oracle")
PLOT_KINDS = ("objective-evolution", "power-evolution", "spectra", "bit-loading")
OUTPUT_ENV = "RTDSM_OUTPUT_DIR"
LEVELS = (0.99, 0.999)


class UnsupportedError(ValueError):
    pass


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "rtdsm-out"))


def resolve_scenario(ref: str, num_tones: int | None = None, seed: int = 0) -> Scenario:
    if ref in NAMED:
        return gen_named(ref, num_tones=num_tones, seed=seed)
    path = Path(ref)
    if not path.exists():
        raise ValueError(f"scenario {ref!r} is neither a named fixture nor a file")
    return load_scenario(path)


# -- specs ---------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    scenario: str
    algorithm: str = "ipdb"
    transform: str = "two-tone-rand"
    transform_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    isb: IsbConfig = field(default_factory=IsbConfig)
    repetitions: int = 15
    oracle_quanta: int = 4
    num_tones: int | None = None
    scenario_seed: int = 0
    label: str = ""
    output_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if isinstance(self.solver, dict):
            self.solver = SolverConfig.from_dict(self.solver)
        if isinstance(self.isb, dict):
            self.isb = IsbConfig.from_dict(self.isb)
        if not self.label:
            self.label = self.default_label()

    def default_label(self) -> str:
        if self.algorithm == "ipdb":
            c = self.solver
            eq = f"eq{c.equalize_every}" if c.equalize_every else "eqoff"
            return f"ipdb-{self.transform}-{c.tone_order}-{c.init_power}-{c.delta_db:g}db-{eq}"
        if self.algorithm == "isb":
            return f"isb-{self.isb.init_power}-{self.isb.delta_db:g}db"
        return f"oracle-q{self.oracle_quanta}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver"] = self.solver.to_dict()
        d["isb"] = self.isb.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))


# -- convergence metrics ----------------------------------------------------------

def convergence_index(objectives: Sequence[float], level: float) -> int:
    """First outer iteration whose objective reaches ``level`` times the final one."""
    obj = np.asarray(objectives, dtype=float)
    target = level * obj[-1]
    return int(np.flatnonzero(obj >= target)[0])


@dataclass
class RunSummary:
    repetition: int
    objective: float
    outer_iterations: int
    iters_to: dict[str, int]
    evals_to: dict[str, int]
    bit_evals: int
    updates: int
    stop_reason: str
    feasible: bool


def summarize(trace: RunTrace, repetition: int, scenario: Scenario) -> RunSummary:
    obj = trace.outer_objectives()
    iters, evals = {}, {}
    for level in LEVELS:
        i = convergence_index(obj, level)
        iters[str(level)] = i
        evals[str(level)] = trace.outer[i].bit_evals
    return RunSummary(
        repetition, float(obj[-1]), len(trace.outer) - 1, iters, evals, trace.bit_evals,
        trace.num_updates(("ls", "ineq", "dual")), trace.stop_reason,
        not check_feasible(scenario, trace.final_spectra),
    )


@dataclass
class ConfigReport:
    label: str
    algorithm: str
    scenario: str
    mean_objective_bits: float
    mean_objective_bps: float
    mean_iters_to: dict[str, float]
    mean_evals_to: dict[str, float]
    runs: list[RunSummary]
    failed: list[int] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigReport":
        d = dict(d)
        d["runs"] = [RunSummary(**r) for r in d["runs"]]
        return cls(**d)


@dataclass
class ComparisonReport:
    reference: str
    configs: list[ConfigReport]
    relative_complexity: dict[str, dict[str, float]]
    note: str = "complexity relative to this package's default dual baseline settings"

    def config(self, label: str) -> ConfigReport:
        for c in self.configs:
            if c.label == label:
                return c
        raise KeyError(label)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        d = dict(d)
        d["configs"] = [ConfigReport.from_dict(c) for c in d["configs"]]
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        return cls.from_dict(json.loads(text))


# -- running ----------------------------------------------------------------------

def _oracle_trace(scenario: Scenario, quanta: int) -> tuple[np.ndarray, RunTrace]:
    from .model import BitCounter

    counter = BitCounter()
    res = oracle_search(scenario, quanta, counter)
    trace = RunTrace("oracle", scenario.num_users)
    trace.update_objective.append(res.objective)
    trace.update_power.append(res.spectra.sum(axis=0).tolist())
    trace.update_kind.append("init")
    trace.outer.append(OuterRecord(0, res.objective, res.spectra.sum(axis=0).tolist(), counter.count, 0.0, 0))
    trace.final_spectra = res.spectra
    trace.stop_reason = "exhaustive"
    trace.bit_evals = counter.count
    trace.flags["allocation"] = res.allocation.tolist()
    return res.spectra, trace


def run_once(spec: ExperimentSpec, repetition: int, scenario: Scenario | None = None):
    """One seeded repetition; returns (spectra, trace)."""
    scenario = scenario or resolve_scenario(spec.scenario, spec.num_tones, spec.scenario_seed)
    if spec.algorithm == "ipdb":
        cfg = SolverConfig(**{**spec.solver.to_dict(), "seed": spec.solver.seed + repetition})
        transform = make_transform(spec.transform, scenario, seed=spec.transform_seed + repetition)
        return run(scenario, transform, cfg)
    if spec.algorithm == "isb":
        cfg = IsbConfig(**{**spec.isb.to_dict(), "seed": spec.isb.seed + repetition})
        return isb_run(scenario, cfg)
    return _oracle_trace(scenario, spec.oracle_quanta)


def _run_rep(args):
    spec, rep = args
    try:
        return rep, run_once(spec, rep)[1], None
    except Exception as exc:  # reported per repetition
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_traces(spec: ExperimentSpec) -> list[tuple[int, RunTrace | None, str | None]]:
    jobs = [(spec, r) for r in range(spec.repetitions)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_rep, jobs))
    else:
        results = [_run_rep(j) for j in jobs]
    return sorted(results, key=lambda r: r[0])


def aggregate(spec: ExperimentSpec, scenario: Scenario, results) -> ConfigReport:
    runs, failed = [], []
    for rep, trace, err in results:
        if trace is None:
            failed.append(rep)
            continue
        runs.append(summarize(trace, rep, scenario))
    if not runs:
        raise RuntimeError(f"all repetitions of {spec.label} failed: {[r[2] for r in results]}")
    mean_obj = float(np.mean([r.objective for r in runs]))
    keys = [str(level) for level in LEVELS]
    return ConfigReport(
        spec.label, spec.algorithm, spec.scenario, mean_obj, to_bitrate_bps(mean_obj, scenario),
        {k: float(np.mean([r.iters_to[k] for r in runs])) for k in keys},
        {k: float(np.mean([r.evals_to[k] for r in runs])) for k in keys},
        runs, failed,
    )


def relative_complexity(configs: Sequence[ConfigReport], reference: str) -> dict[str, dict[str, float]]:
    ref = next(c for c in configs if c.label == reference)
    out = {}
    for c in configs:
        out[c.label] = {
            k: (1.0 if c is ref else c.mean_evals_to[k] / ref.mean_evals_to[k]) if ref.mean_evals_to[k] else float("nan")
            for k in c.mean_evals_to
        }
    return out


def compare(specs: Sequence[ExperimentSpec], reference: str | None = None,
            output_dir: str | os.PathLike | None = None) -> ComparisonReport:
    """Run every spec and report complexity relative to ``reference`` (default: first)."""
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate labels {labels}")
    reference = reference or labels[0]
    if reference not in labels:
        raise ValueError(f"reference {reference!r} not among {labels}")
    configs = []
    for spec in specs:
        scenario = resolve_scenario(spec.scenario, spec.num_tones, spec.scenario_seed)
        results = run_traces(spec)
        out = output_dir or spec.output_dir
        if out is not None:
            persist_traces(results, Path(out) / spec.label)
        configs.append(aggregate(spec, scenario, results))
    report = ComparisonReport(reference, configs, relative_complexity(configs, reference))
    if output_dir is not None:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        (Path(output_dir) / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


def run_experiment(spec: ExperimentSpec) -> ComparisonReport:
    """Run one configuration; it is its own complexity reference."""
    return compare([spec], spec.label, spec.output_dir)


def persist_traces(results, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for rep, trace, err in results:
        if trace is None:
            (directory / f"run{rep:03d}.error.txt").write_text(err or "", encoding="utf-8")
            continue
        (directory / f"run{rep:03d}.jsonl").write_text(trace_to_jsonl(trace), encoding="utf-8")
        (directory / f"run{rep:03d}.csv").write_text(trace_to_csv(trace), encoding="utf-8")


# -- anytime ------------------------------------------------------------------------

@dataclass
class AnytimeRow:
    budget: int
    feasible: bool
    objective_bits: float
    updates: int


def anytime_report(spec: ExperimentSpec, budgets: Sequence[int], repetition: int = 0) -> list[AnytimeRow]:
    if spec.algorithm != "ipdb":
        raise UnsupportedError(
            f"anytime probes need a primal solver; {spec.algorithm} iterates are not feasible until convergence"
        )
    scenario = resolve_scenario(spec.scenario, spec.num_tones, spec.scenario_seed)
    cfg = SolverConfig(**{**spec.solver.to_dict(), "seed": spec.solver.seed + repetition})
    transform = make_transform(spec.transform, scenario, seed=spec.transform_seed + repetition)
    rows = []
    for budget, report, objective, trace in stop_anytime_probe(scenario, transform, cfg, budgets):
        rows.append(AnytimeRow(budget, report.ok, objective, trace.num_updates()))
    return rows


def anytime_to_csv(rows: Sequence[AnytimeRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["budget_updates", "feasible", "objective_bits", "updates"])
    for r in rows:
        w.writerow([r.budget, int(r.feasible), repr(r.objective_bits), r.updates])
    return buf.getvalue()


def anytime_from_csv(text: str) -> list[AnytimeRow]:
    reader = csv.DictReader(io.StringIO(text))
    return [
        AnytimeRow(int(r["budget_updates"]), bool(int(r["feasible"])), float(r["objective_bits"]), int(r["updates"]))
        for r in reader
    ]


# -- trace serialization ----------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.generic):
        return x.item()
    return x


def trace_to_jsonl(trace: RunTrace) -> str:
    lines = []
    for r in trace.outer:
        lines.append(json.dumps({
            "type": "outer", "outer_iter": r.iteration, "objective_bits": r.objective,
            "user_power_mw": r.user_power, "bit_evals": r.bit_evals,
            "elapsed_ms": r.elapsed_ms, "updates": r.updates,
        }))
    lines.append(json.dumps({
        "type": "summary", "algorithm": trace.algorithm, "num_users": trace.num_users,
        "stop_reason": trace.stop_reason, "bit_evals": trace.bit_evals,
        "final_objective_bits": trace.final_objective,
        "num_updates": len(trace.update_kind),
        "final_spectra_mw": _jsonable(trace.final_spectra),
        "flags": _jsonable(trace.flags),
    }, sort_keys=True))
    return "\n".join(lines) + "\n"


def trace_from_jsonl(text: str) -> RunTrace:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    summary = next(r for r in records if r["type"] == "summary")
    trace = RunTrace(summary["algorithm"], summary["num_users"])
    for r in records:
        if r["type"] == "outer":
            trace.outer.append(OuterRecord(
                r["outer_iter"], r["objective_bits"], r["user_power_mw"],
                r["bit_evals"], r["elapsed_ms"], r["updates"],
            ))
    trace.stop_reason = summary["stop_reason"]
    trace.bit_evals = summary["bit_evals"]
    trace.final_spectra = np.asarray(summary["final_spectra_mw"], dtype=float)
    trace.flags = summary["flags"]
    trace.update_kind = ["?"] * summary["num_updates"]
    return trace


def trace_to_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["outer_iter", "objective_bits"]
               + [f"user_power_mw_{n}" for n in range(trace.num_users)] + ["bit_evals", "elapsed_ms"])
    for r in trace.outer:
        w.writerow([r.iteration, repr(r.objective)] + [repr(p) for p in r.user_power]
                   + [r.bit_evals, repr(r.elapsed_ms)])
    return buf.getvalue()


def trace_from_csv(text: str) -> list[OuterRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    n_users = sum(1 for h in header if h.startswith("user_power_mw_"))
    out = []
    for row in body:
        out.append(OuterRecord(
            int(row[0]), float(row[1]), [float(v) for v in row[2:2 + n_users]],
            int(row[2 + n_users]), float(row[3 + n_users]), 0,
        ))
    return out


# -- plot data ------------------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def plot_table(trace: RunTrace, kind: str, scenario: Scenario | None = None) -> str:
    """CSV text for one trace; spectra and bit-loading need the scenario."""
    N = trace.num_users
    if kind == "objective-evolution":
        return _csv_text(
            ["outer_iter", "objective_bits", "bit_evals", "elapsed_ms"],
            [(r.iteration, float(r.objective), r.bit_evals, float(r.elapsed_ms)) for r in trace.outer],
        )
    if kind == "power-evolution":
        return _csv_text(
            ["outer_iter"] + [f"user_power_mw_{n}" for n in range(N)],
            [(r.iteration, *map(float, r.user_power)) for r in trace.outer],
        )
    if scenario is None:
        raise ValueError(f"{kind} data needs the scenario")
    s = np.asarray(trace.final_spectra, dtype=float)
    if kind == "spectra":
        psd = mw_to_psd(s, scenario.tone_spacing)
        header = ["tone"] + [f"s_mw_{n}" for n in range(N)] + [f"psd_dbm_hz_{n}" for n in range(N)]
        return _csv_text(header, [(k, *map(float, s[k]), *map(float, psd[k])) for k in range(s.shape[0])])
    if kind == "bit-loading":
        bits = bit_loading(scenario, s)
        return _csv_text(["tone"] + [f"bits_{n}" for n in range(N)],
                         [(k, *map(float, bits[k])) for k in range(s.shape[0])])
    raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")


def read_spectra_csv(text: str) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(text)))
    cols = [i for i, h in enumerate(rows[0]) if h.startswith("s_mw_")]
    return np.array([[float(r[i]) for i in cols] for r in rows[1:]])


def emit_plot_data(traces: Sequence[RunTrace], kind: str, directory, scenario: Scenario | None = None,
                   prefix: str = "run") -> list[Path]:
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    if not traces:
        raise ValueError("no traces")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, trace in enumerate(traces):
        path = directory / f"{prefix}{i:03d}-{kind}.csv"
        path.write_text(plot_table(trace, kind, scenario), encoding="utf-8")
        paths.append(path)
    return paths
