"""Command line entry point: ``rtdsm``."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import harness
from .baselines import IsbConfig
from .dov import TRANSFORM_NAMES
from .ipdb import INIT_POWERS, TONE_ORDERS, SolverConfig
from .model import mw_to_dbm, save_scenario, scenario_to_json
from .scenarios import NAMED, gen_named


def parse_eq(value: str) -> int:
    """``off`` -> 0, ``every:M`` -> M."""
    value = value.strip().lower()
    if value in ("off", "0"):
        return 0
    if value.startswith("every:"):
        try:
            m = int(value.split(":", 1)[1])
        except ValueError:
            m = -1
        if m >= 1:
            return m
    raise click.BadParameter(f"expected 'off' or 'every:M', got {value!r}")


def parse_budgets(value: str) -> list[int]:
    try:
        out = [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None
    if not out or min(out) < 1:
        raise click.BadParameter("budgets must be positive integers")
    return out


def solver_options(f):
    opts = [
        click.option("--scenario", "scenario", required=True, help="Named fixture or scenario JSON file."),
        click.option("--tones", type=int, default=None, help="Shrink a named fixture to this many tones."),
        click.option("--algorithm", type=click.Choice(harness.ALGORITHMS), default="ipdb", show_default=True),
        click.option("--transform", type=click.Choice(TRANSFORM_NAMES), default="two-tone-rand", show_default=True),
        click.option("--transform-seed", type=int, default=0, show_default=True),
        click.option("--tone-order", type=click.Choice(TONE_ORDERS), default="to1", show_default=True),
        click.option("--init", "init_power", type=click.Choice(INIT_POWERS), default="ep", show_default=True),
        click.option("--delta-db", type=float, default=None, help="Grid step (default 1.0 for ipdb, 0.5 for isb)."),
        click.option("--inner", type=int, default=1, show_default=True),
        click.option("--eq", "eq", default="off", show_default=True, help="'off' or 'every:M'."),
        click.option("--inequality/--no-inequality", default=False, show_default=True),
        click.option("--alpha", type=float, default=1.1, show_default=True),
        click.option("--beta", type=float, default=0.8, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--max-outer", type=int, default=None, help="Outer iteration cap (200 ipdb, 20 isb)."),
        click.option("--budget-updates", type=int, default=None, help="Stop ipdb after this many updates."),
        click.option("--quanta", type=int, default=4, show_default=True, help="Oracle power quanta."),
        click.option("--reps", type=int, default=1, show_default=True, help="Seeded repetitions."),
        click.option("--workers", type=int, default=1, show_default=True),
        click.option("--label", default="", help="Config label in reports."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def build_spec(opts: dict, output_dir: str | None = None) -> harness.ExperimentSpec:
    solver = SolverConfig(
        tone_order=opts["tone_order"], init_power=opts["init_power"],
        delta_db=opts["delta_db"] or 1.0, inner_iters=opts["inner"],
        equalize_every=parse_eq(opts["eq"]), inequality=opts["inequality"],
        alpha=opts["alpha"], beta=opts["beta"], max_outer=opts["max_outer"] or 200,
        update_budget=opts["budget_updates"], seed=opts["seed"],
    )
    isb = IsbConfig(
        delta_db=opts["delta_db"] or 0.5, init_power=opts["init_power"],
        max_outer=opts["max_outer"] or 20, seed=opts["seed"],
    )
    harness.resolve_scenario(opts["scenario"], opts["tones"])
    return harness.ExperimentSpec(
        scenario=opts["scenario"], algorithm=opts["algorithm"], transform=opts["transform"],
        transform_seed=opts["transform_seed"], solver=solver, isb=isb,
        repetitions=opts["reps"], oracle_quanta=opts["quanta"], num_tones=opts["tones"],
        label=opts["label"], output_dir=output_dir, workers=opts["workers"],
    )


def _fail(exc: Exception):
    raise click.ClickException(str(exc)) from exc


@click.group()
def main():
    """Real-time dynamic spectrum management experiments."""


@main.group()
def scenario():
    """Generate or inspect scenarios."""


@scenario.command("gen")
@click.argument("name", type=click.Choice(NAMED))
@click.option("--tones", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False), default=None, help="Write JSON here (default stdout).")
def scenario_gen(name, tones, seed, out):
    """Build a named fixture and write it as JSON."""
    sc = gen_named(name, num_tones=tones, seed=seed)
    if out is None:
        click.echo(scenario_to_json(sc))
    else:
        save_scenario(sc, out)
        click.echo(f"wrote {out}")


@scenario.command("show")
@click.argument("ref")
@click.option("--tones", type=int, default=None)
def scenario_show(ref, tones):
    """Summarize a named fixture or scenario file."""
    try:
        sc = harness.resolve_scenario(ref, tones)
    except ValueError as exc:
        _fail(exc)
    click.echo(f"name: {sc.name or '-'}")
    click.echo(f"users: {sc.num_users}  tones: {sc.num_tones}  mode: {sc.constraint_mode}")
    click.echo(f"tone spacing: {sc.tone_spacing:g} Hz  symbol rate: {sc.symbol_rate:g} Hz")
    click.echo("weights: " + " ".join(f"{w:.4g}" for w in sc.weights))
    click.echo("budgets (dBm): " + " ".join(f"{p:.2f}" for p in mw_to_dbm(sc.budgets)))
    worst = 10 * np.log10(np.max(sc.gains, axis=(0, 2)) + 1e-300)
    click.echo("max normalized crosstalk (dB): " + " ".join(f"{v:.1f}" for v in worst))


@main.command()
@solver_options
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help=f"Output directory (default ${harness.OUTPUT_ENV} or ./rtdsm-out).")
def run(out, **opts):
    """Run one configuration and print its report as JSON."""
    out = out or str(harness.default_output_dir())
    try:
        spec = build_spec(opts, out)
        report = harness.run_experiment(spec)
    except ValueError as exc:
        _fail(exc)
    click.echo(report.to_json())


@main.command()
@click.argument("spec_files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--reference", default=None, help="Label of the reference config (default: first).")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def compare(spec_files, reference, out):
    """Run several ExperimentSpec JSON files and report relative complexity."""
    out = out or str(harness.default_output_dir())
    try:
        specs = [harness.ExperimentSpec.from_json(Path(p).read_text(encoding="utf-8")) for p in spec_files]
        report = harness.compare(specs, reference, out)
    except (ValueError, TypeError) as exc:
        _fail(exc)
    click.echo(report.to_json())


@main.command()
@solver_options
@click.option("--budgets", default="1,10,100", show_default=True, help="Comma-separated update budgets.")
@click.option("-o", "--out", type=click.Path(dir_okay=False), default=None, help="CSV path (default stdout).")
def anytime(budgets, out, **opts):
    """Stop IPDB after each update budget and report feasibility and objective."""
    if opts["algorithm"] != "ipdb":
        _fail(harness.UnsupportedError(
            f"anytime probes need ipdb; {opts['algorithm']} iterates are not feasible until convergence"))
    try:
        spec = build_spec(opts)
        rows = harness.anytime_report(spec, parse_budgets(budgets))
    except ValueError as exc:
        _fail(exc)
    text = harness.anytime_to_csv(rows)
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")


@main.command()
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(harness.PLOT_KINDS), required=True)
@click.option("--scenario", "scenario_ref", default=None, help="Needed for spectra and bit-loading.")
@click.option("--tones", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def plotdata(traces, kind, scenario_ref, tones, out):
    """Turn JSONL traces into CSV tables for external plotting."""
    out = out or str(harness.default_output_dir() / "plots")
    try:
        loaded = [harness.trace_from_jsonl(Path(p).read_text(encoding="utf-8")) for p in traces]
        sc = harness.resolve_scenario(scenario_ref, tones) if scenario_ref else None
        paths = harness.emit_plot_data(loaded, kind, out, sc)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        _fail(exc)
    for p in paths:
        click.echo(str(p))


if __name__ == "__main__":
    main()
