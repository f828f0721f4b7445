"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 infeasibility (undersized battery without external resources).
"""

from __future__ import annotations

import json
import sys
from datetime import datetime
from pathlib import Path

import click

from batterypool.battery import BatterySpec, dispatch_from_csv, dispatch_to_csv
from batterypool.costs import CostParameters
from batterypool.cso import (
    CsoScenario,
    cso_profit,
    default_sweep_grid,
    min_tracking_size,
    sweep_sizes,
    tracking_offset,
)
from batterypool.data import CohortConfig, DEFAULT_ZONES, load_meter_csv, save_meter_csv, synth_cohort
from batterypool.errors import ConfigurationError, DataError, InfeasibleError
from batterypool.experiment import (
    StageError,
    load_config,
    run_experiment,
    validate_config,
    write_curve_csv,
    write_decisions_csv,
    write_histogram_csv,
    _dump_json,
    _stats_dict,
)
from batterypool.household import cohort_decisions, menu_from_json
from batterypool.metrics import blocking_distribution, blocking_probability
from batterypool.multiservice import (
    EnvelopeStats,
    envelope_from_csv,
    envelope_to_csv,
    project_follow_envelope,
    synth_envelope,
)
from batterypool.series import series_from_csv, series_to_csv
from batterypool.tariff import build_calendar, expand_tariff, tariff_from_json

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_CONFIG


def _run(fn):
    try:
        fn()
    except Exception as exc:  # noqa: BLE001 - single reporting point
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))


@click.group()
def main() -> None:
    """Shared-battery simulation toolkit."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Cohort config JSON (fields of the experiment 'cohort' block).")
@click.option("--n", "n_households", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--start", default="2021-01-01", show_default=True)
@click.option("--hours", type=int, default=8760, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def synth(config_path, n_households, seed, start, hours, out_dir) -> None:
    """Generate a synthetic cohort (load.csv, pv.csv, irradiance per zone)."""

    def body() -> None:
        if config_path:
            raw = json.loads(Path(config_path).read_text())
            cc = CohortConfig(
                n_households=int(raw.get("n_households", n_households)),
                climate_zones=tuple((z, float(w)) for z, w in raw.get("climate_zones", DEFAULT_ZONES)),
                annual_kwh_median=float(raw.get("annual_kwh_median", 5400.0)),
                annual_kwh_sigma=float(raw.get("annual_kwh_sigma", 0.55)),
                pv_zero_net_energy=bool(raw.get("pv_zero_net_energy", True)),
                seed=int(raw.get("seed", seed)),
                start=datetime.fromisoformat(raw.get("start", start)),
                hours=int(raw.get("hours", hours)),
            )
        else:
            cc = CohortConfig(
                n_households=n_households, seed=seed,
                start=datetime.fromisoformat(start), hours=hours,
            )
        profiles, irradiance = synth_cohort(cc)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_meter_csv(profiles, out / "load.csv", "load")
        save_meter_csv(profiles, out / "pv.csv", "pv")
        for zone, series in sorted(irradiance.items()):
            series_to_csv(series, out / f"irradiance_{zone}.csv")
        click.echo(f"wrote {len(profiles)} households to {out}")

    _run(body)


@main.command()
@click.option("--profiles", "profiles_dir", type=click.Path(exists=True), required=True,
              help="Directory holding load.csv (and optionally pv.csv).")
@click.option("--tariff", "tariff_path", type=click.Path(exists=True), required=True)
@click.option("--menu", "menu_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default="decisions.csv", show_default=True)
@click.option("--aggregate-out", type=click.Path(), default=None,
              help="Also write the aggregated virtual command series.")
@click.option("--threads", type=int, default=1, show_default=True)
def household(profiles_dir, tariff_path, menu_path, out_path, aggregate_out, threads) -> None:
    """Solve contract selection and operation for every household."""

    def body() -> None:
        pdir = Path(profiles_dir)
        pv = pdir / "pv.csv"
        profiles = load_meter_csv(pdir / "load.csv", pv if pv.exists() else None)
        tariff = tariff_from_json(tariff_path)
        menu = menu_from_json(menu_path)
        decisions = cohort_decisions(profiles, tariff, menu, n_jobs=threads)
        write_decisions_csv(decisions, Path(out_path))
        if aggregate_out:
            from batterypool.cso import aggregate_schedules

            series_to_csv(aggregate_schedules([d.dispatch for d in decisions]), Path(aggregate_out))
        adopted = sum(1 for d in decisions if d.chosen.capacity > 0)
        click.echo(f"{len(decisions)} households, {adopted} adopted; wrote {out_path}")

    _run(body)


def _read_revenue(decisions_path: str) -> tuple[float, float]:
    import csv as _csv

    revenue = 0.0
    c_virtual = 0.0
    with open(decisions_path, newline="") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            revenue += float(row["fee"])
            c_virtual += float(row["capacity_kwh"])
    return revenue, c_virtual


@main.command()
@click.option("--aggregate", "aggregate_path", type=click.Path(exists=True), required=True,
              help="Aggregated virtual command CSV (timestamp,value,unit).")
@click.option("--decisions", "decisions_path", type=click.Path(exists=True), required=True)
@click.option("--tariff", "tariff_path", type=click.Path(exists=True), required=True)
@click.option("--mode", type=click.Choice(["no-external", "external"]), default="external", show_default=True)
@click.option("--ratio", type=click.Choice(["2", "4"]), default="4", show_default=True)
@click.option("--sweep/--no-sweep", default=True, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default="outcome.json", show_default=True)
@click.option("--curve", "curve_path", type=click.Path(), default=None)
@click.option("--dispatch-out", type=click.Path(), default=None)
@click.option("--cost-model", "cost_model_path", type=click.Path(exists=True), default=None)
def cso(aggregate_path, decisions_path, tariff_path, mode, ratio, sweep,
        out_path, curve_path, dispatch_out, cost_model_path) -> None:
    """Size and operate the physical battery against an aggregate command."""

    def body() -> None:
        aggregate = series_from_csv(aggregate_path)
        tariff = tariff_from_json(tariff_path)
        revenue, c_virtual = _read_revenue(decisions_path)
        ratio_f = float(ratio)
        params = _cost_params(cost_model_path)
        buy, sell = expand_tariff(tariff, aggregate.start, len(aggregate))
        doc: dict = {"mode": mode, "ratio": ratio_f, "revenue": revenue, "c_virtual_kwh": c_virtual}
        if mode == "no-external":
            battery = min_tracking_size(aggregate, ratio_f)
            outcome = cso_profit(
                CsoScenario(aggregate, battery, ratio_f, buy, sell, allow_external=False),
                revenue, params,
            )
        else:
            if c_virtual <= 0:
                raise DataError("decisions carry no adopted virtual capacity")
            result = sweep_sizes(
                aggregate, revenue, ratio_f, default_sweep_grid(c_virtual),
                params, buy=buy, sell=sell, c_virtual=c_virtual,
            )
            outcome = result.best
            if sweep and curve_path:
                write_curve_csv(result, Path(curve_path))
        doc["battery"] = {
            "capacity_kwh": outcome.battery.capacity,
            "rate_kw": outcome.battery.rate,
            "initial_soc_kwh": outcome.battery.initial_soc,
        }
        doc.update(
            investment=outcome.investment,
            blocking_cost=outcome.blocking_cost,
            profit=outcome.profit,
            blocking_probability=blocking_probability(outcome.dispatch.mismatch),
        )
        if dispatch_out:
            dispatch_to_csv(outcome.dispatch, Path(dispatch_out))
        _dump_json(doc, Path(out_path))
        click.echo(f"profit {outcome.profit:.0f} $/yr; wrote {out_path}")

    _run(body)


def _cost_params(path: str | None) -> CostParameters:
    if not path:
        return CostParameters()
    raw = json.loads(Path(path).read_text())
    raw = raw.get("cost_model", raw)
    return CostParameters(
        power_cost=float(raw.get("power_cost", 175.0)),
        energy_cost=float(raw.get("energy_cost", 395.0)),
        annualization_factor=float(raw.get("annualization_factor", 0.1328)),
    )


@main.command()
@click.option("--load", "load_path", type=click.Path(exists=True), required=True,
              help="Load series CSV (timestamp,value,unit).")
@click.option("--pv", "pv_path", type=click.Path(exists=True), default=None)
@click.option("--action", "action_path", type=click.Path(exists=True), default=None,
              help="Virtual battery schedule CSV; omitted means no battery.")
@click.option("--tariff", "tariff_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default="bill.json", show_default=True)
def bill(load_path, pv_path, action_path, tariff_path, out_path) -> None:
    """Compute one household's bill from load, PV and battery action."""

    def body() -> None:
        from batterypool.billing import compute_bill, net_demand
        from batterypool.series import KWH, constant_series

        load = series_from_csv(load_path)
        zero = constant_series(load.start, len(load), 0.0, KWH)
        pv = series_from_csv(pv_path) if pv_path else zero
        action = series_from_csv(action_path) if action_path else zero
        tariff = tariff_from_json(tariff_path)
        breakdown = compute_bill(net_demand(load, pv, action), tariff)
        _dump_json(
            {
                "total": breakdown.total,
                "purchased_energy_kwh": breakdown.purchased_energy,
                "injected_energy_kwh": breakdown.injected_energy,
            },
            Path(out_path),
        )
        click.echo(f"total {breakdown.total:.2f} $; wrote {out_path}")

    _run(body)


@main.command()
@click.option("--dispatch", "dispatch_path", type=click.Path(exists=True), required=True)
@click.option("--tariff", "tariff_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), default="metrics.json", show_default=True)
@click.option("--histogram", "histogram_path", type=click.Path(), default=None)
def metrics(dispatch_path, tariff_path, out_path, histogram_path) -> None:
    """Blocking statistics for a dispatch CSV."""

    def body() -> None:
        dispatch = dispatch_from_csv(dispatch_path)
        tariff = tariff_from_json(tariff_path)
        calendar = build_calendar(tariff, dispatch.mismatch.start, len(dispatch.mismatch))
        stats = blocking_distribution(dispatch.mismatch, calendar)
        _dump_json(_stats_dict(stats), Path(out_path))
        if histogram_path:
            write_histogram_csv(stats, Path(histogram_path))
        click.echo(f"blocking probability {stats.probability:.4f}; wrote {out_path}")

    _run(body)


@main.command()
@click.option("--aggregate", "aggregate_path", type=click.Path(exists=True), required=True)
@click.option("--tariff", "tariff_path", type=click.Path(exists=True), required=True)
@click.option("--capacity", type=float, required=True, help="Physical battery capacity (kWh).")
@click.option("--ratio", type=click.Choice(["2", "4"]), default="4", show_default=True)
@click.option("--envelope", "envelope_path", type=click.Path(exists=True), default=None,
              help="Residual envelope CSV; omit to synthesize one.")
@click.option("--synth", "synth_flag", is_flag=True, help="Synthesize the envelope.")
@click.option("--full-fraction", type=float, default=0.87, show_default=True)
@click.option("--zero-fraction", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default="multiservice.json", show_default=True)
@click.option("--envelope-out", type=click.Path(), default=None)
@click.option("--dispatch-out", type=click.Path(), default=None)
def multiservice(aggregate_path, tariff_path, capacity, ratio, envelope_path, synth_flag,
                 full_fraction, zero_fraction, seed, out_path, envelope_out, dispatch_out) -> None:
    """Run the shared service inside a congestion-management envelope."""

    def body() -> None:
        if not envelope_path and not synth_flag:
            raise ConfigurationError("provide --envelope FILE or --synth")
        aggregate = series_from_csv(aggregate_path)
        tariff = tariff_from_json(tariff_path)
        ratio_f = float(ratio)
        battery = BatterySpec(
            capacity=capacity,
            rate=capacity / ratio_f,
            initial_soc=min(max(tracking_offset(aggregate), 0.0), capacity),
        )
        if envelope_path:
            envelope = envelope_from_csv(envelope_path)
        else:
            envelope = synth_envelope(
                aggregate.start, len(aggregate), battery,
                EnvelopeStats(full_fraction, zero_fraction, 0.0),
                seed=seed,
            )
        dispatch = project_follow_envelope(aggregate, battery, envelope)
        buy, sell = expand_tariff(tariff, aggregate.start, len(aggregate))
        from batterypool.cso import blocking_cost as _bc
        from batterypool.multiservice import envelope_stats as _es

        realized = _es(envelope, battery)
        doc = {
            "battery": {"capacity_kwh": battery.capacity, "rate_kw": battery.rate},
            "blocking_cost": _bc(dispatch.mismatch, buy, sell),
            "blocking_probability": blocking_probability(dispatch.mismatch),
            "envelope_stats": {
                "full_availability_fraction": realized.full_availability_fraction,
                "zero_availability_fraction": realized.zero_availability_fraction,
                "mean_residual_fraction": realized.mean_residual_fraction,
            },
        }
        if envelope_out:
            envelope_to_csv(envelope, Path(envelope_out))
        if dispatch_out:
            dispatch_to_csv(dispatch, Path(dispatch_out))
        _dump_json(doc, Path(out_path))
        click.echo(f"blocking probability {doc['blocking_probability']:.4f}; wrote {out_path}")

    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Override the output directory.")
@click.option("--threads", type=int, default=None, help="Override worker count.")
def run(config_path, seed, out_dir, threads) -> None:
    """Run a full experiment pipeline from a config file."""

    def body() -> None:
        config = load_config(config_path)
        overrides = {}
        if seed is not None:
            overrides["seed"] = seed
        if out_dir is not None:
            overrides["out_dir"] = out_dir
        if threads is not None:
            overrides["n_jobs"] = threads
        if overrides:
            from dataclasses import replace

            config = replace(config, **overrides)
        outputs = run_experiment(config)
        click.echo(f"report bundle in {Path(outputs['manifest']).parent}")

    _run(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
def validate(config_path) -> None:
    """Validate an experiment config without running it."""

    def body() -> None:
        errors = validate_config(config_path)
        if errors:
            for err in errors:
                click.echo(f"invalid: {err}", err=True)
            raise ConfigurationError(f"{len(errors)} problem(s) found")
        click.echo("ok")

    _run(body)


if __name__ == "__main__":
    main()
