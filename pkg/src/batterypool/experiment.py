"""End-to-end experiment pipeline behind the `run` CLI subcommand.

A JSON config describes cohort source, tariff, contract menu, cost model,
operator mode and outputs; run_experiment executes the stages (cohort,
households, operator, metrics) and writes a reproducible report bundle.
All writers are deterministic: same config and seed give byte-identical
bundles. Outputs are staged in a scratch directory and moved into place
only when every stage succeeded.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from batterypool import __version__
from batterypool.battery import BatterySpec, dispatch_to_csv
from batterypool.costs import CostParameters, SUPPORTED_RATIOS
from batterypool.cso import (
    CsoScenario,
    SweepResult,
    aggregate_schedules,
    blocking_cost,
    cso_profit,
    default_sweep_grid,
    min_tracking_size,
    sweep_sizes,
)
from batterypool.data import CohortConfig, DEFAULT_ZONES, load_meter_csv, synth_cohort
from batterypool.errors import BatteryPoolError, ConfigurationError, DataError
from batterypool.household import (
    ContractMenu,
    HouseholdDecision,
    cohort_decisions,
    menu_from_json,
    menu_from_sizes,
)
from batterypool.metrics import (
    BlockingStats,
    ServiceAllocation,
    blocking_distribution,
    blocking_probability,
    multiplexing_gain,
)
from batterypool.multiservice import (
    EnvelopeStats,
    ResidualEnvelope,
    envelope_from_csv,
    envelope_stats,
    envelope_to_csv,
    project_follow_envelope,
    synth_envelope,
)
from batterypool.series import series_to_csv
from batterypool.tariff import build_calendar, expand_tariff, tariff_from_json

MODES = ("no-external", "external", "multiservice")


class StageError(BatteryPoolError):
    """Wraps a pipeline failure with the stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict = field(repr=False)
    seed: int
    start: datetime
    horizon_hours: int
    cohort: dict
    tariff_path: str
    menu_spec: object  # path string or inline dict
    cost_params: CostParameters
    mode: str
    ratio: float
    sweep: bool
    sweep_points: int
    envelope_spec: dict | None
    congestion_value_range: tuple[float, float]
    out_dir: str
    n_jobs: int


def _config_errors(raw: dict, base: Path) -> list[str]:
    errors: list[str] = []

    def need(key: str) -> bool:
        if key not in raw:
            errors.append(f"missing field '{key}'")
            return False
        return True

    if need("tariff"):
        if not (base / str(raw["tariff"])).exists():
            errors.append(f"tariff file not found: {raw['tariff']}")
    if need("mode") and raw["mode"] not in MODES:
        errors.append(f"mode must be one of {MODES}, got {raw.get('mode')!r}")
    ratio = raw.get("ratio", 4)
    if ratio not in SUPPORTED_RATIOS:
        errors.append(f"ratio must be one of {SUPPORTED_RATIOS}, got {ratio!r}")
    cohort = raw.get("cohort")
    if not isinstance(cohort, dict) or cohort.get("source") not in ("synth", "csv"):
        errors.append("cohort.source must be 'synth' or 'csv'")
    elif cohort["source"] == "csv":
        for key in ("load",):
            if key not in cohort:
                errors.append(f"cohort.{key} required for csv source")
            elif not (base / str(cohort[key])).exists():
                errors.append(f"cohort file not found: {cohort[key]}")
    menu = raw.get("menu")
    if menu is None:
        errors.append("missing field 'menu'")
    elif isinstance(menu, str):
        if not (base / menu).exists():
            errors.append(f"menu file not found: {menu}")
    elif isinstance(menu, dict):
        if "entries" not in menu and "sizes_kwh" not in menu:
            errors.append("menu needs 'entries' or 'sizes_kwh'")
    else:
        errors.append("menu must be a path or an object")
    if raw.get("mode") == "multiservice":
        env = raw.get("envelope")
        if not isinstance(env, dict) or env.get("source") not in ("synth", "csv"):
            errors.append("envelope.source must be 'synth' or 'csv' in multiservice mode")
        elif env["source"] == "csv":
            if "path" not in env:
                errors.append("envelope.path required for csv source")
            elif not (base / str(env["path"])).exists():
                errors.append(f"envelope file not found: {env['path']}")
        elif env["source"] == "synth":
            full = env.get("full_fraction", 0.87)
            zero = env.get("zero_fraction", 0.05)
            try:
                EnvelopeStats(full, zero, 0.0 if full + zero > 1 else full)
            except ValueError as exc:
                errors.append(str(exc))
    if "horizon_hours" in raw and int(raw["horizon_hours"]) < 24:
        errors.append("horizon_hours must be >= 24")
    cvr = raw.get("congestion_value_range", [20000.0, 30000.0])
    if not (isinstance(cvr, (list, tuple)) and len(cvr) == 2 and cvr[0] <= cvr[1]):
        errors.append("congestion_value_range must be [low, high]")
    return errors


def validate_config(path: str | Path) -> list[str]:
    """Exhaustive config validation without executing anything."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        return [f"cannot read config: {exc}"]
    if not isinstance(raw, dict):
        return ["config must be a JSON object"]
    return _config_errors(raw, path.parent)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    errors = validate_config(path)
    if errors:
        raise ConfigurationError(f"{path}: " + "; ".join(errors))
    raw = json.loads(path.read_text())
    base = path.parent
    cohort = dict(raw["cohort"])
    if cohort["source"] == "csv":
        cohort["load"] = str(base / cohort["load"])
        if "pv" in cohort:
            cohort["pv"] = str(base / cohort["pv"])
    menu_spec = raw["menu"]
    if isinstance(menu_spec, str):
        menu_spec = str(base / menu_spec)
    envelope_spec = raw.get("envelope")
    if isinstance(envelope_spec, dict) and envelope_spec.get("source") == "csv":
        envelope_spec = {**envelope_spec, "path": str(base / envelope_spec["path"])}
    cm = raw.get("cost_model", {})
    cvr = raw.get("congestion_value_range", [20000.0, 30000.0])
    return ExperimentConfig(
        raw=raw,
        seed=int(raw.get("seed", 0)),
        start=datetime.fromisoformat(raw.get("start", "2021-01-01")),
        horizon_hours=int(raw.get("horizon_hours", 8760)),
        cohort=cohort,
        tariff_path=str(base / raw["tariff"]),
        menu_spec=menu_spec,
        cost_params=CostParameters(
            power_cost=float(cm.get("power_cost", 175.0)),
            energy_cost=float(cm.get("energy_cost", 395.0)),
            annualization_factor=float(cm.get("annualization_factor", 0.1328)),
        ),
        mode=str(raw["mode"]),
        ratio=float(raw.get("ratio", 4)),
        sweep=bool(raw.get("sweep", raw.get("mode") != "no-external")),
        sweep_points=int(raw.get("sweep_points", 40)),
        envelope_spec=envelope_spec,
        congestion_value_range=(float(cvr[0]), float(cvr[1])),
        out_dir=str(raw.get("out", "out")),
        n_jobs=int(raw.get("n_jobs", 1)),
    )


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def write_decisions_csv(decisions: list[HouseholdDecision], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "capacity_kwh", "rate_kw", "fee", "bill", "baseline_bill", "savings"])
        for d in decisions:
            writer.writerow(
                [
                    d.household_id,
                    repr(float(d.chosen.capacity)),
                    repr(float(d.chosen.rate)),
                    repr(float(d.chosen.fee)),
                    repr(float(d.bill)),
                    repr(float(d.baseline_bill)),
                    repr(float(d.savings)),
                ]
            )


def write_curve_csv(sweep: SweepResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["capacity_kwh", "investment", "blocking_cost", "profit", "p_block", "gain"])
        for pt in sweep.points:
            writer.writerow(
                [repr(pt.capacity), repr(pt.investment), repr(pt.blocking_cost),
                 repr(pt.profit), repr(pt.p_block), repr(pt.gain)]
            )


def write_histogram_csv(stats: BlockingStats, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lower_kw", "bin_upper_kw", "count"])
        for lo, hi, count in stats.histogram:
            writer.writerow([repr(float(lo)), repr(float(hi)), str(count)])


def _stats_dict(stats: BlockingStats) -> dict:
    return {
        "probability": stats.probability,
        "mean_kw": stats.mean,
        "std_kw": stats.std,
        "by_slice": {
            name: {
                "probability": sl.probability,
                "mean_kw": sl.mean,
                "std_kw": sl.std,
                "hours": sl.hours,
            }
            for name, sl in sorted(stats.by_slice.items())
        },
    }


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _build_cohort(config: ExperimentConfig):
    spec = config.cohort
    if spec["source"] == "csv":
        return load_meter_csv(spec["load"], spec.get("pv"))
    zones = tuple((z, float(w)) for z, w in spec.get("climate_zones", DEFAULT_ZONES))
    cc = CohortConfig(
        n_households=int(spec.get("n_households", 1000)),
        climate_zones=zones,
        annual_kwh_median=float(spec.get("annual_kwh_median", 5400.0)),
        annual_kwh_sigma=float(spec.get("annual_kwh_sigma", 0.55)),
        pv_zero_net_energy=bool(spec.get("pv_zero_net_energy", True)),
        seed=config.seed,
        start=config.start,
        hours=config.horizon_hours,
    )
    profiles, _ = synth_cohort(cc)
    return profiles


def _build_menu(config: ExperimentConfig) -> ContractMenu:
    if isinstance(config.menu_spec, str):
        return menu_from_json(config.menu_spec, config.cost_params)
    raw = config.menu_spec
    if "entries" in raw:
        from batterypool.household import ContractEntry

        return ContractMenu(
            tuple(
                ContractEntry(float(e["fee"]), float(e["capacity_kwh"]), float(e["rate_kw"]))
                for e in raw["entries"]
            )
        )
    return menu_from_sizes(
        [float(c) for c in raw["sizes_kwh"]],
        [float(k) for k in raw.get("ratios", [2, 4])],
        config.cost_params,
    )


def _build_envelope(
    config: ExperimentConfig, battery: BatterySpec, start: datetime, hours: int
) -> ResidualEnvelope:
    spec = config.envelope_spec or {"source": "synth"}
    if spec["source"] == "csv":
        return envelope_from_csv(spec["path"])
    stats = EnvelopeStats(
        full_availability_fraction=float(spec.get("full_fraction", 0.87)),
        zero_availability_fraction=float(spec.get("zero_fraction", 0.05)),
        mean_residual_fraction=0.0,
    )
    return synth_envelope(start, hours, battery, stats, seed=config.seed + 1)


def run_experiment(config: ExperimentConfig) -> dict[str, str]:
    """Execute the pipeline and write the report bundle into config.out_dir.

    Returns a map of artifact name to path. On any stage failure the
    partially written bundle is removed and StageError raised.
    """
    out_dir = Path(config.out_dir)
    scratch = Path(tempfile.mkdtemp(prefix="batterypool-", dir=out_dir.parent if out_dir.parent.exists() else None))
    outputs: dict[str, Path] = {}
    stage = "setup"
    try:
        tariff = tariff_from_json(config.tariff_path)
        menu = _build_menu(config)

        stage = "cohort"
        profiles = _build_cohort(config)
        if not profiles:
            raise DataError("cohort is empty")

        stage = "household"
        decisions = cohort_decisions(profiles, tariff, menu, n_jobs=config.n_jobs)
        write_decisions_csv(decisions, scratch / "decisions.csv")
        outputs["decisions"] = scratch / "decisions.csv"
        aggregate = aggregate_schedules([d.dispatch for d in decisions])
        series_to_csv(aggregate, scratch / "aggregate.csv")
        outputs["aggregate"] = scratch / "aggregate.csv"
        revenue = float(sum(d.chosen.fee for d in decisions))
        c_virtual = float(sum(d.chosen.capacity for d in decisions))

        stage = "cso"
        start, hours = aggregate.start, len(aggregate)
        buy, sell = expand_tariff(tariff, start, hours)
        outcome_doc: dict = {
            "mode": config.mode,
            "ratio": config.ratio,
            "n_households": len(decisions),
            "n_adopters": sum(1 for d in decisions if d.chosen.capacity > 0),
            "c_virtual_kwh": c_virtual,
            "revenue": revenue,
        }
        sweep_result: SweepResult | None = None
        if config.mode == "no-external":
            battery = min_tracking_size(aggregate, config.ratio)
            scenario = CsoScenario(
                aggregate_command=aggregate,
                battery=battery,
                ratio=config.ratio,
                external_buy_price=buy,
                external_sell_price=sell,
                allow_external=False,
            )
            outcome = cso_profit(scenario, revenue, config.cost_params)
        else:
            if c_virtual <= 0:
                raise DataError("no adopted virtual capacity, nothing to sweep")
            grid = default_sweep_grid(c_virtual, config.sweep_points)
            sweep_result = sweep_sizes(
                aggregate, revenue, config.ratio, grid,
                config.cost_params, buy=buy, sell=sell, c_virtual=c_virtual,
            )
            outcome = sweep_result.best
            if config.sweep:
                write_curve_csv(sweep_result, scratch / "curve.csv")
                outputs["curve"] = scratch / "curve.csv"
        battery = outcome.battery
        outcome_doc["battery"] = {
            "capacity_kwh": battery.capacity,
            "rate_kw": battery.rate,
            "initial_soc_kwh": battery.initial_soc,
        }
        outcome_doc.update(
            investment=outcome.investment,
            blocking_cost=outcome.blocking_cost,
            profit=outcome.profit,
        )
        dispatch = outcome.dispatch

        if config.mode == "multiservice":
            stage = "multiservice"
            envelope = _build_envelope(config, battery, start, hours)
            envelope_to_csv(envelope, scratch / "envelope.csv")
            outputs["envelope"] = scratch / "envelope.csv"
            dispatch = project_follow_envelope(aggregate, battery, envelope)
            ms_blocking = blocking_cost(dispatch.mismatch, buy, sell)
            realized = envelope_stats(envelope, battery)
            total_cost = outcome.investment + ms_blocking
            outcome_doc["multiservice"] = {
                "blocking_cost": ms_blocking,
                "blocking_probability": blocking_probability(dispatch.mismatch),
                "total_cost": total_cost,
                "cloud_storage_profit": revenue - total_cost,
                "congestion_value_range": list(config.congestion_value_range),
                "envelope_stats": {
                    "full_availability_fraction": realized.full_availability_fraction,
                    "zero_availability_fraction": realized.zero_availability_fraction,
                    "mean_residual_fraction": realized.mean_residual_fraction,
                },
            }

        dispatch_to_csv(dispatch, scratch / "dispatch.csv")
        outputs["dispatch"] = scratch / "dispatch.csv"

        stage = "metrics"
        calendar = build_calendar(tariff, start, hours)
        stats = blocking_distribution(dispatch.mismatch, calendar)
        gain = (
            multiplexing_gain(
                ServiceAllocation((("cloud-storage", c_virtual),), battery.capacity)
            )
            if c_virtual > 0
            else 0.0
        )
        outcome_doc["blocking_probability"] = stats.probability
        outcome_doc["multiplexing_gain"] = gain
        _dump_json(outcome_doc, scratch / "outcome.json")
        outputs["outcome"] = scratch / "outcome.json"
        metrics_doc = _stats_dict(stats)
        metrics_doc["multiplexing_gain"] = gain
        _dump_json(metrics_doc, scratch / "metrics.json")
        outputs["metrics"] = scratch / "metrics.json"
        write_histogram_csv(stats, scratch / "blocking_histogram.csv")
        outputs["histogram"] = scratch / "blocking_histogram.csv"

        stage = "manifest"
        # hash the experiment definition, not where it was written or how
        # many workers ran it
        hashed = {k: v for k, v in config.raw.items() if k not in ("out", "n_jobs")}
        manifest = {
            "config_sha256": hashlib.sha256(
                json.dumps(hashed, sort_keys=True).encode()
            ).hexdigest(),
            "seed": config.seed,
            "package_version": __version__,
            "python_version": platform.python_version(),
            "outputs": {name: _sha256(path) for name, path in sorted(outputs.items())},
        }
        _dump_json(manifest, scratch / "manifest.json")
        outputs["manifest"] = scratch / "manifest.json"

        out_dir.mkdir(parents=True, exist_ok=True)
        final: dict[str, str] = {}
        for name, path in outputs.items():
            target = out_dir / path.name
            shutil.move(str(path), target)
            final[name] = str(target)
        return final
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
