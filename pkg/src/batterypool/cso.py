"""Operator-side logic: track the aggregated virtual command with a
physical battery, size it, price the outcome, and sweep sizes for profit.

The operator may not arbitrage: the battery deviates from the aggregate
command only when its rate or SoC bounds force it to, and by the minimum
amount (myopic per-step projection). Hours where it deviates are
"blockings"; the shortfall is bought from, and the unstorable surplus sold
to, external resources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from batterypool.battery import BatterySpec, DispatchResult
from batterypool.costs import CostParameters, DEFAULT_COSTS, annualize, capex
from batterypool.errors import InfeasibleError
from batterypool.series import KW, KWH, HourlySeries, check_aligned
from batterypool.tariff import Tariff, expand_tariff


@dataclass(frozen=True)
class CsoScenario:
    """One tracking problem: aggregate command, battery, external prices."""

    aggregate_command: HourlySeries
    battery: BatterySpec
    ratio: float
    external_buy_price: HourlySeries
    external_sell_price: HourlySeries
    allow_external: bool = True

    def __post_init__(self) -> None:
        check_aligned(self.aggregate_command, self.external_buy_price, self.external_sell_price)
        buy = self.external_buy_price.values
        sell = self.external_sell_price.values
        if buy.min() < 0 or sell.min() < 0:
            raise ValueError("external prices must be >= 0")
        if np.any(sell > buy + 1e-12):
            raise ValueError("external buy price must be >= sell price at every hour")


@dataclass(frozen=True)
class CsoOutcome:
    dispatch: DispatchResult
    battery: BatterySpec
    revenue: float        # $/yr, sum of contract fees
    investment: float     # $/yr, annualized battery capex
    blocking_cost: float  # $/yr
    profit: float         # $/yr


def scenario_prices(
    tariff: Tariff, start, hours: int
) -> tuple[HourlySeries, HourlySeries]:
    """Default external prices: retail purchase to buy, injection to sell."""
    return expand_tariff(tariff, start, hours)


def aggregate_schedules(dispatches: list[DispatchResult]) -> HourlySeries:
    """Sum of the households' virtual schedules (the tracking target)."""
    if not dispatches:
        raise ValueError("at least one dispatch required")
    schedules = [d.schedule for d in dispatches]
    check_aligned(*schedules)
    total = np.sum([s.values for s in schedules], axis=0)
    return HourlySeries(schedules[0].start, total, KW)


def tracking_offset(aggregate: HourlySeries) -> float:
    """Initial SoC that keeps a tracking battery's trajectory above zero."""
    running = np.cumsum(aggregate.values)
    return float(max(0.0, -running.min()))


def min_tracking_size(aggregate: HourlySeries, ratio: float) -> BatterySpec:
    """Smallest battery (at the given energy/power ratio) able to follow the
    aggregate command at every hour, with its initial SoC chosen freely."""
    if ratio <= 0:
        raise ValueError("energy/power ratio must be > 0")
    running = np.cumsum(aggregate.values)
    energy_need = max(0.0, float(running.max())) - min(0.0, float(running.min()))
    rate_need = float(np.abs(aggregate.values).max())
    capacity = max(energy_need, ratio * rate_need)
    initial = tracking_offset(aggregate)
    return BatterySpec(capacity=capacity, rate=capacity / ratio, initial_soc=initial)


def project_follow(scenario: CsoScenario) -> DispatchResult:
    """Myopic projection of the aggregate command onto battery limits.

    Each hour the battery does as much of the commanded action as its rate
    and SoC bounds allow; the remainder is the mismatch. Without external
    resources any nonzero mismatch is an error (undersized battery).
    """
    agg = scenario.aggregate_command.values
    cap = scenario.battery.capacity
    rate = scenario.battery.rate
    schedule = np.empty_like(agg)
    soc = np.empty_like(agg)
    s = scenario.battery.initial_soc
    for t in range(agg.size):
        act = min(max(agg[t], -rate), rate)
        s_new = min(max(s + act, 0.0), cap)
        schedule[t] = s_new - s
        soc[t] = s_new
        s = s_new
    mismatch = agg - schedule
    if not scenario.allow_external and np.abs(mismatch).max() > 1e-9:
        t = int(np.abs(mismatch).argmax())
        raise InfeasibleError(
            f"battery cannot follow the aggregate command (mismatch {mismatch[t]:.3f} kW "
            f"at hour {t}); enlarge it or allow external resources"
        )
    start = scenario.aggregate_command.start
    return DispatchResult(
        schedule=HourlySeries(start, schedule, KW),
        soc=HourlySeries(start, soc, KWH),
        mismatch=HourlySeries(start, mismatch, KW),
    )


def blocking_cost(
    mismatch: HourlySeries, buy: HourlySeries, sell: HourlySeries
) -> float:
    """Net cost of settling mismatches externally.

    Negative mismatch: households discharged more than the battery could
    deliver, the operator buys the shortfall. Positive mismatch: the
    battery could not absorb the commanded charge, the surplus is sold
    (revenue, possibly zero).
    """
    check_aligned(mismatch, buy, sell)
    shortfall = np.maximum(-mismatch.values, 0.0)
    surplus = np.maximum(mismatch.values, 0.0)
    return float(buy.values @ shortfall - sell.values @ surplus)


def cso_profit(
    scenario: CsoScenario,
    revenue: float,
    cost_params: CostParameters = DEFAULT_COSTS,
) -> CsoOutcome:
    """Assemble the operator's annual outcome for one scenario."""
    dispatch = project_follow(scenario)
    blocking = blocking_cost(
        dispatch.mismatch, scenario.external_buy_price, scenario.external_sell_price
    )
    investment = annualize(capex(scenario.battery.capacity, scenario.battery.rate, cost_params), cost_params)
    return CsoOutcome(
        dispatch=dispatch,
        battery=scenario.battery,
        revenue=revenue,
        investment=investment,
        blocking_cost=blocking,
        profit=revenue - investment - blocking,
    )


@dataclass(frozen=True)
class SweepPoint:
    capacity: float
    investment: float
    blocking_cost: float
    profit: float
    p_block: float
    gain: float


@dataclass(frozen=True)
class SweepResult:
    points: tuple[SweepPoint, ...]
    best: CsoOutcome

    @property
    def best_point(self) -> SweepPoint:
        profits = [pt.profit for pt in self.points]
        return self.points[int(np.argmax(profits))]


def default_sweep_grid(c_virtual: float, interior: int = 40) -> np.ndarray:
    """Evenly spaced capacities from 0 to the total virtual capacity."""
    return np.linspace(0.0, c_virtual, interior + 2)


def sweep_sizes(
    aggregate: HourlySeries,
    revenue: float,
    ratio: float,
    grid: np.ndarray,
    cost_params: CostParameters = DEFAULT_COSTS,
    buy: HourlySeries | None = None,
    sell: HourlySeries | None = None,
    c_virtual: float | None = None,
) -> SweepResult:
    """Evaluate the operator outcome over a grid of battery capacities.

    Each point uses rate = capacity/ratio and the tracking initial SoC
    clamped into [0, capacity]. Ties in profit resolve to the smaller
    capacity. gain and p_block columns are reported against c_virtual
    (defaults to the top of the grid).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("sweep grid must not be empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("sweep grid must be sorted ascending")
    if ratio <= 0:
        raise ValueError("energy/power ratio must be > 0")
    if buy is None or sell is None:
        raise ValueError("external buy and sell price series are required")
    cv = float(c_virtual if c_virtual is not None else grid[-1])
    if cv <= 0:
        raise ValueError("total virtual capacity must be > 0")

    offset = tracking_offset(aggregate)
    points: list[SweepPoint] = []
    best: CsoOutcome | None = None
    zero_tol = 1e-6
    for cap in grid:
        battery = BatterySpec(
            capacity=float(cap),
            rate=float(cap / ratio),
            initial_soc=min(max(offset, 0.0), float(cap)),
        )
        scenario = CsoScenario(
            aggregate_command=aggregate,
            battery=battery,
            ratio=ratio,
            external_buy_price=buy,
            external_sell_price=sell,
            allow_external=True,
        )
        outcome = cso_profit(scenario, revenue, cost_params)
        mismatch = outcome.dispatch.mismatch.values
        points.append(
            SweepPoint(
                capacity=float(cap),
                investment=outcome.investment,
                blocking_cost=outcome.blocking_cost,
                profit=outcome.profit,
                p_block=float(np.mean(np.abs(mismatch) > zero_tol)),
                gain=(cv - float(cap)) / cv,
            )
        )
        if best is None or outcome.profit > best.profit + 1e-12:
            best = outcome
    return SweepResult(points=tuple(points), best=best)
