from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batterypool.battery import BatterySpec, check_dispatch
from batterypool.costs import annualize, capex
from batterypool.cso import (
    CsoScenario,
    aggregate_schedules,
    blocking_cost,
    cso_profit,
    default_sweep_grid,
    min_tracking_size,
    project_follow,
    sweep_sizes,
    tracking_offset,
)
from batterypool.errors import InfeasibleError
from batterypool.series import KW, PRICE, HourlySeries, constant_series

START = datetime(2021, 1, 1)


def kw(values, start=START):
    return HourlySeries(start, np.asarray(values, dtype=float), KW)


def scenario(agg, battery, buy=0.3, sell=0.0, allow_external=True, ratio=4.0):
    n = len(agg)
    return CsoScenario(
        aggregate_command=agg,
        battery=battery,
        ratio=ratio,
        external_buy_price=constant_series(agg.start, n, buy, PRICE),
        external_sell_price=constant_series(agg.start, n, sell, PRICE),
        allow_external=allow_external,
    )


def dispatch_of(schedule_values, battery):
    agg = kw(schedule_values)
    return project_follow(scenario(agg, battery))


# ---------------------------------------------------------------------------
# aggregation and sizing
# ---------------------------------------------------------------------------

def test_opposite_schedules_cancel():
    batt = BatterySpec(100.0, 50.0)
    d1 = dispatch_of([10.0, -10.0], batt)
    d2 = dispatch_of([-10.0, 10.0], BatterySpec(100.0, 50.0, initial_soc=50.0))
    agg = aggregate_schedules([d1, d2])
    assert np.allclose(agg.values, 0.0)


def test_single_dispatch_aggregates_to_itself():
    batt = BatterySpec(100.0, 50.0)
    d = dispatch_of([5.0, -2.0, -3.0], batt)
    agg = aggregate_schedules([d])
    assert np.array_equal(agg.values, d.schedule.values)


def test_min_tracking_size_zero_for_zero_command():
    spec = min_tracking_size(kw([0.0, 0.0, 0.0]), ratio=4)
    assert spec.capacity == 0.0


def test_min_tracking_size_rate_bound_case():
    # alternating +1/-1 kW: 1 kWh of energy swing but the rate term needs
    # ratio * 1 kW = 4 kWh at a 4 h duration
    spec = min_tracking_size(kw([1.0, -1.0] * 4), ratio=4)
    assert spec.capacity == pytest.approx(4.0)
    assert spec.rate == pytest.approx(1.0)
    out = project_follow(scenario(kw([1.0, -1.0] * 4), spec, allow_external=False))
    assert np.all(out.mismatch.values == 0.0)


def test_min_tracking_size_discharge_first():
    # command starts by discharging; the battery must start charged
    agg = kw([-2.0, -2.0, 1.0, 3.0])
    spec = min_tracking_size(agg, ratio=2)
    assert spec.initial_soc == pytest.approx(4.0)
    out = project_follow(scenario(agg, spec, allow_external=False, ratio=2))
    assert np.all(out.mismatch.values == 0.0)
    check_dispatch(out, spec)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=72),
       st.sampled_from([2, 4]))
def test_min_tracking_size_always_tracks(values, ratio):
    agg = kw(values)
    spec = min_tracking_size(agg, ratio=ratio)
    out = project_follow(scenario(agg, spec, allow_external=False, ratio=ratio))
    assert np.abs(out.mismatch.values).max() <= 1e-9
    check_dispatch(out, spec)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_project_follow_large_battery_is_identity():
    agg = kw([3.0, -1.0, 2.0, -4.0])
    batt = BatterySpec(1000.0, 100.0, initial_soc=500.0)
    out = project_follow(scenario(agg, batt))
    assert np.array_equal(out.schedule.values, agg.values)
    assert np.all(out.mismatch.values == 0.0)


def test_project_follow_empty_battery_cannot_discharge():
    agg = kw([-100.0])
    batt = BatterySpec(500.0, 400.0, initial_soc=0.0)
    out = project_follow(scenario(agg, batt))
    assert out.schedule.values[0] == 0.0
    assert out.mismatch.values[0] == -100.0


def test_project_follow_full_battery_cannot_charge():
    agg = kw([600.0])
    batt = BatterySpec(500.0, 400.0, initial_soc=500.0)
    out = project_follow(scenario(agg, batt))
    assert out.schedule.values[0] == 0.0
    assert out.mismatch.values[0] == 600.0


def test_project_follow_infeasible_without_external():
    agg = kw([600.0])
    batt = BatterySpec(500.0, 400.0, initial_soc=500.0)
    with pytest.raises(InfeasibleError):
        project_follow(scenario(agg, batt, allow_external=False))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=48),
    st.floats(min_value=0, max_value=200),
    st.floats(min_value=0, max_value=50),
    st.floats(min_value=0, max_value=1),
)
def test_project_follow_respects_battery_limits(values, capacity, rate, soc_frac):
    batt = BatterySpec(capacity, rate, initial_soc=soc_frac * capacity)
    out = project_follow(scenario(kw(values), batt))
    check_dispatch(out, batt)


# ---------------------------------------------------------------------------
# costing
# ---------------------------------------------------------------------------

def test_blocking_cost_zero_mismatch():
    z = constant_series(START, 4, 0.0, KW)
    p = constant_series(START, 4, 0.3, PRICE)
    assert blocking_cost(z, p, p) == 0.0


def test_blocking_cost_buying_shortfall_at_peak_price():
    mismatch = kw([-10.0])
    buy = constant_series(START, 1, 0.35817, PRICE)
    sell = constant_series(START, 1, 0.0, PRICE)
    assert blocking_cost(mismatch, buy, sell) == pytest.approx(3.5817)


def test_blocking_cost_surplus_wasted_at_zero_sell():
    mismatch = kw([10.0])
    buy = constant_series(START, 1, 0.35817, PRICE)
    sell = constant_series(START, 1, 0.0, PRICE)
    assert blocking_cost(mismatch, buy, sell) == 0.0


def test_cso_profit_accounting_identity():
    agg = kw([100.0, -100.0, 50.0, -50.0] * 6)
    batt = min_tracking_size(agg, ratio=4)
    out = cso_profit(scenario(agg, batt), revenue=1000.0)
    assert out.profit == pytest.approx(out.revenue - out.investment - out.blocking_cost, rel=1e-6)
    assert out.blocking_cost == 0.0
    assert out.investment == pytest.approx(annualize(capex(batt.capacity, batt.rate)))


# ---------------------------------------------------------------------------
# size sweep
# ---------------------------------------------------------------------------

def test_sweep_endpoint_identities():
    rng = np.random.default_rng(23)
    agg_values = rng.normal(0.0, 30.0, 24 * 14)
    agg = kw(agg_values)
    c_v = 400.0
    revenue = annualize(capex(c_v, c_v / 4))
    buy = constant_series(START, len(agg), 0.3, PRICE)
    sell = constant_series(START, len(agg), 0.0, PRICE)
    grid = default_sweep_grid(c_v, interior=8)
    result = sweep_sizes(agg, revenue, 4, grid, buy=buy, sell=sell)
    first, last = result.points[0], result.points[-1]
    # no battery: whole command becomes mismatch, cost is blocking only
    assert first.capacity == 0.0
    assert first.investment == 0.0
    assert first.profit == pytest.approx(revenue - first.blocking_cost, rel=1e-9)
    # full-size battery at the pricing ratio: investment equals revenue
    assert last.investment == pytest.approx(revenue, rel=1e-9)
    for pt in result.points:
        assert pt.profit == pytest.approx(revenue - pt.investment - pt.blocking_cost, rel=1e-9)
    assert result.best.profit == pytest.approx(max(pt.profit for pt in result.points))


def test_sweep_gain_decreases_blocking_nonincreasing():
    rng = np.random.default_rng(29)
    agg = kw(rng.normal(0.0, 20.0, 24 * 21))
    c_v = 300.0
    buy = constant_series(START, len(agg), 0.3, PRICE)
    sell = constant_series(START, len(agg), 0.0, PRICE)
    result = sweep_sizes(agg, 5000.0, 4, default_sweep_grid(c_v, 12), buy=buy, sell=sell)
    gains = [pt.gain for pt in result.points]
    blockings = [pt.blocking_cost for pt in result.points]
    assert all(a > b for a, b in zip(gains, gains[1:]))
    assert all(a >= b - 1e-9 for a, b in zip(blockings, blockings[1:]))


def test_investment_cheaper_at_4h_than_2h_for_equal_capacity():
    assert annualize(capex(100.0, 25.0)) < annualize(capex(100.0, 50.0))


def test_sweep_rejects_empty_grid():
    agg = kw([1.0])
    p = constant_series(START, 1, 0.3, PRICE)
    with pytest.raises(ValueError):
        sweep_sizes(agg, 0.0, 4, np.array([]), buy=p, sell=p)


def test_tracking_offset_clamps_into_capacity():
    agg = kw([-5.0, 5.0])
    assert tracking_offset(agg) == pytest.approx(5.0)
