from datetime import datetime

import numpy as np
import pytest

from batterypool.battery import BatterySpec, check_dispatch
from batterypool.billing import bill_from_prices
from batterypool.errors import ConfigurationError
from batterypool.household import (
    ContractEntry,
    ContractMenu,
    HouseholdProfile,
    cohort_decisions,
    dp_bill,
    menu_from_sizes,
    optimal_bill,
    optimize_operation,
    optimize_schedule,
    select_contract,
)
from batterypool.series import KWH, PRICE, HourlySeries, constant_series
from batterypool.tariff import SeasonRate, Tariff

from lp_reference import lp_optimal_bill

START = datetime(2021, 1, 1)


def s(values, unit=KWH, start=START):
    return HourlySeries(start, np.asarray(values, dtype=float), unit)


def toy_prices(days=2, peak_hours=4, off=0.20, peak=0.30, injection=None):
    """off/peak daily pattern; peak window at hours 16..16+peak_hours."""
    hours = 24 * days
    p = np.full(hours, off)
    for d in range(days):
        p[24 * d + 16 : 24 * d + 16 + peak_hours] = peak
    purchase = s(p, unit=PRICE)
    q = p.copy() if injection == "match" else np.full(hours, injection or 0.0)
    return purchase, s(q, unit=PRICE)


def flat_profile(days=2, load=1.0):
    hours = 24 * days
    return s(np.full(hours, load))


# ---------------------------------------------------------------------------
# optimize_schedule and oracles
# ---------------------------------------------------------------------------

def test_toy_two_day_arbitrage_with_metered_injection():
    """10 kWh / 2.5 kW battery, 1 kWh/h load, 4 peak hours per day, and
    injection credited at the purchase price: the whole battery cycles once
    a day and each cycled kWh earns the 0.10 spread, so 2 x 10 x 0.10."""
    purchase, injection = toy_prices(injection="match")
    net = flat_profile()
    baseline = bill_from_prices(net, purchase, injection).total
    dispatch, bill = optimize_schedule(net, purchase, injection, 10.0, 2.5)
    assert baseline - bill == pytest.approx(2.00, abs=1e-9)
    # independent lattice oracle at 0.1 kWh, as coarse as the example allows
    dp = dp_bill(net, purchase, injection, 10.0, 2.5, 0.1)
    assert baseline - dp == pytest.approx(2.00, abs=1e-9)
    check_dispatch(dispatch, BatterySpec(10.0, 2.5))


def test_toy_two_day_arbitrage_zero_injection():
    """Same toy with surplus worth nothing: only the 4 peak-hour kWh per
    day are worth shifting, so savings are 2 x 4 x 0.10 (value frozen from
    the DP oracle)."""
    purchase, injection = toy_prices(injection=0.0)
    net = flat_profile()
    baseline = bill_from_prices(net, purchase, injection).total
    _, bill = optimize_schedule(net, purchase, injection, 10.0, 2.5)
    assert baseline - bill == pytest.approx(0.80, abs=1e-9)
    dp = dp_bill(net, purchase, injection, 10.0, 2.5, 0.1)
    assert dp == pytest.approx(bill, abs=1e-9)


def test_zero_capacity_gives_baseline(etou):
    profile = HouseholdProfile("a", flat_profile(), constant_series(START, 48, 0.0, KWH))
    dispatch, bill = optimize_operation(profile, etou, 0.0, 0.0)
    assert np.all(dispatch.schedule.values == 0.0)
    from batterypool.billing import compute_bill, net_demand

    net = net_demand(profile.load, profile.pv, constant_series(START, 48, 0.0, KWH))
    assert bill == pytest.approx(compute_bill(net, etou).total)


def test_flat_tariff_no_pv_no_arbitrage():
    purchase = constant_series(START, 48, 0.25, PRICE)
    injection = constant_series(START, 48, 0.0, PRICE)
    net = flat_profile()
    baseline = bill_from_prices(net, purchase, injection).total
    _, bill = optimize_schedule(net, purchase, injection, 10.0, 2.5)
    assert bill == pytest.approx(baseline, abs=1e-9)


def test_dp_rejects_bad_grid_step():
    purchase, injection = toy_prices()
    with pytest.raises(ValueError):
        dp_bill(flat_profile(), purchase, injection, 10.0, 2.5, 0.0)


def test_dp_coarse_grid_upper_bounds_fine_grid():
    purchase, injection = toy_prices(injection=0.0)
    net = flat_profile()
    coarse = dp_bill(net, purchase, injection, 10.0, 2.5, 10.0)
    fine = dp_bill(net, purchase, injection, 10.0, 2.5, 0.1)
    assert coarse >= fine - 1e-12


def random_instance(rng):
    T = int(rng.integers(24, 73))
    capacity = float(rng.uniform(1.0, 10.0))
    rate = capacity / float(rng.choice([2, 4]))
    load = rng.uniform(0.3, 2.0, T)
    pv = rng.uniform(0.0, 1.8, T) * float(rng.integers(0, 2))
    plo, phi = np.sort(rng.uniform(0.05, 0.5, 2))
    peak = rng.random(T) < 0.3
    p = np.where(peak, phi, plo)
    q = np.zeros(T) if rng.random() < 0.7 else np.minimum(p, rng.uniform(0.0, 0.2))
    return s(load - pv), s(p, PRICE), s(np.broadcast_to(q, (T,)).copy(), PRICE), capacity, rate


def test_engine_matches_lp_reference():
    rng = np.random.default_rng(7)
    for _ in range(30):
        net, purchase, injection, capacity, rate = random_instance(rng)
        dispatch, bill = optimize_schedule(net, purchase, injection, capacity, rate)
        lp = lp_optimal_bill(net.values, purchase.values, injection.values, capacity, rate)
        assert bill == pytest.approx(lp, abs=1e-6)
        check_dispatch(dispatch, BatterySpec(capacity, rate))
        # schedule recovery must reproduce the forward-pass optimum
        assert optimal_bill(net, purchase, injection, capacity, rate) == pytest.approx(bill, abs=1e-7)


def test_more_capacity_never_hurts():
    rng = np.random.default_rng(11)
    for _ in range(10):
        net, purchase, injection, capacity, rate = random_instance(rng)
        small = optimal_bill(net, purchase, injection, capacity, rate)
        big = optimal_bill(net, purchase, injection, capacity * 1.5, rate * 1.5)
        assert big <= small + 1e-9


def clip_surplus_discharge(a, n0, capacity):
    """Remove discharge below net load; clamp charges stranded by the
    extra stored energy. Keeps feasibility; with zero injection price the
    bill must not change on an optimal schedule."""
    out = np.empty_like(a)
    s_prev = 0.0
    for t in range(a.size):
        act = a[t]
        if act < 0.0:
            act = max(act, -max(n0[t], 0.0))
        act = min(act, capacity - s_prev)
        out[t] = act
        s_prev += act
    return out


def test_zero_injection_discharge_clips_to_net_load():
    rng = np.random.default_rng(13)
    for _ in range(10):
        net, purchase, injection, capacity, rate = random_instance(rng)
        injection = injection.with_values(np.zeros(len(injection)))
        dispatch, bill = optimize_schedule(net, purchase, injection, capacity, rate)
        clipped = clip_surplus_discharge(dispatch.schedule.values, net.values, capacity)
        clipped_bill = bill_from_prices(
            net.with_values(net.values + clipped), purchase, injection
        ).total
        assert clipped_bill == pytest.approx(bill, abs=1e-6)


# ---------------------------------------------------------------------------
# contract selection
# ---------------------------------------------------------------------------

def two_level_tariff(off=0.20, peak=0.30, peak_start=16, peak_end=21):
    return Tariff(
        seasons=(SeasonRate("all", (1, 1), (12, 31), off_peak=off, peak=peak),),
        peak_start=peak_start,
        peak_end=peak_end,
        weekend_holiday_flat=False,
    )


def test_zero_profile_selects_null(etou):
    zero = constant_series(START, 48, 0.0, KWH)
    profile = HouseholdProfile("empty", zero, zero)
    decision = select_contract(profile, etou, menu_from_sizes([10, 20, 30], [2, 4]))
    assert decision.chosen.capacity == 0.0
    assert decision.annual_cost == pytest.approx(0.0)


def test_dominated_entry_selects_null():
    tariff = two_level_tariff()
    profile = HouseholdProfile("a", flat_profile(), constant_series(START, 48, 0.0, KWH))
    menu = ContractMenu((ContractEntry(fee=1e6, capacity=10, rate=2.5),))
    decision = select_contract(profile, tariff, menu)
    assert decision.chosen == ContractEntry(0.0, 0.0, 0.0)
    assert decision.annual_cost <= decision.baseline_bill + 1e-9


def test_four_hour_duration_preferred_at_equal_fee_per_kwh():
    # both durations priced identically: the 5h peak window makes the extra
    # rate of the 2h entry worthless, tie-break lands on the smaller rate
    tariff = two_level_tariff()
    profile = HouseholdProfile(
        "a",
        s(np.tile(np.concatenate([np.full(16, 0.8), np.full(5, 2.0), np.full(3, 0.8)]), 4)),
        constant_series(START, 96, 0.0, KWH),
    )
    menu = ContractMenu(
        (
            ContractEntry(fee=2.0, capacity=10, rate=5.0),   # 2 h
            ContractEntry(fee=2.0, capacity=10, rate=2.5),   # 4 h
        )
    )
    decision = select_contract(profile, tariff, menu)
    assert decision.chosen.capacity == 10  # fee below the arbitrage value
    assert decision.chosen.rate == 2.5


def test_menu_rejects_duplicates():
    with pytest.raises(ConfigurationError):
        ContractMenu((ContractEntry(1, 10, 2.5), ContractEntry(2, 10, 2.5)))


def test_cohort_empty_and_singleton(etou):
    assert cohort_decisions([], etou, menu_from_sizes([10], [4])) == []
    profile = HouseholdProfile("only", flat_profile(), constant_series(START, 48, 0.0, KWH))
    out = cohort_decisions([profile], etou, menu_from_sizes([10], [4]))
    assert len(out) == 1
    single = select_contract(profile, etou, menu_from_sizes([10], [4]))
    assert out[0].chosen == single.chosen
    assert out[0].bill == pytest.approx(single.bill)


def test_cohort_order_is_by_id_and_parallel_agrees(etou):
    rng = np.random.default_rng(5)
    profiles = [
        HouseholdProfile(f"h{i}", s(rng.uniform(0.2, 2.0, 48)), constant_series(START, 48, 0.0, KWH))
        for i in (3, 1, 2)
    ]
    menu = menu_from_sizes([10], [4])
    serial = cohort_decisions(profiles, etou, menu, n_jobs=1)
    parallel = cohort_decisions(profiles, etou, menu, n_jobs=2)
    assert [d.household_id for d in serial] == ["h1", "h2", "h3"]
    assert [(d.household_id, d.bill) for d in serial] == [
        (d.household_id, d.bill) for d in parallel
    ]


def test_decision_never_worse_than_baseline(etou):
    rng = np.random.default_rng(17)
    menu = menu_from_sizes([10, 20], [2, 4])
    for _ in range(5):
        load = s(rng.uniform(0.0, 2.0, 72))
        pv = s(rng.uniform(0.0, 1.5, 72))
        profile = HouseholdProfile("x", load, pv)
        decision = select_contract(profile, etou, menu)
        assert decision.annual_cost <= decision.baseline_bill + 1e-9
        check_dispatch(
            decision.dispatch,
            BatterySpec(decision.chosen.capacity, decision.chosen.rate),
        )
