from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batterypool.billing import bill_from_prices, compute_bill, net_demand
from batterypool.errors import AlignmentError
from batterypool.series import KWH, PRICE, HourlySeries, constant_series

START = datetime(2021, 1, 1)


def s(values, unit=KWH, start=START):
    return HourlySeries(start, np.asarray(values, dtype=float), unit)


def test_net_demand_formula():
    net = net_demand(s([2.0]), s([1.0]), s([0.5]))
    assert net.values[0] == 1.5
    net = net_demand(s([1.0]), s([3.0]), s([0.0]))
    assert net.values[0] == -2.0


def test_net_demand_zero_battery_is_load_minus_pv():
    load, pv = s([2.0, 1.0]), s([0.5, 1.5])
    net = net_demand(load, pv, constant_series(START, 2, 0.0, KWH))
    assert np.array_equal(net.values, load.values - pv.values)


def test_net_demand_misalignment():
    with pytest.raises(AlignmentError):
        net_demand(s([1.0]), s([1.0], start=datetime(2021, 2, 1)), s([0.0]))


def test_bill_one_peak_kwh(etou):
    net = s([1.0], start=datetime(2021, 7, 5, 17))  # July weekday 5pm
    bill = compute_bill(net, etou)
    assert bill.total == pytest.approx(0.35817)
    assert bill.purchased_energy == 1.0
    assert bill.injected_energy == 0.0


def test_injection_earns_nothing_at_zero_price(etou):
    net = s([-5.0], start=datetime(2021, 7, 5, 12))
    bill = compute_bill(net, etou)
    assert bill.total == 0.0
    assert bill.injected_energy == 5.0


def test_zero_net_zero_bill(etou):
    bill = compute_bill(constant_series(START, 48, 0.0, KWH), etou)
    assert bill.total == 0.0


def test_recompute_identity(etou):
    rng = np.random.default_rng(3)
    net = s(rng.normal(0, 2, 200))
    bill = compute_bill(net, etou)
    from batterypool.tariff import expand_tariff

    purchase, injection = expand_tariff(etou, net.start, len(net))
    recomputed = float(
        purchase.values @ np.maximum(net.values, 0)
        - injection.values @ np.maximum(-net.values, 0)
    )
    assert bill.total == pytest.approx(recomputed, rel=1e-6)


@given(
    st.integers(min_value=0, max_value=7),
    st.floats(min_value=0.001, max_value=5.0),
)
def test_raising_positive_net_raises_bill_linearly(idx, delta):
    values = np.array([1.0, 2.0, 0.5, 3.0, 1.5, 0.25, 2.5, 1.0])
    purchase = constant_series(START, 8, 0.3, PRICE)
    injection = constant_series(START, 8, 0.0, PRICE)
    base = bill_from_prices(s(values), purchase, injection).total
    bumped = values.copy()
    bumped[idx] += delta
    out = bill_from_prices(s(bumped), purchase, injection).total
    assert out == pytest.approx(base + 0.3 * delta, rel=1e-9)
