"""Household electricity bills under a TOU tariff.

The bill charges the purchase price for every kWh drawn from the grid and
credits the injection price for every kWh exported; fixed charges are out
of scope. Net demand is load minus PV generation plus the (virtual)
battery action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from batterypool.series import KWH, HourlySeries, align_and_combine, check_aligned
from batterypool.tariff import Tariff, expand_tariff


@dataclass(frozen=True)
class BillBreakdown:
    total: float
    purchased_energy: float
    injected_energy: float
    per_step_net: HourlySeries


def net_demand(
    load: HourlySeries, pv: HourlySeries, battery_action: HourlySeries
) -> HourlySeries:
    """Billed net quantity per hour: load - pv + battery_action (kWh)."""
    net = align_and_combine(load, pv, "sub") + battery_action
    return net.with_values(net.values, KWH)


def bill_from_prices(
    net: HourlySeries, purchase: HourlySeries, injection: HourlySeries
) -> BillBreakdown:
    """Bill a net-demand series against explicit per-hour price vectors."""
    check_aligned(net, purchase, injection)
    pos = np.maximum(net.values, 0.0)
    neg = np.maximum(-net.values, 0.0)
    total = float(purchase.values @ pos - injection.values @ neg)
    return BillBreakdown(
        total=total,
        purchased_energy=float(pos.sum()),
        injected_energy=float(neg.sum()),
        per_step_net=net,
    )


def compute_bill(net: HourlySeries, tariff: Tariff) -> BillBreakdown:
    purchase, injection = expand_tariff(tariff, net.start, len(net))
    return bill_from_prices(net, purchase, injection)
