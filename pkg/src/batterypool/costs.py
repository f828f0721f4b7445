"""Battery investment cost, annualization, and virtual-contract pricing.

Large-scale battery capex is linear in power rate and energy capacity
(175 $/kW + 395 $/kWh by default). A constant annualization factor maps
capex to an equivalent yearly cost; the default 0.1328/yr is consistent
with a roughly 10-year capital recovery at ~5.7%. Contract fees charge a
virtual battery at the same large-scale cost, which makes total contract
revenue for a given virtual capacity identical to the annualized cost of
a physical battery of that size.
"""

from __future__ import annotations

from dataclasses import dataclass

from batterypool.errors import ConfigurationError

SUPPORTED_RATIOS = (2, 4)


@dataclass(frozen=True)
class CostParameters:
    power_cost: float = 175.0           # $/kW
    energy_cost: float = 395.0          # $/kWh
    annualization_factor: float = 0.1328  # 1/yr

    def __post_init__(self) -> None:
        if self.power_cost <= 0 or self.energy_cost <= 0:
            raise ValueError("power_cost and energy_cost must be > 0")
        if not 0.0 < self.annualization_factor <= 1.0:
            raise ValueError("annualization_factor must be in (0, 1]")


DEFAULT_COSTS = CostParameters()


def capex(capacity: float, rate: float, params: CostParameters = DEFAULT_COSTS) -> float:
    """Investment cost ($) for a battery of given size and power rate."""
    if capacity < 0 or rate < 0:
        raise ValueError("capacity and rate must be >= 0")
    return params.power_cost * rate + params.energy_cost * capacity


def annualize(capex_value: float, params: CostParameters = DEFAULT_COSTS) -> float:
    """Equivalent annual cost ($/yr) of a one-time investment."""
    if capex_value < 0:
        raise ValueError("capex must be >= 0")
    return capex_value * params.annualization_factor


def contract_price(
    capacity: float, ratio: float, params: CostParameters = DEFAULT_COSTS
) -> float:
    """Annual fee ($/yr) for a virtual battery priced at large-scale cost.

    ratio is the energy/power ratio in hours; only 2 and 4 are supported.
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    if ratio not in SUPPORTED_RATIOS:
        raise ConfigurationError(f"unsupported energy/power ratio {ratio}, use one of {SUPPORTED_RATIOS}")
    return annualize(capex(capacity, capacity / ratio, params), params)
