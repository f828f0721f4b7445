"""batterypool: shared-battery simulation toolkit.

Households lease virtual batteries priced at large-scale storage cost and
operate them against a TOU tariff; a pool operator backs the contracts
with one physical battery, settles the hours it cannot follow against
external resources, and shares capacity with grid congestion management
through a residual-capacity envelope.
"""

from batterypool.battery import BatterySpec, DispatchResult, check_dispatch
from batterypool.billing import BillBreakdown, compute_bill, net_demand
from batterypool.costs import CostParameters, annualize, capex, contract_price
from batterypool.errors import (
    AlignmentError,
    BatteryPoolError,
    ConfigurationError,
    DataError,
    InfeasibleError,
    UnitError,
)
from batterypool.household import (
    ContractEntry,
    ContractMenu,
    HouseholdDecision,
    HouseholdProfile,
    cohort_decisions,
    dp_bill,
    dp_oracle,
    menu_from_sizes,
    optimize_operation,
    optimize_schedule,
    select_contract,
)
from batterypool.metrics import (
    BlockingStats,
    ServiceAllocation,
    blocking_distribution,
    blocking_probability,
    constraint_decomposition,
    multiplexing_gain,
)
from batterypool.cso import (
    CsoOutcome,
    CsoScenario,
    aggregate_schedules,
    blocking_cost,
    cso_profit,
    min_tracking_size,
    project_follow,
    sweep_sizes,
)
from batterypool.multiservice import (
    EnvelopeStats,
    ResidualEnvelope,
    envelope_stats,
    project_follow_envelope,
    synth_envelope,
)
from batterypool.series import HourlySeries, align_and_combine
from batterypool.tariff import Tariff, SeasonRate, expand_tariff, pge_etou_b

__version__ = "0.1.0"
