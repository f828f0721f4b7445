"""Household-side problem: pick a virtual-battery contract and operate it.

Each household minimizes contract fee plus its electricity bill over the
horizon, subject to the contracted power rate, state-of-charge bounds and
the SoC recursion (initial SoC 0, terminal SoC free). With purchase price
at or above injection price everywhere, the per-hour billed cost is convex
piecewise-linear in the battery action, so the operation problem is a
convex piecewise-linear program.

The optimizer solves it exactly by propagating the cost-to-come value
function W_t(s) = minimum cost of hours 1..t ending at SoC s. W_t is
convex piecewise-linear and nondecreasing (prices are nonnegative), so it
is fully described by its value at SoC 0 plus a multiset of
(slope, width) segments; one hour's update is an infimal convolution with
the hour's two-slope cost (slope merge) followed by clipping the domain
to [0, capacity]. TOU tariffs produce only a handful of distinct slopes,
which keeps every update cheap. A backward pass over the stored value
functions recovers one optimal schedule.

An independent dynamic-programming oracle on a discrete SoC lattice
(dp_oracle) referees the optimizer in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from batterypool.battery import DispatchResult
from batterypool.billing import BillBreakdown, bill_from_prices, net_demand
from batterypool.costs import CostParameters, DEFAULT_COSTS, contract_price
from batterypool.errors import ConfigurationError
from batterypool.series import KW, KWH, HourlySeries, check_aligned, constant_series
from batterypool.tariff import Tariff, expand_tariff


@dataclass(frozen=True)
class HouseholdProfile:
    """One household's hourly load and rooftop PV output."""

    id: str
    load: HourlySeries
    pv: HourlySeries
    climate_zone: str = ""

    def __post_init__(self) -> None:
        check_aligned(self.load, self.pv)
        if self.load.values.min() < 0:
            raise ValueError(f"household {self.id}: load must be >= 0")
        if self.pv.values.min() < 0:
            raise ValueError(f"household {self.id}: pv must be >= 0")


@dataclass(frozen=True)
class ContractEntry:
    fee: float        # $/yr
    capacity: float   # kWh
    rate: float       # kW

    def __post_init__(self) -> None:
        if self.fee < 0 or self.capacity < 0 or self.rate < 0:
            raise ValueError("fee, capacity and rate must all be >= 0")


NULL_ENTRY = ContractEntry(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ContractMenu:
    """Menu of virtual-battery contracts; the null contract is implicit."""

    entries: tuple[ContractEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            key = (e.capacity, e.rate)
            if key in seen:
                raise ConfigurationError(f"duplicate menu entry (capacity, rate)={key}")
            seen.add(key)

    def with_null(self) -> tuple[ContractEntry, ...]:
        has_null = any(e.capacity == 0 and e.rate == 0 for e in self.entries)
        return self.entries if has_null else (NULL_ENTRY, *self.entries)


def menu_from_sizes(
    sizes_kwh: list[float],
    ratios: list[float],
    params: CostParameters = DEFAULT_COSTS,
) -> ContractMenu:
    """Menu priced at large-scale battery cost, one entry per size x ratio."""
    entries = tuple(
        ContractEntry(contract_price(c, k, params), c, c / k)
        for c in sizes_kwh
        for k in ratios
    )
    return ContractMenu(entries)


def menu_from_json(path: str | Path, params: CostParameters = DEFAULT_COSTS) -> ContractMenu:
    with open(path) as fh:
        raw = json.load(fh)
    if "entries" in raw:
        return ContractMenu(
            tuple(
                ContractEntry(float(e["fee"]), float(e["capacity_kwh"]), float(e["rate_kw"]))
                for e in raw["entries"]
            )
        )
    if "sizes_kwh" in raw:
        return menu_from_sizes(
            [float(c) for c in raw["sizes_kwh"]],
            [float(k) for k in raw.get("ratios", [2, 4])],
            params,
        )
    raise ConfigurationError(f"{path}: menu needs either 'entries' or 'sizes_kwh'")


@dataclass(frozen=True)
class HouseholdDecision:
    household_id: str
    chosen: ContractEntry
    dispatch: DispatchResult
    bill: float
    baseline_bill: float

    @property
    def annual_cost(self) -> float:
        return self.chosen.fee + self.bill

    @property
    def savings(self) -> float:
        return self.baseline_bill - self.annual_cost


# ---------------------------------------------------------------------------
# Exact convex piecewise-linear engine
# ---------------------------------------------------------------------------

def _validate_prices(p: np.ndarray, q: np.ndarray) -> None:
    if q.min() < 0:
        raise ValueError("injection prices must be >= 0")
    if np.any(q > p + 1e-12):
        raise ValueError("purchase price must be >= injection price at every hour")


def _forward(
    n0: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    cap: float,
    rate: float,
    keep_states: bool,
) -> tuple[float, list[tuple[float, list[tuple[float, float]], float]]]:
    """Propagate W_t; returns the optimal total bill (= W_T(0)) and, when
    keep_states is set, the pre-step value functions for backtracking."""
    base = 0.0
    seg: dict[float, float] = {}  # slope -> width, describing W above SoC 0
    width = 0.0
    states: list[tuple[float, list[tuple[float, float]], float]] = []
    two_r = 2.0 * rate
    for t in range(len(n0)):
        n, pt, qt = n0[t], p[t], q[t]
        if keep_states:
            states.append((base, sorted(seg.items()), width))
        # value shift: hour cost at the full-discharge end of the action range
        base += pt * max(n - rate, 0.0) - qt * max(rate - n, 0.0)
        if rate <= 0.0:
            continue
        # merge the hour's two cost slopes (kink at action = -n)
        if n <= -rate:
            seg[qt] = seg.get(qt, 0.0) + two_r
        elif n >= rate:
            seg[pt] = seg.get(pt, 0.0) + two_r
        else:
            seg[qt] = seg.get(qt, 0.0) + (rate - n)
            seg[pt] = seg.get(pt, 0.0) + (rate + n)
        width += two_r
        # clip the domain back to [0, ...]: consume `rate` of the flattest slopes
        need = rate
        for s in sorted(seg):
            take = seg[s] if seg[s] <= need else need
            base += s * take
            if take >= seg[s]:
                del seg[s]
            else:
                seg[s] -= take
            need -= take
            if need <= 1e-15:
                break
        width -= rate
        # clip to capacity: drop the steepest slopes beyond `cap`
        excess = width - cap
        if excess > 0.0:
            for s in sorted(seg, reverse=True):
                take = seg[s] if seg[s] <= excess else excess
                if take >= seg[s]:
                    del seg[s]
                else:
                    seg[s] -= take
                excess -= take
                if excess <= 1e-15:
                    break
            width = cap
    return base, states


def _value_at(base: float, segments: list[tuple[float, float]], x: float) -> float:
    v = base
    pos = 0.0
    for slope, w in segments:
        if x <= pos + w:
            return v + slope * (x - pos)
        v += slope * w
        pos += w
    return v


def _backtrack(
    states: list[tuple[float, list[tuple[float, float]], float]],
    n0: np.ndarray,
    p: np.ndarray,
    q: np.ndarray,
    rate: float,
) -> np.ndarray:
    """Recover one optimal schedule from the stored value functions."""
    T = len(n0)
    a = np.zeros(T)
    s_next = 0.0  # W_T is nondecreasing, so ending empty is optimal
    for t in range(T - 1, -1, -1):
        base, segments, width = states[t]
        n, pt, qt = n0[t], p[t], q[t]
        lo = max(0.0, s_next - rate)
        hi = min(width, s_next + rate)
        # candidate prior SoCs: interval ends, the hour-cost kink, W
        # breakpoints. Equal-cost candidates are broken first toward the
        # kink (the action exactly absorbing PV surplus: self-consumption
        # behavior), then toward the lowest SoC (batteries idle empty and
        # grid charging happens as late as prices allow).
        kink = min(max(s_next + n, lo), hi)
        cands = [lo, hi, kink]
        pos = 0.0
        for _, w in segments:
            pos += w
            if lo < pos < hi:
                cands.append(pos)
        cands.sort()
        best_x: float | None = None
        best_v = 0.0
        for x in cands:
            act = s_next - x
            cost = pt * max(n + act, 0.0) - qt * max(-(n + act), 0.0)
            v = _value_at(base, segments, x) + cost
            if best_x is None or v < best_v - 1e-9 * max(1.0, abs(best_v)):
                best_x, best_v = x, v
            elif n < 0.0 and x == kink and v <= best_v + 1e-9 * max(1.0, abs(best_v)):
                best_x = x  # cost tie in a surplus hour: store the surplus
        a[t] = s_next - best_x
        s_next = best_x
    return a


def _repair_schedule(
    a: np.ndarray, cap: float, rate: float
) -> tuple[np.ndarray, np.ndarray]:
    """Clamp a near-feasible schedule onto exact feasibility, return (a, soc)."""
    out = np.empty_like(a)
    soc = np.empty_like(a)
    s = 0.0
    for t in range(a.size):
        act = min(max(a[t], -rate), rate)
        s_new = min(max(s + act, 0.0), cap)
        out[t] = s_new - s
        soc[t] = s_new
        s = s_new
    return out, soc


def optimize_schedule(
    net: HourlySeries,
    purchase: HourlySeries,
    injection: HourlySeries,
    capacity: float,
    rate: float,
) -> tuple[DispatchResult, float]:
    """Bill-minimizing battery schedule against explicit price vectors.

    net is the battery-free net demand (load - pv). Returns the dispatch
    and the resulting bill total; the dispatch satisfies the SoC recursion
    and bounds exactly.
    """
    if capacity < 0 or rate < 0:
        raise ValueError("capacity and rate must be >= 0")
    check_aligned(net, purchase, injection)
    _validate_prices(purchase.values, injection.values)
    n0 = net.values
    if capacity == 0.0 or rate == 0.0:
        a = np.zeros(len(net))
        soc = np.zeros(len(net))
    else:
        _, states = _forward(n0, purchase.values, injection.values, capacity, rate, True)
        a = _backtrack(states, n0, purchase.values, injection.values, rate)
        a, soc = _repair_schedule(a, capacity, rate)
    bill = bill_from_prices(
        net.with_values(n0 + a, KWH), purchase, injection
    ).total
    dispatch = DispatchResult(
        schedule=HourlySeries(net.start, a, KW),
        soc=HourlySeries(net.start, soc, KWH),
        mismatch=constant_series(net.start, len(net), 0.0, KW),
    )
    return dispatch, bill


def optimal_bill(
    net: HourlySeries,
    purchase: HourlySeries,
    injection: HourlySeries,
    capacity: float,
    rate: float,
) -> float:
    """Optimal bill without recovering a schedule (single forward pass)."""
    if capacity < 0 or rate < 0:
        raise ValueError("capacity and rate must be >= 0")
    check_aligned(net, purchase, injection)
    _validate_prices(purchase.values, injection.values)
    if capacity == 0.0 or rate == 0.0:
        return bill_from_prices(net, purchase, injection).total
    bill, _ = _forward(net.values, purchase.values, injection.values, capacity, rate, False)
    return bill


def optimize_operation(
    profile: HouseholdProfile,
    tariff: Tariff,
    capacity: float,
    rate: float,
) -> tuple[DispatchResult, float]:
    """Optimal virtual-battery operation for one household under a tariff."""
    purchase, injection = expand_tariff(tariff, profile.load.start, len(profile.load))
    net = net_demand(profile.load, profile.pv, constant_series(profile.load.start, len(profile.load), 0.0, KWH))
    return optimize_schedule(net, purchase, injection, capacity, rate)


# ---------------------------------------------------------------------------
# Dynamic-programming oracle on a SoC lattice
# ---------------------------------------------------------------------------

def dp_bill(
    net: HourlySeries,
    purchase: HourlySeries,
    injection: HourlySeries,
    capacity: float,
    rate: float,
    soc_grid_step: float,
) -> float:
    """Optimal bill restricted to SoC multiples of soc_grid_step.

    Exhaustive backward induction; an upper bound on the continuous
    optimum that converges to it as the step shrinks. Intended for tests.
    """
    if soc_grid_step <= 0:
        raise ValueError("soc_grid_step must be > 0")
    if capacity < 0 or rate < 0:
        raise ValueError("capacity and rate must be >= 0")
    check_aligned(net, purchase, injection)
    _validate_prices(purchase.values, injection.values)
    n0, p, q = net.values, purchase.values, injection.values
    n_states = int(np.floor(capacity / soc_grid_step + 1e-9)) + 1
    k_rate = int(np.floor(rate / soc_grid_step + 1e-9))
    if n_states * max(2 * k_rate + 1, 1) * len(n0) > 2_000_000_000:
        raise ValueError("SoC lattice too large to enumerate")
    if n_states == 1 or k_rate == 0:
        return bill_from_prices(net, purchase, injection).total
    actions = np.arange(-k_rate, k_rate + 1) * soc_grid_step
    value = np.zeros(n_states)
    pad = np.full(k_rate, np.inf)
    for t in range(len(n0) - 1, -1, -1):
        step_cost = p[t] * np.maximum(n0[t] + actions, 0.0) - q[t] * np.maximum(
            -(n0[t] + actions), 0.0
        )
        padded = np.concatenate([pad, value, pad])
        windows = np.lib.stride_tricks.sliding_window_view(padded, n_states)
        value = np.min(windows + step_cost[:, None], axis=0)
    return float(value[0])  # initial SoC is 0


def dp_oracle(
    profile: HouseholdProfile,
    tariff: Tariff,
    capacity: float,
    rate: float,
    soc_grid_step: float,
) -> float:
    purchase, injection = expand_tariff(tariff, profile.load.start, len(profile.load))
    net = net_demand(
        profile.load, profile.pv, constant_series(profile.load.start, len(profile.load), 0.0, KWH)
    )
    return dp_bill(net, purchase, injection, capacity, rate, soc_grid_step)


# ---------------------------------------------------------------------------
# Contract selection
# ---------------------------------------------------------------------------

_TIE_TOL = 1e-6


def _select_with_prices(
    profile: HouseholdProfile,
    purchase: HourlySeries,
    injection: HourlySeries,
) -> tuple[HourlySeries, BillBreakdown]:
    zero = constant_series(profile.load.start, len(profile.load), 0.0, KWH)
    net = net_demand(profile.load, profile.pv, zero)
    return net, bill_from_prices(net, purchase, injection)


def select_contract(
    profile: HouseholdProfile,
    tariff: Tariff,
    menu: ContractMenu,
    _prices: tuple[HourlySeries, HourlySeries] | None = None,
) -> HouseholdDecision:
    """Pick the menu entry (or the null contract) minimizing fee plus bill.

    Ties are broken toward smaller capacity, then smaller rate.
    """
    purchase, injection = _prices or expand_tariff(
        tariff, profile.load.start, len(profile.load)
    )
    net, baseline = _select_with_prices(profile, purchase, injection)

    best: tuple[float, float, float, ContractEntry] | None = None
    for entry in menu.with_null():
        if entry.capacity == 0.0 or entry.rate == 0.0:
            bill = baseline.total
        else:
            bill = optimal_bill(net, purchase, injection, entry.capacity, entry.rate)
        cost = entry.fee + bill
        key = (cost, entry.capacity, entry.rate)
        if best is None or _beats(key, best[:3]):
            best = (*key, entry)

    chosen = best[3]
    dispatch, bill = optimize_schedule(net, purchase, injection, chosen.capacity, chosen.rate)
    return HouseholdDecision(
        household_id=profile.id,
        chosen=chosen,
        dispatch=dispatch,
        bill=bill,
        baseline_bill=baseline.total,
    )


def _beats(key: tuple[float, float, float], incumbent: tuple[float, float, float]) -> bool:
    cost, cap, rate = key
    inc_cost, inc_cap, inc_rate = incumbent
    scale = max(1.0, abs(inc_cost))
    if cost < inc_cost - _TIE_TOL * scale:
        return True
    if cost > inc_cost + _TIE_TOL * scale:
        return False
    return (cap, rate) < (inc_cap, inc_rate)


def cohort_decisions(
    profiles: list[HouseholdProfile],
    tariff: Tariff,
    menu: ContractMenu,
    n_jobs: int = 1,
) -> list[HouseholdDecision]:
    """Independent contract selection for every household, ordered by id."""
    ordered = sorted(profiles, key=lambda prof: prof.id)
    if not ordered:
        return []
    check_aligned(*(prof.load for prof in ordered))
    prices = expand_tariff(tariff, ordered[0].load.start, len(ordered[0].load))

    def solve(prof: HouseholdProfile) -> HouseholdDecision:
        try:
            return select_contract(prof, tariff, menu, _prices=prices)
        except Exception as exc:
            try:
                raise type(exc)(f"household {prof.id}: {exc}") from exc
            except TypeError:
                raise exc

    if n_jobs == 1:
        return [solve(prof) for prof in ordered]
    return Parallel(n_jobs=n_jobs)(delayed(solve)(prof) for prof in ordered)
