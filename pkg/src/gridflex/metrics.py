"""Program-level utility metrics and a greedy budget allocator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .community import Community, Household
from .errors import InfeasibleAllocationError, UndefinedMetricError
from .tariff import OfferOutcome, make_offer, min_incentive


@dataclass(frozen=True)
class ProgramReport:
    acceptance_rate_pct: float
    responsiveness_cost: float  # dollars per kWh of realized reduction
    total_reduction_pct: float
    incentive_total: float
    r_extra: float  # dollars / kWh surcharge on non-participants
    shortfall_met: tuple[bool, ...]  # per emergency day


def acceptance_rate(outcomes: list[OfferOutcome]) -> float:
    """Percent of offered households that accepted."""
    if not outcomes:
        raise UndefinedMetricError("acceptance rate over zero offers")
    return 100.0 * sum(o.accepted for o in outcomes) / len(outcomes)


def responsiveness_cost(incentives: list[float], reductions: list[float]) -> float:
    """Total incentives divided by total emergency-day kWh reduction."""
    total_reduction = float(sum(reductions))
    if total_reduction <= 0:
        raise UndefinedMetricError("responsiveness cost with zero total reduction")
    return float(sum(incentives)) / total_reduction


def _emergency_consumption(h: Household, emergency_days: tuple[int, ...]) -> float:
    daily = h.load.daily_totals()
    return float(sum(daily[d] for d in emergency_days))


def total_demand_reduction(
    community: Community,
    participants: set[str],
    reduction_pct: float,
    emergency_days: tuple[int, ...],
) -> float:
    """Participants' emergency-day reduction as a percent of community
    emergency-day consumption."""
    total = sum(_emergency_consumption(h, emergency_days) for h in community.households)
    if total <= 0:
        raise UndefinedMetricError("community has zero emergency-day consumption")
    reduced = sum(
        _emergency_consumption(h, emergency_days) * reduction_pct / 100.0
        for h in community.households
        if h.id in participants
    )
    return 100.0 * reduced / total


def allocate_budget(
    community: Community,
    shortfall_per_day: dict[int, float],
    reduction_pct: float,
    cycle_days: int,
) -> tuple[set[str], dict[str, float]]:
    """Pick participants covering the per-day kWh shortfall at minimum incentive spend.

    Greedy: rank households ascending by min_incentive per kWh of reduction on the
    worst (largest-shortfall) day, add until every day's constraint holds, then
    prune any household whose removal keeps all constraints satisfied. Each
    selected household is paid exactly its minimum incentive.
    """
    days = tuple(sorted(shortfall_per_day))
    if not days or all(s <= 0 for s in shortfall_per_day.values()):
        return set(), {}
    scale = reduction_pct / 100.0

    per_hh_reduction: dict[str, np.ndarray] = {}
    cost: dict[str, float] = {}
    for h in community.households:
        daily = h.load.daily_totals()
        per_hh_reduction[h.id] = np.array([daily[d] * scale for d in days])
        offer = make_offer(h, 0.0, reduction_pct, days, cycle_days)
        cost[h.id] = min_incentive(h, offer)

    worst_day_pos = int(np.argmax([shortfall_per_day[d] for d in days]))

    def score(hid: str) -> float:
        dx = per_hh_reduction[hid][worst_day_pos]
        if dx <= 0:
            return float("inf")
        return cost[hid] / dx

    order = sorted(per_hh_reduction, key=lambda hid: (score(hid), hid))
    need = np.array([shortfall_per_day[d] for d in days], dtype=float)
    covered = np.zeros(len(days))
    selected: list[str] = []
    for hid in order:
        if np.all(covered >= need - 1e-12):
            break
        selected.append(hid)
        covered += per_hh_reduction[hid]
    if not np.all(covered >= need - 1e-12):
        first_bad = days[int(np.argmax(covered < need - 1e-12))]
        raise InfeasibleAllocationError(
            f"shortfall on day {first_bad} cannot be covered at {reduction_pct}% reduction",
            day=first_bad,
        )

    # Minimality pass: drop (most expensive first) anyone the cover can spare.
    for hid in sorted(selected, key=lambda hid: (-cost[hid], hid)):
        without = covered - per_hh_reduction[hid]
        if np.all(without >= need - 1e-12):
            selected.remove(hid)
            covered = without

    return set(selected), {hid: cost[hid] for hid in selected}
