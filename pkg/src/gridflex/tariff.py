"""Pricing and incentive arithmetic: costs, emergency rates, minimum incentives,
the acceptance oracle, and the revenue-neutral rate hike on non-participants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .community import Household, LoadSeries
from .errors import (
    ContractViolation,
    CoverageError,
    DegeneratePopulationError,
    DomainError,
    ValidationError,
)


@dataclass(frozen=True)
class TariffSchedule:
    baseline_rate: float  # dollars / kWh
    emergency_rate: float  # dollars / kWh
    emergency_days: tuple[int, ...]  # day indices within the cycle
    cycle_days: int

    def __post_init__(self):
        if self.baseline_rate <= 0:
            raise ValidationError("baseline_rate must be > 0")
        if self.emergency_rate < self.baseline_rate:
            raise ValidationError("emergency_rate must be >= baseline_rate")
        if any(not 0 <= d < self.cycle_days for d in self.emergency_days):
            raise ValidationError("emergency day index outside the cycle")


@dataclass(frozen=True)
class Offer:
    household_id: str
    incentive: float  # dollars, paid once per cycle
    target_reduction_pct: float
    schedule: TariffSchedule

    def __post_init__(self):
        if self.incentive < 0:
            raise ValidationError("incentive must be >= 0")
        if not 0 < self.target_reduction_pct < 100:
            raise ValidationError("target_reduction_pct must lie in (0, 100)")


@dataclass(frozen=True)
class OfferOutcome:
    offer: Offer
    accepted: bool
    min_incentive: float
    cost_baseline: float
    cost_program: float


def price_change_pct(target_reduction_pct: float, elasticity: float) -> float:
    """Percent price increase needed for a target percent demand reduction.

    A reduction of i% is a quantity change of -i%, so the price change is
    (-i) / elasticity, which is positive for negative elasticity.
    """
    if elasticity >= 0:
        raise DomainError(f"elasticity must be negative, got {elasticity}")
    if not 0 < target_reduction_pct < 100:
        raise DomainError("target_reduction_pct must lie in (0, 100)")
    return -target_reduction_pct / elasticity


def emergency_rate(baseline_rate: float, target_reduction_pct: float, elasticity: float) -> float:
    """Per-kWh rate on emergency days implied by the household's elasticity."""
    return baseline_rate * (1.0 + price_change_pct(target_reduction_pct, elasticity) / 100.0)


def _cycle_daily_totals(load: LoadSeries, cycle_days: int) -> np.ndarray:
    if load.n_days < cycle_days:
        raise CoverageError(
            f"load covers {load.n_days} days but the cycle has {cycle_days}"
        )
    return load.daily_totals()[:cycle_days]


def baseline_cost(household: Household, cycle_days: int) -> float:
    """Cycle cost at the baseline rate with no program participation."""
    daily = _cycle_daily_totals(household.load, cycle_days)
    return float(daily.sum() * household.baseline_rate)


def apply_reduction(
    load: LoadSeries, emergency_days: tuple[int, ...], reduction_pct: float
) -> LoadSeries:
    """Scale every hour of each emergency day by (1 - i/100); other hours untouched."""
    if not 0 <= reduction_pct <= 100:
        raise DomainError("reduction_pct must lie in [0, 100]")
    values = load.values.copy().reshape(load.n_days, -1)
    for d in emergency_days:
        values[d] = values[d] * (1.0 - reduction_pct / 100.0)
    return LoadSeries(load.start, values.reshape(-1))


def program_cost(household: Household, offer: Offer, reduced_load: LoadSeries) -> float:
    """Cycle cost under the program: baseline rate off-emergency, emergency rate on
    the reduced consumption, minus the upfront incentive. Can be negative."""
    sched = offer.schedule
    daily = _cycle_daily_totals(household.load, sched.cycle_days)
    reduced_daily = _cycle_daily_totals(reduced_load, sched.cycle_days)
    emergency = np.zeros(sched.cycle_days, dtype=bool)
    emergency[list(sched.emergency_days)] = True
    hours = np.arange(sched.cycle_days * 24) // 24
    changed = np.abs(reduced_load.values[: sched.cycle_days * 24] - load_values(household, sched))
    if np.any(changed[~emergency[hours]] != 0):
        raise ContractViolation("reduced load differs from the load on a non-emergency day")
    cost = (
        daily[~emergency].sum() * sched.baseline_rate
        + reduced_daily[emergency].sum() * sched.emergency_rate
        - offer.incentive
    )
    return float(cost)


def load_values(household: Household, sched: TariffSchedule) -> np.ndarray:
    return household.load.values[: sched.cycle_days * 24]


def min_incentive(household: Household, offer: Offer) -> float:
    """Smallest incentive making participation no worse than the baseline.

    Clamped at 0: the emergency-day charge under reduced consumption can fall
    below the baseline charge, in which case no compensation is needed.
    """
    sched = offer.schedule
    daily = _cycle_daily_totals(household.load, sched.cycle_days)
    scale = 1.0 - offer.target_reduction_pct / 100.0
    raw = 0.0
    for d in sched.emergency_days:
        raw += daily[d] * scale * sched.emergency_rate - daily[d] * sched.baseline_rate
    return max(0.0, float(raw))


def make_offer(
    household: Household,
    incentive: float,
    target_reduction_pct: float,
    emergency_days: tuple[int, ...],
    cycle_days: int,
) -> Offer:
    """Offer with the emergency rate derived from the household's own elasticity."""
    schedule = TariffSchedule(
        baseline_rate=household.baseline_rate,
        emergency_rate=emergency_rate(
            household.baseline_rate, target_reduction_pct, household.elasticity
        ),
        emergency_days=tuple(emergency_days),
        cycle_days=cycle_days,
    )
    return Offer(household.id, incentive, target_reduction_pct, schedule)


def accept_offer(household: Household, offer: Offer) -> OfferOutcome:
    """Ground-truth behavior oracle: accept iff the program cost does not exceed
    the baseline cost, assuming exact compliance with the target reduction."""
    sched = offer.schedule
    reduced = apply_reduction(household.load, sched.emergency_days, offer.target_reduction_pct)
    c_base = baseline_cost(household, sched.cycle_days)
    c_prog = program_cost(household, offer, reduced)
    return OfferOutcome(
        offer=offer,
        accepted=c_prog <= c_base,
        min_incentive=min_incentive(household, offer),
        cost_baseline=c_base,
        cost_program=c_prog,
    )


def rate_hike(
    nonparticipants: list[Household], incentives: list[float], cycle_days: int
) -> float:
    """Uniform per-kWh surcharge on non-participants funding the incentive pool."""
    total_incentive = float(sum(incentives))
    if total_incentive == 0.0:
        return 0.0
    total_kwh = sum(
        float(_cycle_daily_totals(h.load, cycle_days).sum()) for h in nonparticipants
    )
    if total_kwh <= 0:
        raise DegeneratePopulationError("non-participants have zero cycle consumption")
    return total_incentive / total_kwh
