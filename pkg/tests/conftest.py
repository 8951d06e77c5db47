from datetime import datetime

import numpy as np
import pytest

from gridflex.community import (
    Community,
    Household,
    LoadSeries,
    SocioEconomicProfile,
)

START = datetime(2014, 9, 1)


def profile(**overrides) -> SocioEconomicProfile:
    base = dict(
        median_income=60_000.0,
        unemployment_pct=5.0,
        act_score=21.0,
        college_pct=30.0,
        avg_temperature=65.0,
        precipitation=2.0,
        dwelling_size=1_800.0,
    )
    base.update(overrides)
    return SocioEconomicProfile(**base)


def flat_load(kwh_per_day: float, days: int) -> LoadSeries:
    return LoadSeries(START, np.full(days * 24, kwh_per_day / 24.0))


def household(
    hid: str = "h0",
    kwh_per_day: float = 30.0,
    days: int = 30,
    elasticity: float = -0.25,
    baseline_rate: float = 0.16,
    neighborhood_id: str = "n0",
    load: LoadSeries | None = None,
    **profile_overrides,
) -> Household:
    return Household(
        id=hid,
        neighborhood_id=neighborhood_id,
        load=load if load is not None else flat_load(kwh_per_day, days),
        elasticity=elasticity,
        baseline_rate=baseline_rate,
        profile=profile(**profile_overrides),
    )


def community_of(households: list[Household]) -> Community:
    neighborhoods: dict[str, list[str]] = {}
    for h in households:
        neighborhoods.setdefault(h.neighborhood_id, []).append(h.id)
    return Community(
        tuple(households), {k: tuple(v) for k, v in neighborhoods.items()}
    )


@pytest.fixture
def standard_household() -> Household:
    """30 kWh/day over a 30-day cycle, rate 0.16, elasticity -0.25."""
    return household()
