"""Population data model: households, neighborhoods, synthetic generation, CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import (
    InsufficientPopulationError,
    InvalidSpecError,
    ReferentialIntegrityError,
    ValidationError,
)

HOURS_PER_DAY = 24

# Column order of the static (socio-economic) feature matrix. Fixed: downstream
# models and CSV schemas rely on it.
FEATURE_COLUMNS = (
    "median_income",
    "unemployment_pct",
    "act_score",
    "college_pct",
    "avg_temperature",
    "precipitation",
    "dwelling_size",
)

ELASTICITY_FLOOR = -5.0
ELASTICITY_CEIL = -0.01


@dataclass(frozen=True)
class SocioEconomicProfile:
    median_income: float  # dollars / year
    unemployment_pct: float  # [0, 100]
    act_score: float  # [1, 36]
    college_pct: float  # [0, 100]
    avg_temperature: float  # degrees F
    precipitation: float  # inches / month
    dwelling_size: float  # square feet

    def __post_init__(self):
        for name in ("unemployment_pct", "college_pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValidationError(f"{name}={v} outside [0, 100]")
        if not 1.0 <= self.act_score <= 36.0:
            raise ValidationError(f"act_score={self.act_score} outside [1, 36]")
        if self.dwelling_size <= 0:
            raise ValidationError(f"dwelling_size={self.dwelling_size} must be > 0")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in FEATURE_COLUMNS], dtype=float)


@dataclass(frozen=True)
class LoadSeries:
    """Hourly kWh consumption starting at `start` (hour resolution)."""

    start: datetime
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size == 0 or vals.size % HOURS_PER_DAY != 0:
            raise ValidationError(
                f"load series length {vals.size} is not a positive multiple of 24"
            )
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValidationError("load series values must be finite and >= 0")

    @property
    def n_days(self) -> int:
        return self.values.size // HOURS_PER_DAY

    def daily_totals(self) -> np.ndarray:
        """Total kWh per day, shape (n_days,)."""
        return self.values.reshape(self.n_days, HOURS_PER_DAY).sum(axis=1)


@dataclass(frozen=True)
class Household:
    id: str
    neighborhood_id: str
    load: LoadSeries
    elasticity: float  # price elasticity of demand, strictly negative
    baseline_rate: float  # dollars / kWh
    profile: SocioEconomicProfile

    def __post_init__(self):
        if self.elasticity >= 0:
            raise ValidationError(f"elasticity must be negative, got {self.elasticity}")
        if self.baseline_rate <= 0:
            raise ValidationError(f"baseline_rate must be > 0, got {self.baseline_rate}")


@dataclass(frozen=True)
class Community:
    households: tuple[Household, ...]
    neighborhoods: dict[str, tuple[str, ...]]  # neighborhood id -> member household ids
    counties: dict[str, tuple[str, ...]] = field(default_factory=dict)  # county -> neighborhood ids

    def __post_init__(self):
        ids = [h.id for h in self.households]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate household ids")
        members: list[str] = []
        for nid, nb in self.neighborhoods.items():
            members.extend(nb)
        if sorted(members) != sorted(ids):
            raise ValidationError("neighborhoods do not partition the household set")
        for h in self.households:
            if h.neighborhood_id not in self.neighborhoods:
                raise ReferentialIntegrityError(
                    f"household {h.id} references unknown neighborhood {h.neighborhood_id}"
                )
            if h.id not in self.neighborhoods[h.neighborhood_id]:
                raise ValidationError(
                    f"household {h.id} missing from its neighborhood {h.neighborhood_id}"
                )

    def __len__(self) -> int:
        return len(self.households)

    def by_id(self, hid: str) -> Household:
        for h in self.households:
            if h.id == hid:
                return h
        raise KeyError(hid)


@dataclass(frozen=True)
class ScenarioConfig:
    cycle_days: int = 30
    emergency_day_count: int = 3
    target_reduction_pct: float = 10.0
    default_incentive: float = 100.0
    elasticity_mean: float = -0.25
    elasticity_std: float = 0.1
    rng_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    participation_fraction: float = 0.25

    def __post_init__(self):
        if not 0 <= self.emergency_day_count <= self.cycle_days:
            raise InvalidSpecError("emergency day count exceeds cycle length")
        if not 0 < self.target_reduction_pct < 100:
            raise InvalidSpecError("target_reduction_pct must lie in (0, 100)")
        if self.elasticity_mean >= 0:
            raise InvalidSpecError("elasticity_mean must be negative")
        if any(r <= 0 for r in self.split_ratios) or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise InvalidSpecError("split_ratios must be positive and sum to 1")


def sample_elasticity(rng: np.random.Generator, mean: float, std: float) -> float:
    """One Gaussian elasticity draw, clamped into [-5.0, -0.01]."""
    if mean >= 0:
        raise InvalidSpecError(f"elasticity mean must be negative, got {mean}")
    if std < 0:
        raise InvalidSpecError(f"elasticity std must be >= 0, got {std}")
    draw = mean if std == 0 else rng.normal(mean, std)
    return float(np.clip(draw, ELASTICITY_FLOOR, ELASTICITY_CEIL))


def _county_profile_base(rng: np.random.Generator) -> dict[str, float]:
    """County-level means the household profiles jitter around."""
    return {
        "median_income": rng.uniform(35_000, 95_000),
        "unemployment_pct": rng.uniform(2.5, 12.0),
        "act_score": rng.uniform(16.0, 28.0),
        "college_pct": rng.uniform(15.0, 60.0),
        "avg_temperature": rng.uniform(40.0, 80.0),
        "precipitation": rng.uniform(0.5, 6.0),
    }


def _sample_profile(rng: np.random.Generator, base: dict[str, float]) -> SocioEconomicProfile:
    return SocioEconomicProfile(
        median_income=max(10_000.0, base["median_income"] * rng.lognormal(0.0, 0.25)),
        unemployment_pct=float(np.clip(base["unemployment_pct"] + rng.normal(0, 1.0), 0, 100)),
        act_score=float(np.clip(base["act_score"] + rng.normal(0, 2.0), 1, 36)),
        college_pct=float(np.clip(base["college_pct"] + rng.normal(0, 5.0), 0, 100)),
        avg_temperature=base["avg_temperature"] + rng.normal(0, 2.0),
        precipitation=max(0.0, base["precipitation"] + rng.normal(0, 0.5)),
        dwelling_size=float(rng.uniform(700, 3_500)),
    )


def _synthetic_load(
    rng: np.random.Generator,
    days: int,
    profile: SocioEconomicProfile,
    income_percentile: float,
) -> np.ndarray:
    """Daily double-peak shape scaled by dwelling size and income, plus seeded noise."""
    hours = np.arange(HOURS_PER_DAY)
    morning = np.exp(-0.5 * ((hours - 7.5) / 1.8) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 2.5) ** 2)
    base_shape = 0.35 + 0.8 * morning + 1.3 * evening
    scale = (profile.dwelling_size / 1_800.0) * (0.7 + 0.6 * income_percentile)
    day_wiggle = 1.0 + 0.1 * rng.normal(size=days)  # day-to-day variation
    series = np.concatenate([base_shape * scale * w for w in day_wiggle])
    series += 0.05 * scale * rng.normal(size=series.size)
    return np.maximum(series, 0.0)


def generate_community(
    counties: int,
    neighborhoods_per_county: int,
    households_per_neighborhood: int,
    seed: int,
    days: int = 30,
    elasticity_mean: float = -0.25,
    elasticity_std: float = 0.1,
    baseline_rate: float = 0.16,
    start: datetime = datetime(2014, 9, 1),
) -> Community:
    """Deterministically generate a synthetic community for a fixed seed."""
    if counties < 1 or neighborhoods_per_county < 1 or households_per_neighborhood < 1:
        raise InvalidSpecError("all size counts must be >= 1")
    if days < 1:
        raise InvalidSpecError("days must be >= 1")
    rng = np.random.default_rng(seed)
    households: list[Household] = []
    neighborhoods: dict[str, tuple[str, ...]] = {}
    county_map: dict[str, tuple[str, ...]] = {}
    for ci in range(counties):
        county_id = f"c{ci:02d}"
        base = _county_profile_base(rng)
        county_nbs: list[str] = []
        for ni in range(neighborhoods_per_county):
            nb_id = f"{county_id}-n{ni:02d}"
            county_nbs.append(nb_id)
            member_ids: list[str] = []
            for hi in range(households_per_neighborhood):
                hid = f"{nb_id}-h{hi:03d}"
                member_ids.append(hid)
                profile = _sample_profile(rng, base)
                income_pctile = float(np.clip(profile.median_income / 120_000.0, 0.0, 1.0))
                load = LoadSeries(start, _synthetic_load(rng, days, profile, income_pctile))
                households.append(
                    Household(
                        id=hid,
                        neighborhood_id=nb_id,
                        load=load,
                        elasticity=sample_elasticity(rng, elasticity_mean, elasticity_std),
                        baseline_rate=baseline_rate,
                        profile=profile,
                    )
                )
            neighborhoods[nb_id] = tuple(member_ids)
        county_map[county_id] = tuple(county_nbs)
    return Community(tuple(households), neighborhoods, county_map)


def load_community(households_csv: Path | str, loads_csv: Path | str) -> Community:
    """Build a Community from the two-file CSV schema (see README)."""
    households_csv = Path(households_csv)
    loads_csv = Path(loads_csv)
    rows: list[dict[str, str]] = []
    with households_csv.open(newline="") as f:
        for row in csv.DictReader(f):
            rows.append(row)

    loads: dict[str, list[tuple[datetime, float]]] = {}
    with loads_csv.open(newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), start=2):
            hid = row["id"]
            kwh = float(row["kwh"])
            if kwh < 0:
                raise ValidationError(f"{loads_csv.name} row {lineno}: negative kwh {kwh}")
            ts = datetime.fromisoformat(row["timestamp_iso8601"])
            loads.setdefault(hid, []).append((ts, kwh))

    households: list[Household] = []
    neighborhoods: dict[str, list[str]] = {}
    counties: dict[str, set[str]] = {}
    for row in rows:
        hid = row["id"]
        if hid not in loads:
            raise ReferentialIntegrityError(f"household {hid} has no load rows")
        series = sorted(loads[hid])
        values = np.array([kwh for _, kwh in series])
        profile = SocioEconomicProfile(
            median_income=float(row["median_income"]),
            unemployment_pct=float(row["unemployment_pct"]),
            act_score=float(row["act_score"]),
            college_pct=float(row["college_pct"]),
            avg_temperature=float(row["avg_temperature"]),
            precipitation=float(row["precipitation"]),
            dwelling_size=float(row["dwelling_size"]),
        )
        households.append(
            Household(
                id=hid,
                neighborhood_id=row["neighborhood_id"],
                load=LoadSeries(series[0][0], values),
                elasticity=float(row["elasticity"]),
                baseline_rate=float(row["baseline_rate"]),
                profile=profile,
            )
        )
        neighborhoods.setdefault(row["neighborhood_id"], []).append(hid)
        counties.setdefault(row["county"], set()).add(row["neighborhood_id"])

    orphans = set(loads) - {h.id for h in households}
    if orphans:
        raise ReferentialIntegrityError(f"load rows for unknown households: {sorted(orphans)}")
    return Community(
        tuple(households),
        {k: tuple(v) for k, v in neighborhoods.items()},
        {k: tuple(sorted(v)) for k, v in counties.items()},
    )


def save_community(
    community: Community, households_csv: Path | str, loads_csv: Path | str
) -> None:
    """Write the two-file CSV schema read back by load_community."""
    county_of = {
        nb: county for county, nbs in community.counties.items() for nb in nbs
    }
    with Path(households_csv).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["id", "neighborhood_id", "county", "baseline_rate", "elasticity"]
            + list(FEATURE_COLUMNS)
        )
        for h in community.households:
            writer.writerow(
                [h.id, h.neighborhood_id, county_of.get(h.neighborhood_id, "na"),
                 repr(h.baseline_rate), repr(h.elasticity)]
                + [repr(float(v)) for v in h.profile.as_vector()]
            )
    with Path(loads_csv).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "timestamp_iso8601", "kwh"])
        for h in community.households:
            for hour, kwh in enumerate(h.load.values):
                ts = h.load.start + timedelta(hours=hour)
                writer.writerow([h.id, ts.isoformat(), repr(float(kwh))])


def normalize_features(community: Community) -> np.ndarray:
    """Z-score the static socio-economic features, shape (n, len(FEATURE_COLUMNS)).

    Constant columns map to all-zeros. Column order follows FEATURE_COLUMNS.
    """
    if len(community) < 2:
        raise InsufficientPopulationError("need >= 2 households to normalize features")
    raw = np.stack([h.profile.as_vector() for h in community.households])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    out = np.zeros_like(raw)
    nonconst = std > 0
    out[:, nonconst] = (raw[:, nonconst] - mean[nonconst]) / std[nonconst]
    return out


def emergency_schedule(config: ScenarioConfig, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniformly sample the emergency-day indices for one billing cycle, sorted."""
    if config.emergency_day_count > config.cycle_days:
        raise InvalidSpecError("more emergency days than cycle days")
    days = rng.choice(config.cycle_days, size=config.emergency_day_count, replace=False)
    return tuple(sorted(int(d) for d in days))
