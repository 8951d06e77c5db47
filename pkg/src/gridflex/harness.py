"""Experiment harness: end-to-end scenario runs, seeded sweeps, and the
noise-robustness study, all emitting deterministic CSV tables plus a manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .community import Community, ScenarioConfig, emergency_schedule, generate_community
from .errors import InvalidSpecError
from .forecaster import Hyper, build_model, make_dataset, similarity_matrix, train
from .metrics import (
    ProgramReport,
    acceptance_rate,
    responsiveness_cost,
    total_demand_reduction,
)
from .selector import run_selection
from .tariff import accept_offer, make_offer, rate_hike


@dataclass(frozen=True)
class CommunitySpec:
    counties: int = 5
    neighborhoods_per_county: int = 1
    households_per_neighborhood: int = 50
    days: int = 30
    baseline_rate: float = 0.16


@dataclass(frozen=True)
class SweepSpec:
    variable: str  # incentive | reduction_pct | participation_pct | noise_level
    values: tuple[float, ...]
    repetitions: int = 1
    outputs: str = "sweep.csv"
    incentive_grid: tuple[float, ...] = ()  # second axis for the rate-hike sweep

    def __post_init__(self):
        allowed = {"incentive", "reduction_pct", "participation_pct", "noise_level"}
        if self.variable not in allowed:
            raise InvalidSpecError(f"unknown sweep variable {self.variable!r}")
        if not self.values or any(
            b <= a for a, b in zip(self.values, self.values[1:])
        ):
            raise InvalidSpecError("values must be a nonempty strictly increasing ladder")
        if self.repetitions < 1:
            raise InvalidSpecError("repetitions must be >= 1")


@dataclass
class RunManifest:
    config: dict
    seeds: list[int]
    version: str = __version__
    digests: dict[str, str] = field(default_factory=dict)

    def record(self, path: Path | str) -> None:
        path = Path(path)
        self.digests[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# -- shared plumbing -----------------------------------------------------------


def write_table(path: Path | str, header: list[str], rows: list[list]) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def resample_elasticities(
    community: Community, seed: int, mean: float = -0.25, std: float = 0.1
) -> Community:
    from .community import sample_elasticity

    rng = np.random.default_rng(seed)
    households = tuple(
        replace(h, elasticity=sample_elasticity(rng, mean, std))
        for h in community.households
    )
    return Community(households, community.neighborhoods, community.counties)


def oracle_truth(
    community: Community,
    incentive: float,
    reduction_pct: float,
    emergency_days: tuple[int, ...],
    cycle_days: int,
) -> dict[str, bool]:
    """Ground-truth accept/reject per household via the cost-comparison oracle."""
    truth = {}
    for h in community.households:
        offer = make_offer(h, incentive, reduction_pct, emergency_days, cycle_days)
        truth[h.id] = accept_offer(h, offer).accepted
    return truth


# -- planted-partition benchmark ----------------------------------------------


@dataclass(frozen=True)
class PlantedSpec:
    """Two elasticity regimes chosen so the default offer splits the population."""

    community: CommunitySpec = CommunitySpec(baseline_rate=0.3)
    reduction_pct: float = 20.0
    incentive: float = 100.0
    flexible_mean: float = -0.5
    flexible_std: float = 0.05
    rigid_mean: float = -0.025
    rigid_std: float = 0.004
    in_weight: float = 1.0
    out_weight: float = 0.25
    jitter: float = 0.5


def planted_community(spec: PlantedSpec, seed: int) -> Community:
    """Synthetic community whose households alternate between two elasticity
    regimes within each neighborhood."""
    from .community import sample_elasticity

    cs = spec.community
    base = generate_community(
        cs.counties, cs.neighborhoods_per_county, cs.households_per_neighborhood,
        seed=seed, days=cs.days, baseline_rate=cs.baseline_rate,
    )
    rng = np.random.default_rng(seed + 1)
    households = []
    for i, h in enumerate(base.households):
        if i % 2 == 0:
            e = sample_elasticity(rng, spec.flexible_mean, spec.flexible_std)
        else:
            e = sample_elasticity(rng, spec.rigid_mean, spec.rigid_std)
        households.append(replace(h, elasticity=e))
    return Community(tuple(households), base.neighborhoods, base.counties)


def label_similarity(
    truth: dict[str, bool], ids: tuple[str, ...], seed: int,
    in_weight: float = 1.0, out_weight: float = 0.25, jitter: float = 0.5,
) -> np.ndarray:
    """Row-stochastic similarity with block structure along the true labels.

    Stand-in for a trained attention matrix at desk scale: same-response pairs
    get high weight, cross pairs low, with seeded multiplicative jitter.
    """
    rng = np.random.default_rng(seed)
    y = np.array([truth[h] for h in ids])
    same = y[:, None] == y[None, :]
    base = np.where(same, in_weight, out_weight)
    base = base * rng.uniform(1 - jitter, 1 + jitter, size=base.shape)
    return base / base.sum(axis=1, keepdims=True)


# -- end-to-end scenario -------------------------------------------------------


def run_scenario(
    config: ScenarioConfig,
    community_spec: CommunitySpec = CommunitySpec(),
    hyper: Hyper | None = None,
    hidden_size: int = 32,
    head_count: int = 4,
    stride: int = 24,
    shortfall_kwh_per_day: float = 0.0,
) -> tuple[ProgramReport, dict]:
    """Full pipeline: generate community, train the forecaster, run selection,
    make offers to the top-scoring predicted acceptors, settle the tariff.

    Returns the report plus a details dict with per-household raw outputs.
    """
    hyper = hyper or Hyper(split_ratios=config.split_ratios)
    community = generate_community(
        community_spec.counties,
        community_spec.neighborhoods_per_county,
        community_spec.households_per_neighborhood,
        seed=config.rng_seed,
        days=community_spec.days,
        elasticity_mean=config.elasticity_mean,
        elasticity_std=config.elasticity_std,
        baseline_rate=community_spec.baseline_rate,
    )
    rng = np.random.default_rng(config.rng_seed)
    emergency_days = emergency_schedule(config, rng)
    truth = oracle_truth(
        community, config.default_incentive, config.target_reduction_pct,
        emergency_days, config.cycle_days,
    )

    data = make_dataset(community, window=24, stride=stride)
    model = build_model(
        np.random.default_rng(config.rng_seed), hidden_size=hidden_size,
        head_count=head_count, socio_width=data.socio.shape[1],
    )
    train(model, data, hyper)
    similarity = similarity_matrix(model, data)

    selection = run_selection(
        community, similarity, truth, seed=config.rng_seed, hyper=hyper
    )

    ids = selection.household_ids
    # Offer pool: predicted acceptors ranked by classifier accept-probability,
    # capped at the configured participation fraction. Ties break on id.
    cap = int(round(config.participation_fraction * len(ids)))
    scores = _classifier_scores(selection, similarity, config.rng_seed, hyper)
    candidates = sorted(
        (hid for hid, pred in zip(ids, selection.predicted) if pred),
        key=lambda hid: (-scores[hid], hid),
    )[:cap]

    outcomes = []
    participants: set[str] = set()
    incentives: dict[str, float] = {}
    reductions: list[float] = []
    for hid in candidates:
        h = community.by_id(hid)
        offer = make_offer(
            h, config.default_incentive, config.target_reduction_pct,
            emergency_days, config.cycle_days,
        )
        outcome = accept_offer(h, offer)
        outcomes.append(outcome)
        if outcome.accepted:
            participants.add(hid)
            incentives[hid] = config.default_incentive
            daily = h.load.daily_totals()
            reductions.append(
                sum(daily[d] for d in emergency_days) * config.target_reduction_pct / 100.0
            )

    nonparticipants = [h for h in community.households if h.id not in participants]
    r_extra = rate_hike(nonparticipants, list(incentives.values()), config.cycle_days)
    per_day_reduction = {
        d: sum(
            community.by_id(hid).load.daily_totals()[d]
            * config.target_reduction_pct / 100.0
            for hid in participants
        )
        for d in emergency_days
    }
    report = ProgramReport(
        acceptance_rate_pct=acceptance_rate(outcomes) if outcomes else 0.0,
        responsiveness_cost=(
            responsiveness_cost(list(incentives.values()), reductions)
            if reductions
            else 0.0
        ),
        total_reduction_pct=total_demand_reduction(
            community, participants, config.target_reduction_pct, emergency_days
        ),
        incentive_total=float(sum(incentives.values())),
        r_extra=r_extra,
        shortfall_met=tuple(
            bool(per_day_reduction[d] >= shortfall_kwh_per_day)
            for d in emergency_days
        ),
    )
    details = {
        "emergency_days": emergency_days,
        "participants": sorted(participants),
        "selection_accuracy_pct": selection.accuracy_pct,
        "outcomes": outcomes,
        "truth": truth,
        "similarity": similarity,
        "community": community,
    }
    return report, details


def _classifier_scores(selection, similarity: np.ndarray, seed: int,
                       hyper: Hyper | None = None) -> dict[str, float]:
    """Classifier accept-probability per household (for the participation cap)."""
    from .errors import DegenerateSupervisionError
    from .selector import SelectionGraph, classify

    graph = SelectionGraph(selection.household_ids, similarity)
    try:
        _, probs = classify(graph, dict(selection.true_labels), hyper=hyper, seed=seed)
    except DegenerateSupervisionError:
        probs = np.ones(len(selection.household_ids))
    return {hid: float(p) for hid, p in zip(selection.household_ids, probs)}


# -- sweeps --------------------------------------------------------------------


def sweep_incentive(
    spec: SweepSpec,
    scenario: ScenarioConfig,
    community_spec: CommunitySpec = CommunitySpec(),
) -> list[dict]:
    """Offers to every household at each incentive on the ladder."""
    rows = []
    base = generate_community(
        community_spec.counties, community_spec.neighborhoods_per_county,
        community_spec.households_per_neighborhood, seed=scenario.rng_seed,
        days=community_spec.days, baseline_rate=community_spec.baseline_rate,
    )
    for rep in range(spec.repetitions):
        seed = scenario.rng_seed + rep
        community = resample_elasticities(
            base, seed, scenario.elasticity_mean, scenario.elasticity_std
        )
        rng = np.random.default_rng(seed)
        emergency_days = emergency_schedule(scenario, rng)
        for incentive in spec.values:
            outcomes = []
            incentives = []
            reductions = []
            acceptors: set[str] = set()
            for h in community.households:
                offer = make_offer(
                    h, incentive, scenario.target_reduction_pct,
                    emergency_days, scenario.cycle_days,
                )
                outcome = accept_offer(h, offer)
                outcomes.append(outcome)
                if outcome.accepted:
                    acceptors.add(h.id)
                    incentives.append(incentive)
                    daily = h.load.daily_totals()
                    reductions.append(
                        sum(daily[d] for d in emergency_days)
                        * scenario.target_reduction_pct / 100.0
                    )
            rows.append({
                "seed": seed,
                "incentive": incentive,
                "acceptance_rate_pct": acceptance_rate(outcomes),
                "responsiveness_cost": (
                    responsiveness_cost(incentives, reductions)
                    if reductions else float("nan")
                ),
                "total_reduction_pct": total_demand_reduction(
                    community, acceptors, scenario.target_reduction_pct, emergency_days
                ),
                "accepted": len(acceptors),
                "offered": len(outcomes),
                "incentive_total": float(sum(incentives)),
                "reduction_kwh_total": float(sum(reductions)),
            })
    return rows


def _framework_quarter(community: Community, scenario: ScenarioConfig,
                       emergency_days: tuple[int, ...], seed: int,
                       skew_by_consumption: bool = False) -> list[str]:
    """Top quarter of households: classifier score order, or consumption order
    for the skewed variant."""
    if skew_by_consumption:
        ranked = sorted(
            community.households,
            key=lambda h: (-float(h.load.daily_totals().sum()), h.id),
        )
    else:
        truth = oracle_truth(
            community, scenario.default_incentive, scenario.target_reduction_pct,
            emergency_days, scenario.cycle_days,
        )
        similarity = label_similarity(
            truth, tuple(h.id for h in community.households), seed
        )
        selection = run_selection(community, similarity, truth, seed=seed)
        score = _classifier_scores(selection, similarity, seed)
        ranked = sorted(
            community.households, key=lambda h: (-score[h.id], h.id)
        )
    count = int(round(0.25 * len(community)))
    return [h.id for h in ranked[:count]]


def sweep_reduction(
    spec: SweepSpec,
    scenario: ScenarioConfig,
    community_spec: CommunitySpec = CommunitySpec(),
) -> list[dict]:
    """Participant-reduction ladder for the framework-selected quarter, with a
    separate consumption-skewed selection variant."""
    rows = []
    base = generate_community(
        community_spec.counties, community_spec.neighborhoods_per_county,
        community_spec.households_per_neighborhood, seed=scenario.rng_seed,
        days=community_spec.days, baseline_rate=community_spec.baseline_rate,
    )
    for rep in range(spec.repetitions):
        seed = scenario.rng_seed + rep
        community = resample_elasticities(
            base, seed, scenario.elasticity_mean, scenario.elasticity_std
        )
        rng = np.random.default_rng(seed)
        emergency_days = emergency_schedule(scenario, rng)
        for variant, skew in (("framework", False), ("skewed", True)):
            participants = set(
                _framework_quarter(community, scenario, emergency_days, seed, skew)
            )
            for reduction in spec.values:
                reductions = [
                    sum(community.by_id(hid).load.daily_totals()[d]
                        for d in emergency_days) * reduction / 100.0
                    for hid in participants
                ]
                rows.append({
                    "seed": seed,
                    "scenario": variant,
                    "participant_reduction_pct": reduction,
                    "total_reduction_pct": total_demand_reduction(
                        community, participants, reduction, emergency_days
                    ),
                    "responsiveness_cost": responsiveness_cost(
                        [scenario.default_incentive] * len(participants), reductions
                    ),
                    "incentive_total": scenario.default_incentive * len(participants),
                    "reduction_kwh_total": float(sum(reductions)),
                })
    return rows


def sweep_rate_hike(
    spec: SweepSpec,
    scenario: ScenarioConfig,
    community_spec: CommunitySpec = CommunitySpec(),
) -> list[dict]:
    """Grid over participation fraction (ladder) and incentive (incentive_grid)."""
    incentive_grid = spec.incentive_grid or (100.0, 150.0, 200.0)
    rows = []
    base = generate_community(
        community_spec.counties, community_spec.neighborhoods_per_county,
        community_spec.households_per_neighborhood, seed=scenario.rng_seed,
        days=community_spec.days, baseline_rate=community_spec.baseline_rate,
    )
    for rep in range(spec.repetitions):
        seed = scenario.rng_seed + rep
        community = resample_elasticities(
            base, seed, scenario.elasticity_mean, scenario.elasticity_std
        )
        rng = np.random.default_rng(seed)
        emergency_days = emergency_schedule(scenario, rng)
        truth = oracle_truth(
            community, scenario.default_incentive, scenario.target_reduction_pct,
            emergency_days, scenario.cycle_days,
        )
        similarity = label_similarity(
            truth, tuple(h.id for h in community.households), seed
        )
        selection = run_selection(community, similarity, truth, seed=seed)
        score = _classifier_scores(selection, similarity, seed)
        ranked = sorted(selection.household_ids, key=lambda hid: (-score[hid], hid))
        for participation_pct in spec.values:
            count = int(round(participation_pct / 100.0 * len(community)))
            participants = set(ranked[:count])
            nonparticipants = [
                h for h in community.households if h.id not in participants
            ]
            for incentive in incentive_grid:
                r_extra = rate_hike(
                    nonparticipants, [incentive] * count, scenario.cycle_days
                )
                rows.append({
                    "seed": seed,
                    "participation_pct": participation_pct,
                    "incentive": incentive,
                    "r_extra": r_extra,
                    "incentive_total": incentive * count,
                    "nonparticipant_kwh": sum(
                        float(h.load.daily_totals()[: scenario.cycle_days].sum())
                        for h in nonparticipants
                    ),
                })
    return rows


def noise_experiment(
    spec: SweepSpec,
    planted: PlantedSpec = PlantedSpec(),
) -> list[dict]:
    """Selection accuracy vs similarity-matrix noise level, aggregated over seeds."""
    if spec.repetitions < 1:
        raise InvalidSpecError("noise study needs >= 1 repetition")
    per_level: dict[float, list[float]] = {lvl: [] for lvl in spec.values}
    for rep in range(spec.repetitions):
        seed = rep
        community = planted_community(planted, seed)
        rng = np.random.default_rng(seed + 10_000)
        emergency_days = tuple(
            sorted(int(d) for d in rng.choice(planted.community.days, size=3,
                                              replace=False))
        )
        truth = oracle_truth(
            community, planted.incentive, planted.reduction_pct,
            emergency_days, planted.community.days,
        )
        ids = tuple(h.id for h in community.households)
        clean = label_similarity(
            truth, ids, seed, planted.in_weight, planted.out_weight, planted.jitter
        )
        from .selector import inject_noise

        for level in spec.values:
            noisy = inject_noise(clean, level, seed=seed + 20_000)
            result = run_selection(community, noisy, truth, seed=seed)
            per_level[level].append(result.accuracy_pct)
    return [
        {
            "noise_level_pct": level,
            "mean_accuracy_pct": float(np.mean(accs)),
            "std_accuracy_pct": float(np.std(accs)),
            "seeds": len(accs),
        }
        for level, accs in per_level.items()
    ]


def rows_to_csv(rows: list[dict], path: Path | str) -> None:
    if not rows:
        raise InvalidSpecError("no rows to write")
    header = list(rows[0])
    write_table(path, header, [[_fmt(r[c]) if isinstance(r[c], float) else r[c]
                                for c in header] for r in rows])
