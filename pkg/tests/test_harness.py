"""Experiment harness: sweep-row identities recomputed from raw columns,
planted benchmark construction, manifests, and CLI determinism."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from gridflex.cli import main
from gridflex.community import ScenarioConfig
from gridflex.errors import InvalidSpecError
from gridflex.harness import (
    CommunitySpec,
    PlantedSpec,
    RunManifest,
    SweepSpec,
    label_similarity,
    noise_experiment,
    oracle_truth,
    planted_community,
    resample_elasticities,
    rows_to_csv,
    run_scenario,
    sweep_incentive,
    sweep_rate_hike,
    sweep_reduction,
)
from gridflex.selector import check_similarity
from gridflex.tariff import accept_offer, make_offer

SMALL = CommunitySpec(counties=2, neighborhoods_per_county=1,
                      households_per_neighborhood=10, days=10)
SMALL_SCENARIO = ScenarioConfig(cycle_days=10, emergency_day_count=2, rng_seed=0)


class TestSpecs:
    def test_sweep_spec_rejects_unknown_variable(self):
        with pytest.raises(InvalidSpecError):
            SweepSpec(variable="voltage", values=(1.0,))

    def test_sweep_spec_rejects_non_increasing_ladder(self):
        with pytest.raises(InvalidSpecError):
            SweepSpec(variable="incentive", values=(10.0, 10.0))

    def test_manifest_records_digests(self, tmp_path):
        target = tmp_path / "x.csv"
        target.write_text("a,b\n1,2\n")
        manifest = RunManifest(config={"k": 1}, seeds=[0])
        manifest.record(target)
        manifest.write(tmp_path / "manifest.json")
        blob = json.loads((tmp_path / "manifest.json").read_text())
        assert blob["seeds"] == [0]
        assert len(blob["digests"]["x.csv"]) == 64


class TestOracleTruth:
    def test_matches_direct_offer_evaluation(self):
        community = planted_community(PlantedSpec(community=SMALL), seed=0)
        days = (2, 7)
        truth = oracle_truth(community, 100.0, 20.0, days, 10)
        for h in community.households:
            offer = make_offer(h, 100.0, 20.0, days, 10)
            assert truth[h.id] == accept_offer(h, offer).accepted

    def test_resample_preserves_structure(self):
        community = planted_community(PlantedSpec(community=SMALL), seed=0)
        resampled = resample_elasticities(community, seed=9)
        assert [h.id for h in resampled.households] == [
            h.id for h in community.households
        ]
        assert any(a.elasticity != b.elasticity
                   for a, b in zip(community.households, resampled.households))


class TestPlantedBenchmark:
    def test_alternating_regimes(self):
        spec = PlantedSpec(community=SMALL)
        community = planted_community(spec, seed=3)
        for i, h in enumerate(community.households):
            if i % 2 == 0:
                assert -0.8 < h.elasticity < -0.3  # flexible regime
            else:
                assert -0.05 < h.elasticity < -0.01  # rigid regime

    def test_default_offer_splits_population(self):
        spec = PlantedSpec()
        community = planted_community(spec, seed=0)
        truth = oracle_truth(community, spec.incentive, spec.reduction_pct,
                             (5, 12, 20), spec.community.days)
        share = np.mean([truth[h.id] for h in community.households])
        assert 0.2 < share < 0.8

    def test_label_similarity_structure(self):
        truth = {f"h{i}": i < 5 for i in range(10)}
        ids = tuple(truth)
        a = label_similarity(truth, ids, seed=0)
        check_similarity(a)
        y = np.array([truth[h] for h in ids])
        same = y[:, None] == y[None, :]
        assert a[same].mean() > 2 * a[~same].mean()


class TestSweepIdentities:
    """Each sweep row must satisfy the defining ratios recomputed from its own
    raw columns (totals are exported precisely so readers can re-derive)."""

    def test_incentive_sweep_rows(self):
        spec = SweepSpec(variable="incentive", values=(0.0, 5.0, 50.0),
                         repetitions=2)
        rows = sweep_incentive(spec, SMALL_SCENARIO, SMALL)
        assert len(rows) == 6
        for row in rows:
            assert row["acceptance_rate_pct"] == pytest.approx(
                100.0 * row["accepted"] / row["offered"]
            )
            if row["reduction_kwh_total"] > 0:
                assert row["responsiveness_cost"] == pytest.approx(
                    row["incentive_total"] / row["reduction_kwh_total"]
                )

    def test_incentive_sweep_acceptance_monotone(self):
        spec = SweepSpec(variable="incentive", values=(0.0, 10.0, 100.0, 1000.0))
        rows = sweep_incentive(spec, SMALL_SCENARIO, SMALL)
        rates = [r["acceptance_rate_pct"] for r in rows]
        assert rates == sorted(rates)
        assert rates[-1] == pytest.approx(100.0)

    def test_reduction_sweep_rows(self):
        spec = SweepSpec(variable="reduction_pct", values=(5.0, 10.0, 20.0))
        rows = sweep_reduction(spec, SMALL_SCENARIO, SMALL)
        assert {r["scenario"] for r in rows} == {"framework", "skewed"}
        for row in rows:
            assert row["responsiveness_cost"] == pytest.approx(
                row["incentive_total"] / row["reduction_kwh_total"]
            )
        # At a fixed incentive, paying for deeper reductions is cheaper per kWh.
        for variant in ("framework", "skewed"):
            costs = [r["responsiveness_cost"] for r in rows
                     if r["scenario"] == variant]
            assert costs == sorted(costs, reverse=True)

    def test_rate_hike_sweep_rows(self):
        spec = SweepSpec(variable="participation_pct", values=(10.0, 25.0),
                         incentive_grid=(50.0, 100.0))
        rows = sweep_rate_hike(spec, SMALL_SCENARIO, SMALL)
        assert len(rows) == 4
        for row in rows:
            assert row["r_extra"] == pytest.approx(
                row["incentive_total"] / row["nonparticipant_kwh"]
            )

    def test_noise_experiment_shape(self):
        spec = SweepSpec(variable="noise_level", values=(0.0, 50.0),
                         repetitions=2)
        rows = noise_experiment(spec, PlantedSpec(community=SMALL))
        assert [r["noise_level_pct"] for r in rows] == [0.0, 50.0]
        for row in rows:
            assert row["seeds"] == 2
            assert 0.0 <= row["mean_accuracy_pct"] <= 100.0


@pytest.fixture(scope="module")
def scenario_result():
    from gridflex.forecaster import Hyper

    return run_scenario(
        SMALL_SCENARIO, SMALL,
        hyper=Hyper(epochs=2, batch_size=4, split_ratios=(0.7, 0.2, 0.1)),
        hidden_size=4, head_count=2, stride=12,
    )


class TestRunScenario:
    def test_report_fields_consistent(self, scenario_result):
        report, details = scenario_result
        assert 0.0 <= report.acceptance_rate_pct <= 100.0
        assert 0.0 <= report.total_reduction_pct <= SMALL_SCENARIO.target_reduction_pct
        assert report.incentive_total == pytest.approx(
            SMALL_SCENARIO.default_incentive * len(details["participants"])
        )
        assert len(report.shortfall_met) == SMALL_SCENARIO.emergency_day_count

    def test_participants_cap(self, scenario_result):
        _, details = scenario_result
        cap = round(SMALL_SCENARIO.participation_fraction * 20)
        assert len(details["outcomes"]) <= cap
        assert set(details["participants"]) <= {
            o.offer.household_id for o in details["outcomes"]
        }

    def test_rate_hike_funds_incentives(self, scenario_result):
        report, details = scenario_result
        community = details["community"]
        nonparticipants = [h for h in community.households
                           if h.id not in set(details["participants"])]
        collected = sum(
            h.load.daily_totals()[:SMALL_SCENARIO.cycle_days].sum() * report.r_extra
            for h in nonparticipants
        )
        assert collected == pytest.approx(report.incentive_total, rel=1e-9)

    def test_similarity_is_valid(self, scenario_result):
        _, details = scenario_result
        check_similarity(details["similarity"])


class TestCsvOutput:
    def test_rows_to_csv_roundtrip(self, tmp_path):
        rows = [{"a": 1, "b": 0.123456789012}, {"a": 2, "b": float("nan")}]
        path = tmp_path / "t.csv"
        rows_to_csv(rows, path)
        with path.open(newline="") as f:
            back = list(csv.DictReader(f))
        assert back[0]["a"] == "1"
        assert float(back[0]["b"]) == pytest.approx(0.123456789012)

    def test_rows_to_csv_rejects_empty(self, tmp_path):
        with pytest.raises(InvalidSpecError):
            rows_to_csv([], tmp_path / "t.csv")


class TestCli:
    def test_generate(self, tmp_path):
        assert main(["generate", "--counties", "2", "--households", "3",
                     "--days", "2", "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "households.csv").exists()
        assert (tmp_path / "loads.csv").exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest["digests"]) == {"households.csv", "loads.csv"}

    def test_train_and_select(self, tmp_path):
        train_dir = tmp_path / "train"
        assert main(["train", "--counties", "1", "--households", "8",
                     "--days", "6", "--epochs", "2", "--hidden", "4",
                     "--heads", "2", "--stride", "12",
                     "--out-dir", str(train_dir)]) == 0
        assert (train_dir / "checkpoint.npz").exists()
        assert (train_dir / "similarity.csv").exists()
        select_dir = tmp_path / "select"
        assert main(["select", "--counties", "1", "--households", "8",
                     "--days", "6",
                     "--similarity-csv", str(train_dir / "similarity.csv"),
                     "--out-dir", str(select_dir)]) == 0
        with (select_dir / "selection.csv").open(newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 8

    def test_sweep(self, tmp_path):
        spec = {
            "variable": "incentive",
            "values": [0.0, 20.0],
            "scenario": {"cycle_days": 10, "emergency_day_count": 2},
            "community": {"counties": 1, "households_per_neighborhood": 6,
                          "days": 10},
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert main(["sweep", "--spec", str(spec_path),
                     "--out-dir", str(tmp_path)]) == 0
        with (tmp_path / "sweep.csv").open(newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2

    def test_run_deterministic(self, tmp_path):
        config = {
            "scenario": {"cycle_days": 8, "emergency_day_count": 2,
                         "rng_seed": 1},
            "community": {"counties": 1, "households_per_neighborhood": 8,
                          "days": 8},
            "hyper": {"epochs": 1, "batch_size": 4},
            "hidden_size": 4,
            "head_count": 2,
            "stride": 12,
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["run", "--config", str(config_path),
                         "--out-dir", str(out)]) == 0
            outputs.append({
                name: (out / name).read_bytes()
                for name in ("report.json", "similarity.csv")
            })
        assert outputs[0] == outputs[1]
