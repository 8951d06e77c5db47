"""Command-line entry points: generate / train / select / run / sweep / noise."""

from __future__ import annotations

import argparse
import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .community import (
    Community,
    ScenarioConfig,
    emergency_schedule,
    generate_community,
    load_community,
    save_community,
)
from .forecaster import (
    Hyper,
    build_model,
    make_dataset,
    save_checkpoint,
    similarity_matrix,
    train,
)
from .harness import (
    CommunitySpec,
    PlantedSpec,
    RunManifest,
    SweepSpec,
    noise_experiment,
    oracle_truth,
    rows_to_csv,
    run_scenario,
    sweep_incentive,
    sweep_rate_hike,
    sweep_reduction,
)
from .selector import export_selection, run_selection


def _write_similarity(path: Path, ids: tuple[str, ...], matrix: np.ndarray) -> None:
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ids)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def _read_similarity(path: Path) -> tuple[tuple[str, ...], np.ndarray]:
    with path.open(newline="") as f:
        reader = csv.reader(f)
        ids = tuple(next(reader))
        matrix = np.array([[float(v) for v in row] for row in reader])
    return ids, matrix


def _load_or_generate(args) -> Community:
    if args.households_csv and args.loads_csv:
        return load_community(args.households_csv, args.loads_csv)
    return generate_community(
        args.counties, args.neighborhoods, args.households,
        seed=args.seed, days=args.days,
    )


def _add_community_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--households-csv", type=Path, default=None)
    p.add_argument("--loads-csv", type=Path, default=None)
    p.add_argument("--counties", type=int, default=5)
    p.add_argument("--neighborhoods", type=int, default=1)
    p.add_argument("--households", type=int, default=50)
    p.add_argument("--days", type=int, default=30)


def cmd_generate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    community = generate_community(
        args.counties, args.neighborhoods, args.households,
        seed=args.seed, days=args.days, baseline_rate=args.baseline_rate,
    )
    save_community(community, out / "households.csv", out / "loads.csv")
    manifest = RunManifest(config=vars_serializable(args), seeds=[args.seed])
    manifest.record(out / "households.csv")
    manifest.record(out / "loads.csv")
    manifest.write(out / "manifest.json")
    print(f"wrote {len(community)} households to {out}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    community = _load_or_generate(args)
    data = make_dataset(community, window=24, stride=args.stride)
    hyper = Hyper(epochs=args.epochs, learning_rate=args.learning_rate,
                  batch_size=args.batch_size)
    model = build_model(np.random.default_rng(args.seed), hidden_size=args.hidden,
                        head_count=args.heads, socio_width=data.socio.shape[1])
    result = train(model, data, hyper)
    save_checkpoint(model, out / "checkpoint.npz", seed=args.seed, hyper=hyper)
    similarity = similarity_matrix(model, data)
    ids = tuple(h.id for h in community.households)
    _write_similarity(out / "similarity.csv", ids, similarity)
    rows_to_csv(
        [{"epoch": i, "train_mse": t, "val_mse": v}
         for i, (t, v) in enumerate(zip(result.train_mse, result.val_mse))],
        out / "loss_history.csv",
    )
    manifest = RunManifest(config=vars_serializable(args), seeds=[args.seed])
    for name in ("similarity.csv", "loss_history.csv"):
        manifest.record(out / name)
    manifest.write(out / "manifest.json")
    print(f"initial val MSE {result.initial_val_mse:.6f} -> final "
          f"{result.val_mse[-1]:.6f}")
    return 0


def cmd_select(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    community = _load_or_generate(args)
    ids, similarity = _read_similarity(args.similarity_csv)
    config = ScenarioConfig(cycle_days=args.days, rng_seed=args.seed,
                            default_incentive=args.incentive,
                            target_reduction_pct=args.reduction)
    rng = np.random.default_rng(args.seed)
    emergency_days = emergency_schedule(config, rng)
    truth = oracle_truth(community, args.incentive, args.reduction,
                         emergency_days, args.days)
    result = run_selection(community, similarity, truth, seed=args.seed)
    export_selection(result, truth, out / "selection.csv")
    manifest = RunManifest(config=vars_serializable(args), seeds=[args.seed])
    manifest.record(out / "selection.csv")
    manifest.write(out / "manifest.json")
    print(f"selection accuracy on unqueried households: {result.accuracy_pct:.2f}%")
    return 0


def cmd_run(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = json.loads(Path(args.config).read_text())
    scenario = ScenarioConfig(**raw.get("scenario", {}))
    community_spec = CommunitySpec(**raw.get("community", {}))
    hyper = Hyper(split_ratios=scenario.split_ratios, **raw.get("hyper", {}))
    report, details = run_scenario(
        scenario, community_spec, hyper,
        hidden_size=raw.get("hidden_size", 32),
        head_count=raw.get("head_count", 4),
        stride=raw.get("stride", 24),
        shortfall_kwh_per_day=raw.get("shortfall_kwh_per_day", 0.0),
    )
    (out / "report.json").write_text(
        json.dumps(asdict(report), indent=2, sort_keys=True) + "\n"
    )
    rows_to_csv(
        [{"household_id": o.offer.household_id,
          "accepted": int(o.accepted),
          "min_incentive": o.min_incentive,
          "cost_baseline": o.cost_baseline,
          "cost_program": o.cost_program}
         for o in details["outcomes"]],
        out / "offers.csv",
    ) if details["outcomes"] else None
    _write_similarity(out / "similarity.csv",
                      tuple(h.id for h in details["community"].households),
                      details["similarity"])
    manifest = RunManifest(config=raw, seeds=[scenario.rng_seed])
    for name in ("report.json", "similarity.csv"):
        manifest.record(out / name)
    if details["outcomes"]:
        manifest.record(out / "offers.csv")
    manifest.write(out / "manifest.json")
    print(json.dumps(asdict(report), indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw = json.loads(Path(args.spec).read_text())
    spec = SweepSpec(
        variable=raw["variable"], values=tuple(raw["values"]),
        repetitions=raw.get("repetitions", 1),
        outputs=raw.get("outputs", "sweep.csv"),
        incentive_grid=tuple(raw.get("incentive_grid", ())),
    )
    scenario = ScenarioConfig(**raw.get("scenario", {}))
    community_spec = CommunitySpec(**raw.get("community", {}))
    if spec.variable == "incentive":
        rows = sweep_incentive(spec, scenario, community_spec)
    elif spec.variable == "reduction_pct":
        rows = sweep_reduction(spec, scenario, community_spec)
    elif spec.variable == "participation_pct":
        rows = sweep_rate_hike(spec, scenario, community_spec)
    else:
        rows = noise_experiment(spec)
    path = out / spec.outputs
    rows_to_csv(rows, path)
    manifest = RunManifest(config=raw,
                           seeds=list(range(scenario.rng_seed,
                                            scenario.rng_seed + spec.repetitions)))
    manifest.record(path)
    manifest.write(out / "manifest.json")
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_noise(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SweepSpec(variable="noise_level",
                     values=tuple(float(v) for v in args.levels.split(",")),
                     repetitions=args.seeds, outputs="noise.csv")
    rows = noise_experiment(spec, PlantedSpec())
    path = out / spec.outputs
    rows_to_csv(rows, path)
    manifest = RunManifest(config=vars_serializable(args),
                           seeds=list(range(args.seeds)))
    manifest.record(path)
    manifest.write(out / "manifest.json")
    for row in rows:
        print(f"noise {row['noise_level_pct']:>5}% : "
              f"mean accuracy {row['mean_accuracy_pct']:.2f}%")
    return 0


def vars_serializable(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridflex",
        description="Emergency demand-response program simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic community")
    p.add_argument("--counties", type=int, default=5)
    p.add_argument("--neighborhoods", type=int, default=1)
    p.add_argument("--households", type=int, default=50)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--baseline-rate", type=float, default=0.16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the forecaster, export the similarity matrix")
    _add_community_args(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=3e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--stride", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="run the selection pipeline on a similarity matrix")
    _add_community_args(p)
    p.add_argument("--similarity-csv", type=Path, required=True)
    p.add_argument("--incentive", type=float, default=100.0)
    p.add_argument("--reduction", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("run", help="end-to-end scenario from a JSON config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep described by a JSON spec")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("noise", help="similarity-noise robustness study")
    p.add_argument("--levels", type=str, default="0,25,50,75")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.set_defaults(func=cmd_noise)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
