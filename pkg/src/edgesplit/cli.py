"""Operator pipeline: profile -> train-predictor -> optimize -> simulate
-> boost -> report.

Every command writes versioned artifacts into a run directory and is
deterministic for a fixed seed, so reruns are byte-identical.  Seeds are
mandatory wherever randomness exists; there is no wall-clock fallback.
Failures exit nonzero after printing a one-line JSON error record to
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .bayesopt import bayes_search
from .distill import ToyClassifier, calibrate_sequence, evaluate
from .errors import ConfigError, EdgesplitError, MissingArtifact
from .fileio import FORMAT_VERSION, load_config, load_transformer, write_csv
from .latency import (collect_dataset, dataset_from_csv, dataset_to_csv,
                      load_predictor, save_predictor, train_predictor)
from .model import validate_policy
from .objective import CapacityOracle, DistillationOracle
from .sim import MODES, energy, simulate, timeline_csv, workload_from_policy


def _write_json(path, blob: dict) -> None:
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_artifact_json(path) -> dict:
    try:
        with open(path) as fh:
            blob = json.load(fh)
    except FileNotFoundError:
        raise MissingArtifact(f"expected artifact {path}; "
                              "run the earlier pipeline stages first")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"artifact {path} is not valid JSON: {exc}")
    if "format_version" not in blob:
        raise ConfigError(f"artifact {path} has no format_version field")
    return blob


def _load_configs(args):
    base, fleet = load_config(args.fleet)
    if getattr(args, "transformer", None):
        base = load_transformer(args.transformer)
    return base, fleet


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_path(out: Path, device_name: str) -> Path:
    return out / f"latency_{device_name}.csv"


def _predictor_path(out: Path, device_name: str) -> Path:
    return out / f"predictor_{device_name}.json"


def cmd_profile(args) -> int:
    base, fleet = _load_configs(args)
    out = _outdir(args)
    for i, dev in enumerate(fleet.devices):
        samples = collect_dataset(dev, base, args.samples,
                                  np.random.default_rng([args.seed, i]))
        path = _dataset_path(out, dev.name)
        path.write_text(f"# format_version={FORMAT_VERSION}\n"
                        + dataset_to_csv(samples))
        print(f"profiled {dev.name}: {len(samples)} samples -> {path}")
    return 0


def cmd_train_predictor(args) -> int:
    base, fleet = _load_configs(args)
    out = _outdir(args)
    rows = []
    for i, dev in enumerate(fleet.devices):
        path = _dataset_path(out, dev.name)
        if not path.exists():
            raise MissingArtifact(f"latency dataset {path} not found; "
                                  "run 'profile' first")
        data = dataset_from_csv(path.read_text())
        model = train_predictor(data, epochs=args.epochs, lr=args.lr,
                                rng=np.random.default_rng([args.seed, 1, i]),
                                hidden_dim=args.hidden)
        save_predictor(model, _predictor_path(out, dev.name))
        mean_ms = float(np.mean([s.latency_ms for s in data]))
        pct = 100.0 * model.heldout_rmse_ms / mean_ms
        rows.append(f"{dev.name},{len(data)},{args.hidden},{args.epochs},"
                    f"{args.lr!r},{model.heldout_rmse_ms!r},{mean_ms!r},"
                    f"{pct!r}")
        print(f"trained predictor for {dev.name}: held-out RMSE "
              f"{model.heldout_rmse_ms:.3f} ms ({pct:.2f}% of mean)")
    write_csv(out / "predictor_metrics.csv",
              "device,n_samples,hidden,epochs,lr,rmse_ms,mean_latency_ms,"
              "rmse_pct", rows)
    return 0


def _load_predictors(out: Path, fleet) -> dict:
    predictors = {}
    for dev in fleet.devices:
        path = _predictor_path(out, dev.name)
        if not path.exists():
            raise MissingArtifact(f"predictor {path} not found; "
                                  "run 'train-predictor' first")
        predictors[dev.name] = load_predictor(path)
    return predictors


def cmd_optimize(args) -> int:
    base, fleet = _load_configs(args)
    out = _outdir(args)
    predictors = _load_predictors(out, fleet)
    oracle = CapacityOracle(base)
    result = bayes_search(base, fleet, predictors, oracle,
                          n_init=args.r, n_iter=args.iters,
                          delta=args.delta, seed=args.seed)
    policy_path = out / "policy_best.json"
    fileio.save_policy(result.best_policy, policy_path, extra={
        "seed": args.seed, "r": args.r, "iters": args.iters,
        "delta": args.delta,
        "objective": {"degradation": result.best_value.degradation,
                      "latency_ms": result.best_value.latency_ms,
                      "psi": result.best_value.psi}})
    # round-trip integrity: the file we just wrote must decode to a
    # policy the fleet can actually run
    reloaded = fileio.load_policy(policy_path)
    report = validate_policy(reloaded, base, fleet)
    if not report.satisfied:
        raise ConfigError(f"emitted policy fails validation: {report}")
    write_csv(out / "search_log.csv",
              "iteration,degradation,latency_ms,psi,best_psi",
              [f"{r.iteration},{r.degradation!r},{r.latency_ms!r},"
               f"{r.psi!r},{r.best_psi!r}" for r in result.records])
    print(f"best psi {result.best_value.psi:.6f} "
          f"(degradation {result.best_value.degradation:.6f}, "
          f"latency {result.best_value.latency_ms:.3f} ms) -> {policy_path}")
    return 0


def _slowest_device(fleet) -> int:
    return min(range(len(fleet)), key=lambda i: fleet.devices[i].compute)


def cmd_simulate(args) -> int:
    base, fleet = _load_configs(args)
    out = _outdir(args)
    policy = fileio.load_policy(args.policy)
    report = validate_policy(policy, base, fleet)
    if not report.satisfied:
        raise ConfigError(f"policy {args.policy} infeasible on this fleet: "
                          f"{report}")
    workload = workload_from_policy(policy, fleet, base)
    modes = [args.mode] if args.mode else list(MODES)
    for mode in modes:
        rep = simulate(workload, fleet, mode,
                       single_device=_slowest_device(fleet))
        _write_json(out / f"sim_{mode}.json", {
            "format_version": FORMAT_VERSION,
            "mode": rep.mode,
            "end_to_end_ms": rep.end_to_end_ms,
            "transmission_fraction": rep.transmission_fraction,
            "total_energy_mj": rep.total_energy_mj,
            "device_stats": [
                {"name": s.name, "busy_ms": s.busy_ms,
                 "transmit_ms": s.transmit_ms, "idle_ms": s.idle_ms,
                 "energy_mj": s.energy_mj} for s in rep.device_stats]})
        (out / f"timeline_{mode}.csv").write_text(
            f"# format_version={FORMAT_VERSION}\n" + timeline_csv(rep))
        print(f"{mode}: {rep.end_to_end_ms:.3f} ms end-to-end, "
              f"{rep.total_energy_mj:.3f} mJ, "
              f"transmission {100 * rep.transmission_fraction:.1f}%")
    return 0


def cmd_boost(args) -> int:
    base, fleet = _load_configs(args)
    out = _outdir(args)
    policy = fileio.load_policy(args.policy)
    if len(policy) != len(fleet):
        raise ConfigError(f"policy has {len(policy)} sub-models, fleet has "
                          f"{len(fleet)}")
    oracle = DistillationOracle(base, seed=args.seed, epochs=args.epochs,
                                lr=args.lr)
    widths = oracle.widths_for(policy)
    students = [ToyClassifier.init(oracle.data.x_train.shape[1], w,
                                   oracle.data.num_classes,
                                   np.random.default_rng([args.seed, i, w]))
                for i, w in enumerate(widths)]
    result = calibrate_sequence(oracle.teacher, students, oracle.data,
                                epochs=args.epochs, lr=args.lr)
    t_loss, t_acc = evaluate(oracle.teacher, oracle.data.x_val,
                             oracle.data.y_val)
    _write_json(out / "boost_report.json", {
        "format_version": FORMAT_VERSION,
        "seed": args.seed,
        "teacher": {"hidden": oracle.teacher_hidden, "val_loss": t_loss,
                    "val_acc": t_acc},
        "students": [
            {"device": dev.name, "toy_hidden": w, "val_loss": loss,
             "val_acc": acc, "weight_entropy": ent}
            for dev, w, loss, acc, ent in zip(
                fleet.devices, widths, result.val_losses,
                result.val_accuracies, result.weight_entropies)],
        "mean_val_loss": result.mean_val_loss})
    print(f"calibrated {len(widths)} toy sub-models (widths {list(widths)}): "
          f"mean val loss {result.mean_val_loss:.4f}, teacher acc "
          f"{t_acc:.3f} -> {out / 'boost_report.json'}")
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    versions: dict[str, object] = {}

    policy_blob = _read_artifact_json(out / "policy_best.json")
    versions["policy_best.json"] = policy_blob["format_version"]

    header, rows = fileio.read_csv(out / "search_log.csv")
    versions["search_log.csv"] = FORMAT_VERSION
    trajectory = []
    for row in rows:
        it, deg, lat, psi, best = row.split(",")
        trajectory.append((int(it), float(psi), float(best)))

    _, metric_rows = fileio.read_csv(out / "predictor_metrics.csv")
    versions["predictor_metrics.csv"] = FORMAT_VERSION
    predictor_summary = []
    for row in metric_rows:
        fields = row.split(",")
        predictor_summary.append({"device": fields[0],
                                  "rmse_ms": float(fields[5]),
                                  "rmse_pct": float(fields[7])})

    sims = {}
    for mode in MODES:
        blob = _read_artifact_json(out / f"sim_{mode}.json")
        versions[f"sim_{mode}.json"] = blob["format_version"]
        sims[mode] = blob

    boost_blob = _read_artifact_json(out / "boost_report.json")
    versions["boost_report.json"] = boost_blob["format_version"]

    distinct = {str(v) for v in versions.values()}
    if len(distinct) > 1:
        raise ConfigError("run dir mixes artifact format versions: "
                          + ", ".join(f"{k}={v}"
                                      for k, v in sorted(versions.items())))

    best_psi = trajectory[-1][2] if trajectory else float("nan")
    _write_json(out / "report.json", {
        "format_version": FORMAT_VERSION,
        "objective": policy_blob.get("objective", {}),
        "search": {"evaluations": len(trajectory), "best_psi": best_psi},
        "predictors": predictor_summary,
        "modes": {mode: {"end_to_end_ms": blob["end_to_end_ms"],
                         "total_energy_mj": blob["total_energy_mj"],
                         "transmission_fraction":
                             blob["transmission_fraction"]}
                  for mode, blob in sims.items()},
        "calibration": {"mean_val_loss": boost_blob["mean_val_loss"],
                        "students": boost_blob["students"]}})
    write_csv(out / "report.csv",
              "mode,end_to_end_ms,total_energy_mj,transmission_fraction",
              [f"{mode},{sims[mode]['end_to_end_ms']!r},"
               f"{sims[mode]['total_energy_mj']!r},"
               f"{sims[mode]['transmission_fraction']!r}"
               for mode in MODES])
    write_csv(out / "psi_trajectory.csv", "iteration,psi,best_psi",
              [f"{it},{psi!r},{best!r}" for it, psi, best in trajectory])
    agg = sims["aggregate-edge"]
    print(f"report written to {out / 'report.json'}; aggregate-edge "
          f"{agg['end_to_end_ms']:.3f} ms, best psi {best_psi:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgesplit",
        description="Plan, calibrate, and simulate transformer decomposition "
                    "across an edge-device fleet.")
    sub = parser.add_subparsers(dest="command", required=True)

    src = argparse.ArgumentParser(add_help=False)
    src.add_argument("--fleet", required=True,
                     help="combined transformer + fleet config (JSON)")
    src.add_argument("--transformer",
                     help="transformer config overriding the fleet file's")
    src.add_argument("--out", required=True, help="run directory")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, required=True,
                        help="RNG seed (mandatory; no wall-clock default)")

    p = sub.add_parser("profile", parents=[src, seeded],
                       help="collect per-device latency datasets")
    p.add_argument("--samples", type=int, default=800,
                   help="samples per device (default 800)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("train-predictor", parents=[src, seeded],
                       help="fit per-device latency predictors")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--hidden", type=int, default=16,
                   help="predictor hidden width (default 16; the library "
                        "default of 600 is for offline accuracy studies)")
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("optimize", parents=[src, seeded],
                       help="search for the best decomposition policy")
    p.add_argument("--r", type=int, default=10,
                   help="initial random policies (default 10)")
    p.add_argument("--iters", type=int, default=40,
                   help="search iterations after the initial draws "
                        "(default 40; 0 degenerates to random search)")
    p.add_argument("--delta", type=float, default=0.005,
                   help="objective weight per ms of latency (default 0.005)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", parents=[src],
                       help="simulate a policy under all execution modes")
    p.add_argument("--policy", required=True, help="policy JSON to simulate")
    p.add_argument("--mode", choices=MODES,
                   help="simulate only this mode (default: all four)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("boost", parents=[src, seeded],
                       help="calibrate toy sub-models for a policy")
    p.add_argument("--policy", required=True, help="policy JSON to calibrate")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.5)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("report", help="consolidate a run directory")
    p.add_argument("--out", required=True, help="run directory to summarize")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EdgesplitError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
