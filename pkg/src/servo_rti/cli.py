"""Command line front end.

Subcommands cover the full workflow: simulate a deployment to an RSS trace,
train and dump a reconstruction model, run either calibration procedure,
localize a recorded trace, evaluate variants side by side, and analyze a
chosen-stop histogram against the uniform null.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as rio
from .calibration import incremental_calibrate, network_calibrate
from .channel import TdmaNetwork
from .harness import (VARIANTS, build_network, evaluation_node_ids,
                      multinomial_bias_test, rmse, run_comparison,
                      run_experiment, simulate_walk)
from .scenario import Scenario

PROG = "servo-rti"


def _load_scenario(args) -> Scenario:
    scenario = Scenario.from_json(args.scenario)
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_seed(args.seed)
    if getattr(args, "channels", None):
        scenario = replace(scenario, channels=args.channels)
    return scenario


def _channel_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad channel list {text!r}") from exc


def _count_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad count list {text!r}") from exc


def cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    network, _ = build_network(scenario, args.variant)
    training, dwells = simulate_walk(network, scenario)
    frames = list(training)
    occupancy = {f.cycle: None for f in training}
    for point, fs in dwells:
        frames.extend(fs)
        occupancy.update({f.cycle: point for f in fs})
    paths = rio.write_trace(args.out, frames, occupancy)
    print(f"wrote {len(frames)} frames "
          f"({len(network.node_ids)} nodes, {len(scenario.channels)} channels) "
          f"to {paths[rio.TRACE_FILE].parent}")
    return 0


def cmd_train(args) -> int:
    scenario = _load_scenario(args)
    network, _ = build_network(scenario, args.variant)
    training = network.run_cycles(scenario.training_cycles)
    ids = evaluation_node_ids(scenario, args.variant)
    antennas = network.antennas()
    localizer = scenario.localizer()
    localizer.fit([f.subset(ids) for f in training],
                  {i: antennas[i] for i in ids})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = rio.write_model(out / "model.json", localizer)
    print(f"eta={localizer.path_loss_.eta:.3f} "
          f"anti_fade_share={float(np.mean(localizer.fades_.anti_fade)):.3f}")
    print(f"wrote {path}")
    return 0


def cmd_calibrate(args) -> int:
    scenario = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "network":
        network = TdmaNetwork(scenario.environment(), scenario.servo_nodes(),
                              scenario.channels)
        state = network_calibrate(network, scenario.calibration)
        rio.write_calibration_log(out / "calibration_log.csv", state)
        rio.write_calibration_summary(out / "calibration_summary.json", state)
        final = state.mean_rss_history[-1][1]
        print(f"converged={state.converged} moves={len(state.accepted_moves)} "
              f"cycles={state.cycles_used} mean_rss={final:.2f}")
        print("positions " + " ".join(f"{k}:{v}" for k, v
                                      in sorted(state.positions.items())))
    else:
        spots = scenario.resolved_servo_centers()
        result = incremental_calibrate(spots, scenario.environment(),
                                       scenario.channels,
                                       scenario.calibration,
                                       servo_radius=scenario.servo_radius)
        rio.write_placements(out / "placements.json", result)
        print("positions " + " ".join(f"{k}:{v}" for k, v
                                      in sorted(result.positions.items())))
    print(f"wrote {out}")
    return 0


def cmd_localize(args) -> int:
    scenario = _load_scenario(args)
    trace = rio.read_trace(args.trace)
    training = trace.training_frames()
    occupied = trace.occupied_frames()
    if not training:
        raise ValueError("trace has no empty-room cycles to train on")
    if not occupied:
        raise ValueError("trace has no occupied cycles to localize")
    positions = training[0].positions
    for f in trace.frames:
        if f.positions != positions:
            raise ValueError("trace changes servo positions mid-run; "
                             "localization expects a fixed arrangement")
    nodes = {n.node_id: n for n in
             scenario.servo_nodes(positions) + scenario.standard_nodes()}
    missing = [i for i in training[0].node_ids if i not in nodes]
    if missing:
        raise ValueError(f"trace contains nodes {missing} not in the scenario")
    antennas = {i: nodes[i].antenna for i in training[0].node_ids}
    localizer = scenario.localizer()
    localizer.fit(training, antennas)
    estimates = localizer.predict([f for _, f in occupied])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(f.cycle, est[0], est[1])
            for (_, f), est in zip(occupied, estimates)]
    rio.write_estimates(out / "estimates.csv", rows)
    errors = [float(np.hypot(est[0] - truth.x, est[1] - truth.y))
              for (truth, _), est in zip(occupied, estimates)]
    print(f"localized {len(rows)} frames rmse={rmse(errors):.3f} m")
    if args.images:
        images = localizer.transform([f for _, f in occupied])
        for (_, f), image in zip(occupied, images):
            rio.write_image_csv(out / f"image_{f.cycle:05d}.csv",
                                localizer.grid_, image)
            rio.write_image_pgm(out / f"image_{f.cycle:05d}.pgm",
                                localizer.grid_, image)
        print(f"wrote {len(rows)} images")
    print(f"wrote {out / 'estimates.csv'}")
    return 0


def cmd_evaluate(args) -> int:
    scenario = _load_scenario(args)
    if args.variant == "all":
        reports = run_comparison(scenario)
    else:
        reports = {args.variant: run_experiment(scenario, args.variant)}
    paths = rio.write_report(args.out, reports)
    print(paths["report"].read_text(), end="")
    print(f"wrote {Path(args.out)}")
    return 0


def cmd_analyze_positions(args) -> int:
    result = multinomial_bias_test(trials=args.trials,
                                   categories=args.categories,
                                   threshold=args.threshold,
                                   counts=args.counts,
                                   mc_samples=args.mc_samples,
                                   seed=args.seed)
    print(f"trials={result.trials} categories={result.categories} "
          f"threshold={result.threshold} mc_samples={result.mc_samples} "
          f"seed={args.seed}")
    if args.counts is not None:
        reached = "yes" if result.observed_reaches else "no"
        print(f"counts={','.join(str(c) for c in args.counts)} "
              f"observed_max={result.observed_max} reaches_threshold={reached}")
    print(f"P[max>=threshold]={result.p_reach:.6f}")
    print(f"P[max<=threshold]={result.p_within:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="RF tomography with rotatable sensors: simulate, "
                    "calibrate, localize, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, out_required=True):
        p.add_argument("--scenario", required=True,
                       help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--channels", type=_channel_list, default=None,
                       help="comma-separated channel override, e.g. 15,20")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="simulate a walk to an RSS trace")
    scenario_args(p)
    p.add_argument("--variant", choices=VARIANTS, default="servo-default")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a model on an empty-room window")
    scenario_args(p)
    p.add_argument("--variant", choices=VARIANTS, default="servo-default")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="run a calibration procedure")
    p.add_argument("method", choices=("incremental", "network"))
    scenario_args(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("localize", help="localize an RSS trace")
    scenario_args(p)
    p.add_argument("--trace", required=True,
                   help="directory produced by the simulate subcommand")
    p.add_argument("--images", action="store_true",
                   help="also dump per-frame voxel images")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="score variants on a scenario")
    scenario_args(p)
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-positions",
                       help="tail probabilities of the max stop count under "
                            "a uniform null")
    p.add_argument("--trials", type=int, default=38)
    p.add_argument("--categories", type=int, default=8)
    p.add_argument("--threshold", type=int, default=9)
    p.add_argument("--counts", type=_count_list, default=None,
                   help="observed histogram, e.g. 8,3,4,6,2,3,8,4")
    p.add_argument("--mc-samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze_positions)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
