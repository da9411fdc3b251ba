"""Servo node calibration: pick antenna positions that raise network RSS.

Two procedures. Network calibration sweeps the deployed sensors one at a
time, measures the mean network RSS at all eight servo stops, and accepts a
move only when the best stop strictly beats the incumbent mean; sweeps
repeat until one passes with no accepted move. Incremental calibration runs
at deployment time: an eight-antenna platform at the next mounting spot
measures the mean RSS between each platform antenna and the already-deployed
nodes, and the node is mounted at the winning antenna's offset.

Every rotation during network calibration rides the TDMA command slot and
therefore costs one measurement cycle; calibration cost is reported in
cycles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import (SERVO_POSITIONS, Environment, MeasurementFrame, NodeState,
                      TdmaNetwork, antenna_position, directed_link_pairs,
                      validate_channels)
from .geometry import Point2D
from .rti import BaselineTable, train_baseline

__all__ = [
    "PLATFORM_ID_BASE",
    "CalibrationConfig",
    "EvalRecord",
    "CalibrationState",
    "IncrementalResult",
    "mean_network_rss",
    "candidate_mean_rss",
    "network_calibrate",
    "incremental_calibrate",
    "position_histogram",
]

# ids used for the temporary deployment platform's eight antennas
PLATFORM_ID_BASE = 9000


@dataclass(frozen=True)
class CalibrationConfig:
    """Knobs shared by both procedures.

    ``samples_per_eval`` frames are averaged per candidate position;
    ``static_window`` frames establish the incumbent mean (and the
    deployment-time baseline); ``max_iterations`` caps full sweeps.
    """

    samples_per_eval: int = 10
    static_window: int = 10
    max_iterations: int = 20

    def __post_init__(self):
        for name in ("samples_per_eval", "static_window", "max_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class EvalRecord:
    """One candidate-position evaluation during network calibration."""

    iteration: int
    sensor: int
    position: int
    mean_rss: float
    accepted: bool


@dataclass
class CalibrationState:
    """Outcome of a calibration run."""

    positions: dict[int, int]
    mean_rss_history: list[tuple[int, float]]
    accepted_moves: list[tuple[int, int, int]]
    evaluations: list[EvalRecord]
    converged: bool
    cycles_used: int


def mean_network_rss(frames: Sequence[MeasurementFrame],
                     channels: Optional[Sequence[int]] = None) -> float:
    """Mean RSS over all directed links and channels, averaging each
    link-channel pair over time first so uneven packet loss does not skew
    the result."""
    if not frames:
        raise ValueError("no frames")
    chs = frames[0].channels if channels is None else validate_channels(channels)
    cols = [frames[0].channels.index(c) for c in chs]
    stack = np.stack([f.rss[:, cols] for f in frames])
    finite = np.isfinite(stack)
    counts = finite.sum(axis=0)
    if not counts.any():
        raise ValueError("no valid samples in frames")
    total = np.where(finite, stack, 0.0).sum(axis=0)
    means = total[counts > 0] / counts[counts > 0]
    return float(means.mean())


def candidate_mean_rss(baseline: BaselineTable, platform_id: int,
                       deployed_ids: Sequence[int],
                       channels: Optional[Sequence[int]] = None) -> float:
    """Mean RSS between one platform antenna and the deployed nodes, summing
    both link directions per pair and normalizing by pair-channel count.

    Missing table entries contribute zero to the sum but still count in the
    normalization, which penalizes antennas that fail to reach a deployed
    node.
    """
    deployed = [int(i) for i in deployed_ids]
    if not deployed:
        raise ValueError("no deployed nodes")
    if int(platform_id) in deployed:
        raise ValueError("platform antenna listed among deployed nodes")
    chs = baseline.channels if channels is None else validate_channels(channels)
    pairs = baseline.links()
    row = {pair: k for k, pair in enumerate(pairs)}
    total = 0.0
    for d in deployed:
        for c in chs:
            ci = baseline.channels.index(c)
            fwd = baseline.mean[row[(int(platform_id), d)], ci]
            rev = baseline.mean[row[(d, int(platform_id))], ci]
            total += np.nansum([fwd, rev])
    return float(total / (len(deployed) * len(chs)))


def _rotate(network: TdmaNetwork, sensor: int, position: int) -> None:
    # rides the end-of-cycle command slot; the cycle's frame is discarded
    network.run_cycle(command=(sensor, position))


def network_calibrate(network: TdmaNetwork,
                      config: CalibrationConfig = CalibrationConfig()
                      ) -> CalibrationState:
    """Iterative per-sensor sweep over all servo stops.

    Starts from the default position everywhere, keeps a strictly increasing
    incumbent mean network RSS, and reverts any sensor whose best candidate
    fails to beat it. Returns with ``converged`` False when the sweep cap is
    hit first.
    """
    if any(s.position != 1 for s in network.states()):
        raise ValueError("network calibration starts with every sensor at "
                         "position 1")
    start_cycle = network.cycle
    incumbent = mean_network_rss(network.run_cycles(config.static_window))
    history: list[tuple[int, float]] = [(0, incumbent)]
    moves: list[tuple[int, int, int]] = []
    evaluations: list[EvalRecord] = []
    converged = False
    for sweep in range(1, config.max_iterations + 1):
        accepted_any = False
        for sensor in sorted(network.node_ids):
            p_before = network.positions[sensor]
            values: dict[int, float] = {}
            for p in range(1, SERVO_POSITIONS + 1):
                if network.positions[sensor] != p:
                    _rotate(network, sensor, p)
                values[p] = mean_network_rss(
                    network.run_cycles(config.samples_per_eval))
            best_value = max(values.values())
            candidates = [p for p in sorted(values) if values[p] == best_value]
            best_p = p_before if p_before in candidates else candidates[0]
            accept = best_value > incumbent and best_p != p_before
            if accept:
                if network.positions[sensor] != best_p:
                    _rotate(network, sensor, best_p)
                moves.append((sensor, p_before, best_p))
                incumbent = best_value
                history.append((sweep, incumbent))
                accepted_any = True
            else:
                if network.positions[sensor] != p_before:
                    _rotate(network, sensor, p_before)
            for p in sorted(values):
                evaluations.append(EvalRecord(iteration=sweep, sensor=sensor,
                                              position=p, mean_rss=values[p],
                                              accepted=accept and p == best_p))
        if not accepted_any:
            converged = True
            break
    return CalibrationState(positions=dict(network.positions),
                            mean_rss_history=history,
                            accepted_moves=moves,
                            evaluations=evaluations,
                            converged=converged,
                            cycles_used=network.cycle - start_cycle)


@dataclass
class IncrementalResult:
    """Outcome of deployment-time calibration.

    ``placements`` lists every node's final antenna point, including the
    first node, which is mounted as-is. ``positions`` maps each
    platform-placed node to its winning stop; ``tables`` keeps the per-spot
    candidate means keyed by stop.
    """

    placements: list[tuple[int, Point2D]]
    positions: dict[int, int]
    tables: list[dict[int, float]] = field(default_factory=list)


def incremental_calibrate(spots: Sequence, env: Environment,
                          channels: Sequence[int],
                          config: CalibrationConfig = CalibrationConfig(),
                          servo_radius: float = 0.10) -> IncrementalResult:
    """Deploy nodes spot by spot, each at the platform antenna with the
    highest mean RSS to the nodes already placed. Ties resolve to the lowest
    stop number."""
    if len(spots) < 2:
        raise ValueError("incremental calibration needs at least two spots")
    first = Point2D(float(spots[0][0]), float(spots[0][1]))
    deployed = [NodeState(node_id=1, base_center=first, servo_radius=0.0)]
    placements = [(1, first)]
    positions: dict[int, int] = {}
    tables: list[dict[int, float]] = []
    for node_id, spot in enumerate(spots[1:], start=2):
        center = Point2D(float(spot[0]), float(spot[1]))
        platform = [NodeState(node_id=PLATFORM_ID_BASE + p, base_center=center,
                              servo_radius=servo_radius, position=p)
                    for p in range(1, SERVO_POSITIONS + 1)]
        network = TdmaNetwork(env, deployed + platform, channels)
        baseline = train_baseline(network.run_cycles(config.static_window))
        deployed_ids = [n.node_id for n in deployed]
        table = {p: candidate_mean_rss(baseline, PLATFORM_ID_BASE + p,
                                       deployed_ids)
                 for p in range(1, SERVO_POSITIONS + 1)}
        best = max(table.values())
        best_p = min(p for p, v in table.items() if v == best)
        antenna = antenna_position(center, servo_radius, best_p)
        deployed.append(NodeState(node_id=node_id, base_center=antenna,
                                  servo_radius=0.0))
        placements.append((node_id, antenna))
        positions[node_id] = best_p
        tables.append(table)
    return IncrementalResult(placements=placements, positions=positions,
                             tables=tables)


def position_histogram(results: Sequence) -> np.ndarray:
    """Count chosen stops 1..8 across calibration outcomes.

    Accepts anything with a ``positions`` mapping of node id to stop."""
    counts = np.zeros(SERVO_POSITIONS, dtype=int)
    for result in results:
        for p in result.positions.values():
            if not 1 <= int(p) <= SERVO_POSITIONS:
                raise ValueError(f"stop {p} outside 1..{SERVO_POSITIONS}")
            counts[int(p) - 1] += 1
    return counts
