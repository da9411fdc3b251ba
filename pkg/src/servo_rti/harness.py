"""Evaluation harness: simulate a deployment, localize a walked sequence of
positions, and compare servo variants against fixed-antenna baselines.

Fairness rules: the fixed-antenna ("standard") variant is evaluated on the
same simulated frames as the randomized servo variant by slicing the shared
frames down to the standard nodes, and the standard node picked next to each
platform is a seeded coin flip between the two flanks. Calibrated runs pay
their calibration cycles inside the same simulated world before evaluation
begins.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .calibration import CalibrationState, network_calibrate
from .channel import MeasurementFrame, TdmaNetwork
from .geometry import Point2D
from .scenario import Scenario

__all__ = [
    "VARIANTS",
    "PointResult",
    "ExperimentReport",
    "SweepResult",
    "MaxCountBiasResult",
    "rmse",
    "frame_digest",
    "build_network",
    "evaluation_node_ids",
    "simulate_walk",
    "run_experiment",
    "run_comparison",
    "standard_subset_sweep",
    "multinomial_bias_test",
]

VARIANTS = ("standard", "servo-default", "servo-random", "servo-calibrated")


@dataclass(frozen=True)
class PointResult:
    """Localization outcome for one ground-truth position."""

    truth: Point2D
    estimate: Point2D
    error: float
    n_frames: int


@dataclass
class ExperimentReport:
    """One variant's evaluation over a scenario's position sequence."""

    variant: str
    seed: int
    node_ids: tuple[int, ...]
    points: list[PointResult]
    rmse: float
    calibration: Optional[CalibrationState] = None
    source_digest: str = ""

    @property
    def mean_error(self) -> float:
        return float(np.mean([p.error for p in self.points]))

    @property
    def median_error(self) -> float:
        return float(np.median([p.error for p in self.points]))


def rmse(errors: Sequence[float]) -> float:
    e = np.asarray(list(errors), dtype=float)
    if e.size == 0:
        raise ValueError("no errors to aggregate")
    return float(np.sqrt(np.mean(e * e)))


def frame_digest(frames: Sequence[MeasurementFrame]) -> str:
    """Order-sensitive digest of frame payloads, for fairness assertions."""
    h = hashlib.sha256()
    for f in frames:
        h.update(str((f.cycle, f.node_ids, f.channels)).encode())
        h.update(np.ascontiguousarray(f.rss).tobytes())
    return h.hexdigest()


def simulate_walk(network: TdmaNetwork, scenario: Scenario
                  ) -> tuple[list[MeasurementFrame],
                             list[tuple[Point2D, list[MeasurementFrame]]]]:
    """Empty-room training window followed by one dwell per position."""
    truth = scenario.resolved_ground_truth()
    if not truth:
        raise ValueError("scenario has no ground-truth positions")
    training = network.run_cycles(scenario.training_cycles)
    dwells = []
    for point in truth:
        person = scenario.person_at(point)
        dwells.append((point, network.run_cycles(scenario.dwell_cycles,
                                                 person=person)))
    return training, dwells


def _evaluate(training: Sequence[MeasurementFrame],
              dwells: Sequence[tuple[Point2D, Sequence[MeasurementFrame]]],
              node_ids: Sequence[int], antennas: dict,
              scenario: Scenario) -> tuple[list[PointResult], float]:
    keep = tuple(node_ids)
    localizer = scenario.localizer()
    localizer.fit([f.subset(keep) for f in training],
                  {i: antennas[i] for i in keep})
    results = []
    for truth, frames in dwells:
        estimates = localizer.predict([f.subset(keep) for f in frames])
        est = Point2D(*np.median(estimates, axis=0))
        error = float(np.hypot(est.x - truth.x, est.y - truth.y))
        results.append(PointResult(truth=truth, estimate=est, error=error,
                                   n_frames=len(frames)))
    return results, rmse([r.error for r in results])


def _standard_pick(scenario: Scenario, seed: int) -> tuple[int, ...]:
    """One flank per platform, chosen by seeded coin flip."""
    rng = np.random.default_rng([seed, 7])
    flips = rng.integers(0, 2, size=scenario.n_servo)
    return tuple(scenario.standard_ids_for(k)[flips[k - 1]]
                 for k in range(1, scenario.n_servo + 1))


def _random_positions(scenario: Scenario, seed: int) -> dict[int, int]:
    rng = np.random.default_rng([seed, 11])
    draws = rng.integers(1, 9, size=scenario.n_servo)
    return {k: int(draws[k - 1]) for k in range(1, scenario.n_servo + 1)}


def _full_network(scenario: Scenario, positions: Optional[dict] = None
                  ) -> TdmaNetwork:
    nodes = scenario.servo_nodes(positions) + scenario.standard_nodes()
    return TdmaNetwork(scenario.environment(), nodes, scenario.channels)


def _servo_ids(scenario: Scenario) -> tuple[int, ...]:
    return tuple(range(1, scenario.n_servo + 1))


def _calibrated_positions(scenario: Scenario) -> CalibrationState:
    # calibration runs on the servo nodes alone; standard nodes belong to
    # the parallel fixed deployment and must not influence the objective
    network = TdmaNetwork(scenario.environment(), scenario.servo_nodes(),
                          scenario.channels)
    return network_calibrate(network, scenario.calibration)


def build_network(scenario: Scenario, variant: str,
                  seed: Optional[int] = None
                  ) -> tuple[TdmaNetwork, Optional[CalibrationState]]:
    """Full deployment (servo plus standard nodes) arranged for a variant.

    Calibrated variants run network calibration first and return its state.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one "
                         f"of {VARIANTS}")
    scenario = scenario.with_seed(seed)
    if variant == "servo-calibrated":
        calibration = _calibrated_positions(scenario)
        return _full_network(scenario, calibration.positions), calibration
    if variant == "servo-random":
        return _full_network(scenario,
                             _random_positions(scenario, scenario.seed)), None
    return _full_network(scenario), None


def evaluation_node_ids(scenario: Scenario, variant: str,
                        seed: Optional[int] = None) -> tuple[int, ...]:
    """Node subset a variant is judged on."""
    scenario = scenario.with_seed(seed)
    if variant == "standard":
        return _standard_pick(scenario, scenario.seed)
    return _servo_ids(scenario)


def run_experiment(scenario: Scenario, variant: str,
                   seed: Optional[int] = None) -> ExperimentReport:
    """Simulate and evaluate a single variant end to end."""
    scenario = scenario.with_seed(seed)
    seed = scenario.seed
    network, calibration = build_network(scenario, variant)
    training, dwells = simulate_walk(network, scenario)
    ids = evaluation_node_ids(scenario, variant)
    antennas = network.antennas()
    points, err = _evaluate(training, dwells, ids, antennas, scenario)
    digest = frame_digest(training + [f for _, fs in dwells for f in fs])
    return ExperimentReport(variant=variant, seed=seed, node_ids=ids,
                            points=points, rmse=err, calibration=calibration,
                            source_digest=digest)


def run_comparison(scenario: Scenario,
                   seed: Optional[int] = None) -> dict[str, ExperimentReport]:
    """All four variants over one world seed.

    The standard report is computed from the servo-random simulation's
    frames, so the two share a ``source_digest``.
    """
    scenario = scenario.with_seed(seed)
    seed = scenario.seed
    reports: dict[str, ExperimentReport] = {}

    reports["servo-default"] = run_experiment(scenario, "servo-default")

    random_net = _full_network(scenario, _random_positions(scenario, seed))
    training, dwells = simulate_walk(random_net, scenario)
    digest = frame_digest(training + [f for _, fs in dwells for f in fs])
    antennas = random_net.antennas()
    for variant, ids in (("servo-random", _servo_ids(scenario)),
                         ("standard", _standard_pick(scenario, seed))):
        points, err = _evaluate(training, dwells, ids, antennas, scenario)
        reports[variant] = ExperimentReport(variant=variant, seed=seed,
                                            node_ids=ids, points=points,
                                            rmse=err, source_digest=digest)

    reports["servo-calibrated"] = run_experiment(scenario, "servo-calibrated")
    return reports


@dataclass
class SweepResult:
    """RMSE distribution over re-picked standard node subsets."""

    rmses: list[float]
    picks: list[tuple[int, ...]]

    @property
    def mean(self) -> float:
        return float(np.mean(self.rmses))

    @property
    def median(self) -> float:
        return float(np.median(self.rmses))


def standard_subset_sweep(scenario: Scenario, n_subsets: int,
                          nodes_per_subset: Optional[int] = None,
                          seed: Optional[int] = None,
                          mode: str = "flanks") -> SweepResult:
    """Evaluate many standard-node subsets on one shared simulation.

    ``mode`` "flanks" re-flips the per-platform coin (one of each platform's
    two flanks, so subsets have one node per platform); "free" draws
    ``nodes_per_subset`` nodes uniformly from all standard nodes, which is
    what a node-count sweep needs.
    """
    if n_subsets < 1:
        raise ValueError("n_subsets must be positive")
    if mode not in ("flanks", "free"):
        raise ValueError(f"unknown mode {mode!r}")
    scenario = scenario.with_seed(seed)
    seed = scenario.seed
    size = scenario.n_servo if nodes_per_subset is None else int(nodes_per_subset)
    if mode == "flanks" and size != scenario.n_servo:
        raise ValueError("flank subsets always hold one node per platform")
    network = _full_network(scenario, _random_positions(scenario, seed))
    training, dwells = simulate_walk(network, scenario)
    antennas = network.antennas()
    all_standard = tuple(n.node_id for n in scenario.standard_nodes())
    if not 2 <= size <= len(all_standard):
        raise ValueError(f"subset size {size} outside 2..{len(all_standard)}")
    rng = np.random.default_rng([seed, 13])
    rmses, picks = [], []
    for _ in range(n_subsets):
        if mode == "flanks":
            flips = rng.integers(0, 2, size=scenario.n_servo)
            ids = tuple(scenario.standard_ids_for(k)[flips[k - 1]]
                        for k in range(1, scenario.n_servo + 1))
        else:
            ids = tuple(int(i) for i in
                        sorted(rng.choice(all_standard, size=size,
                                          replace=False)))
        _, err = _evaluate(training, dwells, ids, antennas, scenario)
        rmses.append(err)
        picks.append(ids)
    return SweepResult(rmses=rmses, picks=picks)


@dataclass(frozen=True)
class MaxCountBiasResult:
    """Null-hypothesis analysis of a chosen-stop histogram.

    Under equal stop probabilities, ``p_reach`` is the chance that the most
    popular stop collects at least ``threshold`` choices and ``p_within`` the
    chance it collects at most ``threshold``. A small ``p_reach`` for an
    observed count argues the choices were not uniform; a large ``p_within``
    says the observed maximum is unremarkable.
    """

    trials: int
    categories: int
    threshold: int
    p_reach: float
    p_within: float
    mc_samples: int
    observed_max: Optional[int] = None

    @property
    def observed_reaches(self) -> Optional[bool]:
        if self.observed_max is None:
            return None
        return self.observed_max >= self.threshold


def multinomial_bias_test(trials: int, categories: int, threshold: int,
                          counts: Optional[Sequence[int]] = None,
                          mc_samples: int = 1_000_000,
                          seed: int = 0) -> MaxCountBiasResult:
    """Monte Carlo tail probabilities of the maximum multinomial count."""
    if trials < 0 or categories < 1 or mc_samples < 1:
        raise ValueError("trials, categories, mc_samples must be positive")
    if counts is not None:
        counts = [int(c) for c in counts]
        if len(counts) != categories or sum(counts) != trials:
            raise ValueError(f"counts must hold {categories} categories "
                             f"summing to {trials}")
    if threshold <= 0:
        p_reach, p_within = 1.0, float(threshold == 0 and trials == 0)
    elif threshold > trials:
        p_reach, p_within = 0.0, 1.0
    else:
        rng = np.random.default_rng(seed)
        draws = rng.multinomial(trials, [1.0 / categories] * categories,
                                size=mc_samples)
        peaks = draws.max(axis=1)
        p_reach = float(np.mean(peaks >= threshold))
        p_within = float(np.mean(peaks <= threshold))
    return MaxCountBiasResult(trials=trials, categories=categories,
                              threshold=threshold, p_reach=p_reach,
                              p_within=p_within, mc_samples=mc_samples,
                              observed_max=None if counts is None
                              else max(counts))
