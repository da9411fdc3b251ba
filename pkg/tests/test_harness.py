import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from servo_rti.calibration import CalibrationConfig
from servo_rti.channel import TdmaNetwork
from servo_rti.harness import (
    VARIANTS,
    build_network,
    evaluation_node_ids,
    frame_digest,
    multinomial_bias_test,
    rmse,
    run_comparison,
    run_experiment,
    simulate_walk,
    standard_subset_sweep,
)
from servo_rti.scenario import Scenario


def _small_scenario(seed=2, **overrides):
    overrides.setdefault("n_servo", 6)
    overrides.setdefault("n_points", 2)
    overrides.setdefault("training_cycles", 6)
    overrides.setdefault("dwell_cycles", 3)
    overrides.setdefault("calibration",
                         CalibrationConfig(samples_per_eval=2, static_window=2,
                                           max_iterations=10))
    return Scenario(seed=seed, **overrides)


# ---------------------------------------------------------------- rmse

def test_rmse_values():
    assert rmse([0.0, 0.0, 0.0]) == 0.0
    assert_allclose(rmse([3.0, 4.0]), math.sqrt(12.5), rtol=1e-12)
    assert rmse([2.5]) == 2.5
    with pytest.raises(ValueError):
        rmse([])


# ---------------------------------------------------------------- walks

def test_simulate_walk_structure():
    sc = _small_scenario()
    net, _ = build_network(sc, "servo-default")
    training, dwells = simulate_walk(net, sc)
    assert len(training) == sc.training_cycles
    assert len(dwells) == sc.n_points
    truth = sc.resolved_ground_truth()
    for (point, frames), want in zip(dwells, truth):
        assert point == want
        assert len(frames) == sc.dwell_cycles
    # cycles advance continuously across the walk
    cycles = [f.cycle for f in training] + [f.cycle for _, fs in dwells
                                            for f in fs]
    assert cycles == list(range(len(cycles)))


def test_simulate_walk_needs_ground_truth():
    sc = _small_scenario(ground_truth=[])
    net, _ = build_network(sc, "servo-default")
    with pytest.raises(ValueError):
        simulate_walk(net, sc)


# ---------------------------------------------------------------- variants

def test_default_variant_is_all_ones():
    sc = _small_scenario()
    net, state = build_network(sc, "servo-default")
    assert state is None
    servo_positions = {i: p for i, p in net.positions.items()
                       if i <= sc.n_servo}
    assert servo_positions == {i: 1 for i in range(1, sc.n_servo + 1)}
    # explicit all-ones layout yields bit-identical frames
    explicit = TdmaNetwork(sc.environment(),
                           sc.servo_nodes({i: 1 for i in
                                           range(1, sc.n_servo + 1)})
                           + sc.standard_nodes(),
                           sc.channels)
    assert frame_digest(net.run_cycles(4)) == frame_digest(explicit.run_cycles(4))


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        build_network(_small_scenario(), "servo-mystery")
    with pytest.raises(ValueError):
        run_experiment(_small_scenario(), "banana")


def test_evaluation_node_ids():
    sc = _small_scenario()
    assert evaluation_node_ids(sc, "servo-default") == tuple(range(1, 7))
    picked = evaluation_node_ids(sc, "standard")
    assert len(picked) == sc.n_servo
    for k in range(1, sc.n_servo + 1):
        pair = sc.standard_ids_for(k)
        assert sum(i in pair for i in picked) == 1


def test_run_experiment_report():
    sc = _small_scenario()
    report = run_experiment(sc, "servo-default")
    assert report.variant == "servo-default"
    assert report.seed == sc.seed
    assert len(report.points) == sc.n_points
    assert_allclose(report.rmse, rmse([p.error for p in report.points]),
                    rtol=1e-12)
    assert report.mean_error >= 0 and report.median_error >= 0
    assert report.calibration is None
    assert len(report.source_digest) == 64


def test_run_experiment_is_reproducible():
    sc = _small_scenario(noise_sigma=1.0, packet_loss=0.02)
    a = run_experiment(sc, "servo-random")
    b = run_experiment(sc, "servo-random")
    assert a.source_digest == b.source_digest
    assert a.rmse == b.rmse
    assert [p.estimate for p in a.points] == [p.estimate for p in b.points]


def test_comparison_shares_frames_between_standard_and_random():
    sc = _small_scenario()
    reports = run_comparison(sc)
    assert set(reports) == set(VARIANTS)
    # the fixed-sensor variant is scored on the very frames the random
    # servo deployment recorded
    assert (reports["standard"].source_digest
            == reports["servo-random"].source_digest)
    assert (reports["servo-default"].source_digest
            != reports["servo-random"].source_digest)
    assert reports["servo-calibrated"].calibration is not None
    assert reports["servo-calibrated"].calibration.converged
    for name in ("standard", "servo-random", "servo-default"):
        assert reports[name].calibration is None
    # standard nodes carry platform-offset ids, servo nodes small ids
    assert all(i > 100 for i in reports["standard"].node_ids)
    assert all(i <= sc.n_servo for i in reports["servo-random"].node_ids)


def test_calibrated_variant_uses_final_positions():
    sc = _small_scenario()
    net, state = build_network(sc, "servo-calibrated")
    assert state is not None
    for i in range(1, sc.n_servo + 1):
        assert net.positions[i] == state.positions[i]


# ---------------------------------------------------------------- subsets

def test_subset_sweep_reproducible():
    sc = _small_scenario()
    a = standard_subset_sweep(sc, n_subsets=3, seed=4)
    b = standard_subset_sweep(sc, n_subsets=3, seed=4)
    assert a.picks == b.picks
    assert a.rmses == b.rmses
    assert len(a.rmses) == 3
    assert a.mean >= 0 and a.median >= 0


def test_subset_sweep_flank_composition():
    sc = _small_scenario()
    sweep = standard_subset_sweep(sc, n_subsets=8, seed=1)
    for pick in sweep.picks:
        assert len(pick) == sc.n_servo
        for k in range(1, sc.n_servo + 1):
            assert sum(i in sc.standard_ids_for(k) for i in pick) == 1
    assert len(set(sweep.picks)) > 1


def test_subset_sweep_thirteen_node_example():
    # 13 platforms with both flanks give 26 fixed nodes; flank subsets
    # always hold 13
    sc = _small_scenario(seed=3, n_servo=13, n_points=2)
    assert len(sc.standard_nodes()) == 26
    sweep = standard_subset_sweep(sc, n_subsets=30, seed=9)
    assert all(len(p) == 13 for p in sweep.picks)


def test_subset_sweep_free_mode_and_validation():
    sc = _small_scenario()
    sweep = standard_subset_sweep(sc, n_subsets=2, nodes_per_subset=5,
                                  seed=2, mode="free")
    assert all(len(p) == 5 for p in sweep.picks)
    with pytest.raises(ValueError):
        standard_subset_sweep(sc, n_subsets=0)
    with pytest.raises(ValueError):
        standard_subset_sweep(sc, n_subsets=1, mode="banana")
    with pytest.raises(ValueError):
        standard_subset_sweep(sc, n_subsets=1, nodes_per_subset=4)
    with pytest.raises(ValueError):
        standard_subset_sweep(sc, n_subsets=1, nodes_per_subset=99,
                              mode="free")


def test_more_nodes_do_not_hurt_accuracy():
    # median RMSE over free subsets, non-increasing in node count up to a
    # 5% slack, pooled over 20 seeds
    meds = {}
    for size in (6, 9, 12):
        rmses = []
        for seed in range(1, 21):
            sweep = standard_subset_sweep(Scenario(seed=seed), n_subsets=3,
                                          nodes_per_subset=size, seed=seed,
                                          mode="free")
            rmses.extend(sweep.rmses)
        meds[size] = float(np.median(rmses))
    assert meds[9] <= meds[6] * 1.05
    assert meds[12] <= meds[9] * 1.05
    assert meds[12] < meds[6]


# ---------------------------------------------------------------- multinomial

def _p_max_at_most(trials, categories, m):
    # coefficient extraction from the truncated exponential polynomial
    if m < 0:
        return 0.0
    base = np.array([1.0 / math.factorial(j) for j in range(m + 1)])
    poly = np.array([1.0])
    for _ in range(categories):
        poly = np.convolve(poly, base)
    if trials >= poly.size:
        return 0.0
    return float(poly[trials] * math.factorial(trials)
                 / categories ** trials)


def test_multinomial_dp_oracle_sanity():
    # closed-form checks of the in-test oracle itself
    assert_allclose(_p_max_at_most(2, 2, 1), 0.5, rtol=1e-12)
    assert_allclose(_p_max_at_most(2, 2, 2), 1.0, rtol=1e-12)
    assert_allclose(_p_max_at_most(3, 3, 1), 6 / 27, rtol=1e-12)


def test_multinomial_trivial_thresholds():
    r = multinomial_bias_test(38, 8, 0, mc_samples=10)
    assert (r.p_reach, r.p_within) == (1.0, 0.0)
    r = multinomial_bias_test(0, 8, 0, mc_samples=10)
    assert (r.p_reach, r.p_within) == (1.0, 1.0)
    r = multinomial_bias_test(38, 8, 39, mc_samples=10)
    assert (r.p_reach, r.p_within) == (0.0, 1.0)
    r = multinomial_bias_test(5, 1, 5, mc_samples=10)
    assert (r.p_reach, r.p_within) == (1.0, 1.0)


def test_multinomial_matches_exact_tail():
    r = multinomial_bias_test(38, 8, 9, mc_samples=200_000, seed=0)
    want_within = _p_max_at_most(38, 8, 9)
    want_reach = 1.0 - _p_max_at_most(38, 8, 8)
    # MC sd at 2e5 samples is ~1e-3; allow 4 sigma
    assert_allclose(r.p_within, want_within, atol=4e-3)
    assert_allclose(r.p_reach, want_reach, atol=4e-3)
    assert r.mc_samples == 200_000


def test_multinomial_reproducible_and_seeded():
    a = multinomial_bias_test(38, 8, 9, mc_samples=50_000, seed=3)
    b = multinomial_bias_test(38, 8, 9, mc_samples=50_000, seed=3)
    c = multinomial_bias_test(38, 8, 9, mc_samples=50_000, seed=4)
    assert (a.p_reach, a.p_within) == (b.p_reach, b.p_within)
    assert (a.p_reach, a.p_within) != (c.p_reach, c.p_within)


def test_multinomial_observed_counts():
    counts = [9, 5, 4, 5, 4, 4, 4, 3]
    r = multinomial_bias_test(38, 8, 9, counts=counts, mc_samples=1000)
    assert r.observed_max == 9
    assert r.observed_reaches is True
    r2 = multinomial_bias_test(38, 8, 9, mc_samples=1000)
    assert r2.observed_max is None and r2.observed_reaches is None
    with pytest.raises(ValueError):
        multinomial_bias_test(38, 8, 9, counts=[38], mc_samples=10)
    with pytest.raises(ValueError):
        multinomial_bias_test(38, 8, 9, counts=[1] * 8, mc_samples=10)


def test_multinomial_validation():
    with pytest.raises(ValueError):
        multinomial_bias_test(-1, 8, 9)
    with pytest.raises(ValueError):
        multinomial_bias_test(38, 0, 9)
    with pytest.raises(ValueError):
        multinomial_bias_test(38, 8, 9, mc_samples=0)
