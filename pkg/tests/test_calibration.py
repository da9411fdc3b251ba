import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from servo_rti.calibration import (
    CalibrationConfig,
    PLATFORM_ID_BASE,
    candidate_mean_rss,
    incremental_calibrate,
    mean_network_rss,
    network_calibrate,
    position_histogram,
)
from servo_rti.channel import (
    Environment,
    MeasurementFrame,
    NodeState,
    TdmaNetwork,
    antenna_position,
    wavelength,
)
from servo_rti.rti import BaselineTable, train_baseline
from servo_rti.scenario import Scenario

ROOM = (-1.0, -1.0, 6.0, 2.0)


def _quiet(room=ROOM, **kw):
    kw.setdefault("noise_sigma", 0.0)
    kw.setdefault("rssi_quantization", 0.0)
    return Environment(room=room, **kw)


def _frame(cycle, rss, node_ids=(1, 2), channels=(15,)):
    return MeasurementFrame(cycle=cycle, node_ids=node_ids, channels=channels,
                            rss=np.asarray(rss, dtype=float),
                            positions={i: 1 for i in node_ids})


def _half_wave_scatterer(d, channel):
    lam = wavelength(channel)
    return (d / 2, math.sqrt((d / 2 + lam / 4) ** 2 - (d / 2) ** 2))


# ---------------------------------------------------------------- means

def test_mean_network_rss_flat():
    frames = [_frame(0, [[-60.0], [-60.0]]), _frame(1, [[-60.0], [-60.0]])]
    assert mean_network_rss(frames) == -60.0


def test_mean_network_rss_unweighted_over_pairs():
    frames = [_frame(0, [[-50.0], [-70.0]])]
    assert mean_network_rss(frames) == -60.0


def test_mean_network_rss_time_averages_before_pooling():
    # lossy link: [-50, lost] vs steady [-70, -70]; pair means -50 and -70.
    # pooling raw samples instead would give -63.33
    frames = [_frame(0, [[-50.0], [-70.0]]), _frame(1, [[np.nan], [-70.0]])]
    assert mean_network_rss(frames) == -60.0


def test_mean_network_rss_channel_filter():
    frames = [_frame(0, [[-40.0, -80.0], [-40.0, -80.0]], channels=(15, 26))]
    assert mean_network_rss(frames) == -60.0
    assert mean_network_rss(frames, channels=[15]) == -40.0
    assert mean_network_rss(frames, channels=[26]) == -80.0


def test_mean_network_rss_errors():
    with pytest.raises(ValueError):
        mean_network_rss([])
    with pytest.raises(ValueError):
        mean_network_rss([_frame(0, [[np.nan], [np.nan]])])


def test_mean_network_rss_matches_direct_computation():
    rng = np.random.default_rng(6)
    rss = rng.uniform(-90, -40, size=(7, 12, 3))
    rss[rng.random(rss.shape) < 0.2] = np.nan
    ids = (1, 2, 3, 4)
    frames = [_frame(k, rss[k], node_ids=ids, channels=(15, 20, 25))
              for k in range(7)]
    with np.errstate(invalid="ignore"):
        per_pair = np.nanmean(rss, axis=0)
    want = np.nanmean(per_pair)
    assert_allclose(mean_network_rss(frames), want, rtol=1e-12)


# ---------------------------------------------------------------- candidates

def _table(mean, node_ids, channels=(15,)):
    mean = np.asarray(mean, dtype=float)
    return BaselineTable(node_ids=tuple(node_ids), channels=tuple(channels),
                         mean=mean, counts=np.isfinite(mean).astype(int))


def test_candidate_mean_sums_both_directions():
    # every sample -60: each deployed pair contributes -120
    table = _table(np.full((6, 1), -60.0), (9001, 1, 2))
    assert candidate_mean_rss(table, 9001, [1, 2]) == -120.0
    # single neighbor, asymmetric directions
    asym = _table([[-50.0], [-60.0]], (9001, 1))
    assert candidate_mean_rss(asym, 9001, [1]) == -110.0


def test_candidate_mean_penalizes_missing_directions():
    table = _table([[-60.0], [np.nan]], (9001, 1))
    # the lost direction contributes zero, not its pair's value
    assert candidate_mean_rss(table, 9001, [1]) == -60.0


def test_candidate_mean_channel_filter():
    mean = np.array([[-50.0, -90.0], [-50.0, -90.0]])
    table = _table(mean, (9001, 1), channels=(15, 26))
    assert candidate_mean_rss(table, 9001, [1]) == -140.0
    assert candidate_mean_rss(table, 9001, [1], channels=[15]) == -100.0


def test_candidate_mean_shift_invariance():
    rng = np.random.default_rng(3)
    mean = rng.uniform(-80, -40, size=(12, 2))
    table = _table(mean, (9001, 1, 2, 3), channels=(15, 20))
    base = candidate_mean_rss(table, 9001, [1, 2, 3])
    shifted = _table(mean + 5.0, (9001, 1, 2, 3), channels=(15, 20))
    assert_allclose(candidate_mean_rss(shifted, 9001, [1, 2, 3]), base + 10.0,
                    rtol=1e-12)


def test_candidate_mean_errors():
    table = _table(np.full((2, 1), -60.0), (9001, 1))
    with pytest.raises(ValueError):
        candidate_mean_rss(table, 9001, [])
    with pytest.raises(ValueError):
        candidate_mean_rss(table, 9001, [9001])


# ---------------------------------------------------------------- network sweep

def _pair_net(env, position=1, radius=0.10, far=(4.0, 0.0)):
    nodes = [NodeState(node_id=1, base_center=(0.0, 0.0), servo_radius=0.0),
             NodeState(node_id=2, base_center=far, servo_radius=radius,
                       position=position)]
    return TdmaNetwork(env, nodes, (26,))


def test_network_calibrate_requires_default_start():
    with pytest.raises(ValueError):
        network_calibrate(_pair_net(_quiet(), position=3))


def test_network_calibrate_no_move_when_quantization_hides_gains():
    # pure log-distance channel, 1 dB bins: all stops of the far node land
    # in the same bin, so no strict improvement exists anywhere
    env = _quiet(rssi_quantization=1.0)
    far = (4.25, 0.0)
    d_each = [math.hypot(*(antenna_position(far, 0.10, p))) for p in
              range(1, 9)]
    rss = [env.tx_power - env.reference_loss
           - 10 * env.path_loss_exponent * math.log10(d) for d in d_each]
    assert len({round(r) for r in rss}) == 1  # premise of the construction
    state = network_calibrate(_pair_net(env, far=far),
                              CalibrationConfig(samples_per_eval=2,
                                                static_window=2))
    assert state.converged
    assert state.positions == {1: 1, 2: 1}
    assert state.accepted_moves == []
    assert len(state.mean_rss_history) == 1


def test_network_calibrate_escapes_engineered_null():
    # a scatterer cancels the stop-1 link half a wavelength out of phase;
    # exhaustive simulation of all stops is the acceptance oracle
    p1 = antenna_position((4.0, 0.0), 0.10, 1)
    scat = _half_wave_scatterer(p1.x, 26)
    env = _quiet(scatterer_xy=[scat], scatterer_amp=[1.0])
    cfg = CalibrationConfig(samples_per_eval=4, static_window=4)
    state = network_calibrate(_pair_net(env), cfg)
    oracle = {p: mean_network_rss(_pair_net(env, position=p).run_cycles(4))
              for p in range(1, 9)}
    best = max(sorted(oracle), key=lambda p: oracle[p])
    assert state.converged
    assert state.positions[2] == best != 1
    assert oracle[best] > oracle[1] + 20
    hist = [v for _, v in state.mean_rss_history]
    assert all(b > a for a, b in zip(hist, hist[1:]))


def test_network_calibrate_replay_and_records():
    sc = Scenario(seed=5, n_servo=6)
    net = TdmaNetwork(sc.environment(), sc.servo_nodes(), sc.channels)
    cfg = CalibrationConfig(samples_per_eval=4, static_window=4)
    state = network_calibrate(net, cfg)
    assert state.converged
    assert state.cycles_used > 0
    # every accepted move strictly raised the incumbent
    hist = [v for _, v in state.mean_rss_history]
    assert len(hist) == 1 + len(state.accepted_moves)
    assert all(b > a for a, b in zip(hist, hist[1:]))
    # rejected evaluations leave no trace: replaying only the accepted
    # moves from the all-default state reproduces the final layout
    replay = {i: 1 for i in net.node_ids}
    for sensor, old, new in state.accepted_moves:
        assert replay[sensor] == old
        replay[sensor] = new
    assert replay == state.positions
    # each sweep evaluates all eight stops per sensor
    sweeps = {e.iteration for e in state.evaluations}
    for s in sweeps:
        for sensor in net.node_ids:
            stops = [e.position for e in state.evaluations
                     if e.iteration == s and e.sensor == sensor]
            assert stops == list(range(1, 9))


def test_network_calibrate_improves_over_default():
    sc = Scenario(seed=7, n_servo=6)
    env = sc.environment()
    nodes = sc.servo_nodes()
    state = network_calibrate(TdmaNetwork(env, nodes, sc.channels),
                              CalibrationConfig(samples_per_eval=4,
                                                static_window=4))
    before = mean_network_rss(
        TdmaNetwork(env, nodes, sc.channels).run_cycles(4))
    after = mean_network_rss(
        TdmaNetwork(env, sc.servo_nodes(state.positions),
                    sc.channels).run_cycles(4))
    assert state.accepted_moves  # the scene leaves room to improve
    assert after > before


# ---------------------------------------------------------------- incremental

def test_incremental_nearest_stop_wins_without_quantization():
    env = _quiet()
    res = incremental_calibrate([(0.0, 0.0), (4.0, 0.0)], env, channels=[15],
                                config=CalibrationConfig(samples_per_eval=2,
                                                         static_window=2))
    # stop 5 points back toward the only deployed node
    assert res.positions == {2: 5}
    assert res.placements[0] == (1, (0.0, 0.0))
    assert res.placements[1][0] == 2
    assert_allclose(res.placements[1][1],
                    antenna_position((4.0, 0.0), 0.10, 5), atol=1e-12)


def test_incremental_tie_breaks_to_first_stop():
    # coarse quantization collapses all stops into one bin
    env = _quiet(rssi_quantization=20.0, rssi_floor=-200.0)
    res = incremental_calibrate([(0.0, 0.0), (4.0, 0.0)], env, channels=[15],
                                config=CalibrationConfig(samples_per_eval=2,
                                                         static_window=2))
    assert res.positions == {2: 1}


def test_incremental_avoids_engineered_null():
    p1 = antenna_position((4.0, 0.0), 0.10, 1)
    scat = _half_wave_scatterer(p1.x, 26)
    env = _quiet(scatterer_xy=[scat], scatterer_amp=[1.0])
    res = incremental_calibrate([(0.0, 0.0), (4.0, 0.0)], env, channels=[26],
                                config=CalibrationConfig(samples_per_eval=4,
                                                         static_window=4))
    table = res.tables[0]
    assert set(table) == set(range(1, 9))
    best = max(sorted(table), key=lambda p: table[p])
    assert res.positions[2] == best != 1
    assert table[best] > table[1]


def test_incremental_grows_deployed_set():
    env = _quiet(room=(-1.0, -1.0, 6.0, 6.0))
    spots = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)]
    res = incremental_calibrate(spots, env, channels=[15],
                                config=CalibrationConfig(samples_per_eval=2,
                                                         static_window=2))
    assert [i for i, _ in res.placements] == [1, 2, 3, 4]
    assert sorted(res.positions) == [2, 3, 4]
    assert len(res.tables) == 3
    assert all(i < PLATFORM_ID_BASE for i, _ in res.placements)
    with pytest.raises(ValueError):
        incremental_calibrate([(0.0, 0.0)], env, channels=[15])


def test_position_histogram():
    class R:
        def __init__(self, positions):
            self.positions = positions

    hist = position_histogram([R({2: 5}), R({2: 5, 3: 1}), R({4: 8})])
    assert np.array_equal(hist, [1, 0, 0, 0, 2, 0, 0, 1])
    assert position_histogram([]).sum() == 0
    with pytest.raises(ValueError):
        position_histogram([R({2: 9})])
