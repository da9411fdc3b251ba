"""On-disk formats: RSS traces, voxel images, model dumps, calibration logs.

Everything is CSV or JSON except voxel images, which are also exported as
8-bit binary PGM for quick visual inspection. All writers emit LF line
endings and stable float formatting so identical runs produce identical
bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .calibration import CalibrationState, IncrementalResult
from .channel import MeasurementFrame, directed_link_pairs
from .geometry import Point2D, VoxelGrid
from .rti import RtiLocalizer

__all__ = [
    "TRACE_FILE",
    "POSITIONS_FILE",
    "GROUND_TRUTH_FILE",
    "TraceData",
    "write_trace",
    "read_trace",
    "write_image_csv",
    "write_image_pgm",
    "write_model",
    "write_calibration_log",
    "write_calibration_summary",
    "write_placements",
    "write_estimates",
]

TRACE_FILE = "trace.csv"
POSITIONS_FILE = "node_positions.csv"
GROUND_TRUTH_FILE = "ground_truth.csv"


def _fmt(value: float) -> str:
    return format(float(value), ".10g")


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


@dataclass
class TraceData:
    """A recorded measurement run plus per-cycle occupancy."""

    frames: list[MeasurementFrame]
    occupancy: dict[int, Optional[Point2D]]

    def training_frames(self) -> list[MeasurementFrame]:
        return [f for f in self.frames if self.occupancy.get(f.cycle) is None]

    def occupied_frames(self) -> list[tuple[Point2D, MeasurementFrame]]:
        return [(self.occupancy[f.cycle], f) for f in self.frames
                if self.occupancy.get(f.cycle) is not None]


def write_trace(out_dir, frames: Sequence[MeasurementFrame],
                occupancy: Optional[Mapping[int, Optional[Point2D]]] = None
                ) -> dict[str, Path]:
    """Write a run as three CSV files under ``out_dir``.

    ``trace.csv`` holds one row per sample with an empty rssi field for lost
    packets; ``node_positions.csv`` snapshots servo positions per cycle;
    ``ground_truth.csv`` has one row per cycle with empty coordinates while
    the room is empty.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    occupancy = {} if occupancy is None else dict(occupancy)
    paths = {name: out / name
             for name in (TRACE_FILE, POSITIONS_FILE, GROUND_TRUTH_FILE)}
    with paths[TRACE_FILE].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cycle", "tx_id", "rx_id", "channel", "rssi_dbm"])
        for frame in frames:
            pairs = frame.links()
            for li, (tx, rx) in enumerate(pairs):
                for ci, ch in enumerate(frame.channels):
                    v = frame.rss[li, ci]
                    w.writerow([frame.cycle, tx, rx, ch,
                                "" if not np.isfinite(v) else _fmt(v)])
    with paths[POSITIONS_FILE].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cycle", "node_id", "position"])
        for frame in frames:
            for node_id in frame.node_ids:
                w.writerow([frame.cycle, node_id, frame.positions[node_id]])
    with paths[GROUND_TRUTH_FILE].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cycle", "person_x", "person_y"])
        for frame in frames:
            point = occupancy.get(frame.cycle)
            if point is None:
                w.writerow([frame.cycle, "", ""])
            else:
                w.writerow([frame.cycle, _fmt(point[0]), _fmt(point[1])])
    return paths


def read_trace(trace_dir) -> TraceData:
    """Rebuild frames from :func:`write_trace` output.

    Reconstructed frames order nodes and channels ascending, which may
    differ from the recording network's order; samples are keyed by
    (tx, rx, channel) so nothing is lost.
    """
    trace_dir = Path(trace_dir)
    positions: dict[int, dict[int, int]] = {}
    with (trace_dir / POSITIONS_FILE).open(newline="") as fh:
        for row in csv.DictReader(fh):
            cycle = int(row["cycle"])
            positions.setdefault(cycle, {})[int(row["node_id"])] = \
                int(row["position"])
    samples: dict[int, dict[tuple[int, int, int], float]] = {}
    channels: set[int] = set()
    with (trace_dir / TRACE_FILE).open(newline="") as fh:
        for row in csv.DictReader(fh):
            cycle = int(row["cycle"])
            ch = int(row["channel"])
            channels.add(ch)
            value = float("nan") if row["rssi_dbm"] == "" else float(row["rssi_dbm"])
            samples.setdefault(cycle, {})[(int(row["tx_id"]),
                                           int(row["rx_id"]), ch)] = value
    occupancy: dict[int, Optional[Point2D]] = {}
    gt_path = trace_dir / GROUND_TRUTH_FILE
    if gt_path.exists():
        with gt_path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                cycle = int(row["cycle"])
                if row["person_x"] == "" or row["person_y"] == "":
                    occupancy[cycle] = None
                else:
                    occupancy[cycle] = Point2D(float(row["person_x"]),
                                               float(row["person_y"]))
    chs = tuple(sorted(channels))
    frames = []
    for cycle in sorted(samples):
        node_ids = tuple(sorted(positions.get(cycle, {})))
        if not node_ids:
            raise ValueError(f"cycle {cycle} has samples but no node positions")
        pairs = directed_link_pairs(node_ids)
        rss = np.full((len(pairs), len(chs)), np.nan)
        for li, pair in enumerate(pairs):
            for ci, ch in enumerate(chs):
                rss[li, ci] = samples[cycle].get((*pair, ch), float("nan"))
        frames.append(MeasurementFrame(cycle=cycle, node_ids=node_ids,
                                       channels=chs, rss=rss,
                                       positions=positions[cycle]))
    return TraceData(frames=frames, occupancy=occupancy)


def write_image_csv(path, grid: VoxelGrid, image: np.ndarray) -> Path:
    """One row per voxel: center coordinates and estimated attenuation."""
    x = np.asarray(image, dtype=float).ravel()
    if x.size != grid.n_voxels:
        raise ValueError("image does not match grid")
    path = Path(path)
    centers = grid.centers()
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["voxel_x", "voxel_y", "value"])
        for (cx, cy), v in zip(centers, x):
            w.writerow([_fmt(cx), _fmt(cy), _fmt(v)])
    return path


def write_image_pgm(path, grid: VoxelGrid, image: np.ndarray) -> Path:
    """8-bit binary PGM, min-max normalized; flat images come out black.

    Row 0 of the file is the top of the room (largest y)."""
    x = np.asarray(image, dtype=float).reshape(grid.ny, grid.nx)
    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        scaled = np.round(255.0 * (x - lo) / (hi - lo))
    else:
        scaled = np.zeros_like(x)
    pixels = scaled.astype(np.uint8)[::-1, :]
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode())
        fh.write(pixels.tobytes())
    return path


def write_model(path, localizer: RtiLocalizer) -> Path:
    """Dump a fitted localizer's tables as JSON."""
    baseline = localizer.baseline_
    fades = localizer.fades_
    widths = localizer.widths_
    links = []
    for li, (tx, rx) in enumerate(baseline.links()):
        for ci, ch in enumerate(baseline.channels):
            links.append({
                "tx": tx, "rx": rx, "channel": ch,
                "baseline_dbm": _json_float(baseline.mean[li, ci]),
                "samples": int(baseline.counts[li, ci]),
                "fade_level_db": _json_float(fades.level[li, ci]),
                "lambda_plus": _json_float(widths.lambda_plus[li, ci]),
                "lambda_minus": _json_float(widths.lambda_minus[li, ci]),
            })
    grid = localizer.grid_
    doc = {
        "eta": localizer.path_loss_.eta,
        "intercepts": {str(c): _json_float(v)
                       for c, v in localizer.path_loss_.intercepts.items()},
        "node_ids": list(baseline.node_ids),
        "channels": list(baseline.channels),
        "antennas": {str(i): [p.x, p.y]
                     for i, p in localizer.antennas_.items()},
        "grid": {"origin": [grid.origin.x, grid.origin.y],
                 "voxel_size": grid.voxel_size, "nx": grid.nx, "ny": grid.ny},
        "links": links,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _json_float(value) -> Optional[float]:
    v = float(value)
    return None if not np.isfinite(v) else v


def write_calibration_log(path, state: CalibrationState) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["iteration", "sensor_id", "position", "mean_rss_dbm",
                    "accepted"])
        for rec in state.evaluations:
            w.writerow([rec.iteration, rec.sensor, rec.position,
                        _fmt(rec.mean_rss), int(rec.accepted)])
    return path


def write_calibration_summary(path, state: CalibrationState) -> Path:
    doc = {
        "positions": {str(k): v for k, v in sorted(state.positions.items())},
        "converged": state.converged,
        "cycles_used": state.cycles_used,
        "accepted_moves": [list(m) for m in state.accepted_moves],
        "mean_rss_history": [[i, v] for i, v in state.mean_rss_history],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def write_placements(path, result: IncrementalResult) -> Path:
    doc = {
        "placements": [{"node_id": i, "x": p.x, "y": p.y}
                       for i, p in result.placements],
        "positions": {str(k): v for k, v in sorted(result.positions.items())},
        "tables": [{str(p): v for p, v in table.items()}
                   for table in result.tables],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def write_estimates(path, rows: Sequence[tuple[int, float, float]]) -> Path:
    """Per-cycle position estimates: cycle, x, y."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["cycle", "x", "y"])
        for cycle, x, y in rows:
            w.writerow([int(cycle), _fmt(x), _fmt(y)])
    return path


def write_report(out_dir, reports: Mapping[str, "ExperimentReport"]
                 ) -> dict[str, Path]:
    """Summary table plus per-point errors for a set of variant reports.

    Improvement percentages are relative to the "standard" variant when it
    is present.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = reports.get("standard")
    base_rmse = None if baseline is None else baseline.rmse
    paths = {"summary": out / "summary.csv", "report": out / "report.txt"}
    with paths["summary"].open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["variant", "n_nodes", "n_points", "rmse_m", "mean_error_m",
                    "median_error_m", "improvement_pct", "seed"])
        for name, rep in reports.items():
            improvement = ""
            if base_rmse and name != "standard":
                improvement = _fmt(100.0 * (base_rmse - rep.rmse) / base_rmse)
            w.writerow([name, len(rep.node_ids), len(rep.points),
                        _fmt(rep.rmse), _fmt(rep.mean_error),
                        _fmt(rep.median_error), improvement, rep.seed])
    lines = [f"{'variant':<18} {'nodes':>5} {'rmse_m':>8} {'improvement':>12}"]
    for name, rep in reports.items():
        if base_rmse and name != "standard":
            imp = f"{100.0 * (base_rmse - rep.rmse) / base_rmse:10.1f}%"
        else:
            imp = f"{'-':>11}"
        lines.append(f"{name:<18} {len(rep.node_ids):>5} {rep.rmse:>8.3f} {imp:>12}")
    paths["report"].write_text("\n".join(lines) + "\n")
    for name, rep in reports.items():
        p = out / f"points_{name.replace('-', '_')}.csv"
        with p.open("w", newline="") as fh:
            w = _writer(fh)
            w.writerow(["truth_x", "truth_y", "estimate_x", "estimate_y",
                        "error_m", "n_frames"])
            for res in rep.points:
                w.writerow([_fmt(res.truth.x), _fmt(res.truth.y),
                            _fmt(res.estimate.x), _fmt(res.estimate.y),
                            _fmt(res.error), res.n_frames])
        paths[f"points_{name}"] = p
    for name, rep in reports.items():
        if rep.calibration is not None:
            paths["calibration_log"] = write_calibration_log(
                out / "calibration_log.csv", rep.calibration)
            paths["calibration_summary"] = write_calibration_summary(
                out / "calibration_summary.json", rep.calibration)
    return paths
