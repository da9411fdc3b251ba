"""Scenario configuration: room, node layout, channel plan, and person walk.

A scenario is a plain JSON document so runs can be reproduced from a single
file plus a seed. Node layout defaults to an even spacing along the room
perimeter; each servo platform gets two flanking standard nodes for
like-for-like comparisons against fixed deployments.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibration import CalibrationConfig
from .channel import Environment, NodeState, PersonModel, validate_channels
from .geometry import Point2D
from .rti import RtiLocalizer

__all__ = [
    "Scenario",
    "perimeter_layout",
    "STANDARD_ID_BASE",
]

# flank ids: servo k keeps ids 100 + 2k - 1 and 100 + 2k
STANDARD_ID_BASE = 100


def perimeter_layout(room, count: int, inset: float) -> list[Point2D]:
    """Evenly spaced points along the room perimeter, inset from the walls.

    The walk starts at the inset corner nearest the room origin and proceeds
    counterclockwise.
    """
    xmin, ymin, xmax, ymax = (float(v) for v in room)
    x0, y0 = xmin + inset, ymin + inset
    x1, y1 = xmax - inset, ymax - inset
    if x1 <= x0 or y1 <= y0:
        raise ValueError("inset leaves no perimeter")
    if count < 2:
        raise ValueError("need at least two nodes")
    w, h = x1 - x0, y1 - y0
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    directions = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
    lengths = [w, h, w, h]
    perimeter = 2 * (w + h)
    points = []
    for k in range(count):
        s = perimeter * k / count
        for (cx, cy), (dx, dy), seg_len in zip(corners, directions, lengths):
            if s <= seg_len:
                points.append(Point2D(cx + dx * s, cy + dy * s))
                break
            s -= seg_len
        else:  # numeric spill past the final corner
            points.append(Point2D(*corners[0]))
    return points


def _ring_points(room, count: int, radius_frac: float = 0.3) -> list[Point2D]:
    xmin, ymin, xmax, ymax = (float(v) for v in room)
    cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
    r = radius_frac * min(xmax - xmin, ymax - ymin)
    pts = []
    for k in range(count):
        theta = 2.0 * math.pi * k / count + math.pi / 7.0
        pts.append(Point2D(cx + r * math.cos(theta), cy + r * math.sin(theta)))
    return pts


@dataclass
class Scenario:
    """Complete description of one simulated deployment and its evaluation."""

    room: tuple[float, float, float, float] = (0.0, 0.0, 6.0, 6.0)
    n_servo: int = 12
    servo_centers: Optional[list] = None
    perimeter_inset: float = 0.5
    servo_radius: float = 0.10
    standard_offset: float = 0.20
    channels: tuple[int, ...] = (15, 20, 25, 26)
    n_scatterers: int = 14
    scatterer_amp: tuple[float, float] = (0.25, 0.70)
    scatterer_margin: float = 0.3
    tx_power: float = 4.5
    path_loss_exponent: float = 2.3
    reference_loss: float = 40.0
    noise_sigma: float = 0.75
    rssi_quantization: float = 1.0
    rssi_floor: float = -100.0
    packet_loss: float = 0.0
    person_radius: float = 0.15
    person_attenuation: float = 10.0
    ground_truth: Optional[list] = None
    n_points: int = 6
    training_cycles: int = 20
    dwell_cycles: int = 20
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    voxel_size: float = 0.25
    sigma_noise2: float = 1.0
    sigma_voxel2: float = 0.5
    corr_distance: float = 0.5
    lambda_min: float = 0.05
    lambda_slope: float = 0.03
    lambda_max: float = 1.0
    dead_band: float = 1.0
    saturation: float = 10.0
    seed: int = 1

    def __post_init__(self):
        self.room = tuple(float(v) for v in self.room)
        self.channels = validate_channels(self.channels)
        self.scatterer_amp = tuple(float(v) for v in self.scatterer_amp)
        if self.servo_centers is not None:
            self.servo_centers = [Point2D(float(p[0]), float(p[1]))
                                  for p in self.servo_centers]
            self.n_servo = len(self.servo_centers)
        if self.ground_truth is not None:
            self.ground_truth = [Point2D(float(p[0]), float(p[1]))
                                 for p in self.ground_truth]
            self.n_points = len(self.ground_truth)
        if isinstance(self.calibration, dict):
            self.calibration = CalibrationConfig(**self.calibration)
        if self.training_cycles < 1 or self.dwell_cycles < 1:
            raise ValueError("training_cycles and dwell_cycles must be positive")

    # layout -------------------------------------------------------------

    def resolved_servo_centers(self) -> list[Point2D]:
        if self.servo_centers is not None:
            return list(self.servo_centers)
        return perimeter_layout(self.room, self.n_servo, self.perimeter_inset)

    def resolved_ground_truth(self) -> list[Point2D]:
        if self.ground_truth is not None:
            return list(self.ground_truth)
        return _ring_points(self.room, self.n_points)

    def servo_nodes(self, positions: Optional[dict] = None) -> list[NodeState]:
        centers = self.resolved_servo_centers()
        nodes = []
        for k, center in enumerate(centers, start=1):
            p = 1 if positions is None else int(positions.get(k, 1))
            nodes.append(NodeState(node_id=k, base_center=center,
                                   servo_radius=self.servo_radius, position=p))
        return nodes

    def standard_nodes(self) -> list[NodeState]:
        """Two fixed nodes flanking every servo platform along the perimeter
        walk, ``standard_offset`` meters to either side."""
        centers = self.resolved_servo_centers()
        n = len(centers)
        nodes = []
        for k, center in enumerate(centers, start=1):
            nxt = centers[k % n]
            dx, dy = nxt.x - center.x, nxt.y - center.y
            norm = math.hypot(dx, dy)
            if norm == 0:
                raise ValueError("coincident servo centers")
            ux, uy = dx / norm, dy / norm
            for j, sign in enumerate((-1.0, 1.0)):
                flank = Point2D(center.x + sign * self.standard_offset * ux,
                                center.y + sign * self.standard_offset * uy)
                nodes.append(NodeState(node_id=STANDARD_ID_BASE + 2 * k - 1 + j,
                                       base_center=flank, servo_radius=0.0))
        return nodes

    def standard_ids_for(self, servo_id: int) -> tuple[int, int]:
        return (STANDARD_ID_BASE + 2 * servo_id - 1,
                STANDARD_ID_BASE + 2 * servo_id)

    # factories ----------------------------------------------------------

    def environment(self) -> Environment:
        return Environment.with_random_scatterers(
            room=self.room, count=self.n_scatterers,
            scatter_seed=(self.seed, 101),
            amp_range=tuple(self.scatterer_amp), margin=self.scatterer_margin,
            tx_power=self.tx_power,
            path_loss_exponent=self.path_loss_exponent,
            reference_loss=self.reference_loss,
            noise_sigma=self.noise_sigma,
            rssi_quantization=self.rssi_quantization,
            rssi_floor=self.rssi_floor,
            packet_loss=self.packet_loss,
            seed=self.seed)

    def person_at(self, point) -> PersonModel:
        return PersonModel(position=Point2D(float(point[0]), float(point[1])),
                           body_radius=self.person_radius,
                           path_attenuation_db=self.person_attenuation)

    def localizer(self) -> RtiLocalizer:
        return RtiLocalizer(voxel_size=self.voxel_size, bounds=self.room,
                            sigma_noise2=self.sigma_noise2,
                            sigma_voxel2=self.sigma_voxel2,
                            corr_distance=self.corr_distance,
                            lambda_min=self.lambda_min,
                            lambda_slope=self.lambda_slope,
                            lambda_max=self.lambda_max,
                            dead_band=self.dead_band,
                            saturation=self.saturation)

    # serialization ------------------------------------------------------

    def with_seed(self, seed: Optional[int]) -> "Scenario":
        if seed is None:
            return self
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["room"] = list(self.room)
        out["channels"] = list(self.channels)
        out["scatterer_amp"] = list(self.scatterer_amp)
        if self.servo_centers is not None:
            out["servo_centers"] = [[p.x, p.y] for p in self.servo_centers]
        if self.ground_truth is not None:
            out["ground_truth"] = [[p.x, p.y] for p in self.ground_truth]
        return out

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))
