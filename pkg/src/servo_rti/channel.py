"""Synthetic RF world: multipath channel, person shadowing, rotatable
antennas, and the TDMA measurement cycle.

The channel for a link is a deterministic phasor sum of the direct path and
one single-bounce path per scatterer. Path amplitudes follow a log-distance
law over the total traveled length, so moving an antenna by a few
centimeters changes relative path phases and produces realistic small-scale
fading across servo positions and frequency channels. A person is a vertical
cylinder that attenuates every path passing within its radius: links in a
constructive fade lose power when crossed, while deeply faded links often
gain power because the obstruction breaks a destructive phase alignment.

Measurement noise and packet loss are drawn from a counter-based generator
keyed by (seed, cycle, tx, rx, channel), which makes every sample a pure
function of the environment seed and the command history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .geometry import Point2D, link_distance

__all__ = [
    "SPEED_OF_LIGHT",
    "CHANNEL_MIN",
    "CHANNEL_MAX",
    "SERVO_POSITIONS",
    "channel_frequency",
    "wavelength",
    "validate_channels",
    "antenna_position",
    "Environment",
    "PersonModel",
    "NodeState",
    "MeasurementFrame",
    "TdmaNetwork",
    "directed_link_pairs",
    "channel_gain",
    "simulate_rss",
]

SPEED_OF_LIGHT = 299_792_458.0
CHANNEL_MIN = 11
CHANNEL_MAX = 26
SERVO_POSITIONS = 8


def channel_frequency(channel: int) -> float:
    """Center frequency in Hz of a 2.4 GHz IEEE 802.15.4 channel (11..26)."""
    if not CHANNEL_MIN <= channel <= CHANNEL_MAX:
        raise ValueError(f"channel {channel} outside {CHANNEL_MIN}..{CHANNEL_MAX}")
    return (2405.0 + 5.0 * (channel - CHANNEL_MIN)) * 1e6


def wavelength(channel: int) -> float:
    return SPEED_OF_LIGHT / channel_frequency(channel)


def validate_channels(channels: Iterable[int]) -> tuple[int, ...]:
    chs = tuple(int(c) for c in channels)
    if not chs:
        raise ValueError("channel set is empty")
    if len(set(chs)) != len(chs):
        raise ValueError(f"duplicate channels in {chs}")
    for c in chs:
        channel_frequency(c)
    return chs


def antenna_position(center, radius: float, position: int) -> Point2D:
    """Antenna location for a servo platform at one of its discrete stops.

    Stops are 45 degrees apart on a circle around the platform center;
    position 1 points along +x and numbering increases counterclockwise.
    """
    if not 1 <= int(position) <= SERVO_POSITIONS:
        raise ValueError(f"servo position {position} outside 1..{SERVO_POSITIONS}")
    if radius < 0:
        raise ValueError("servo radius must be non-negative")
    cx, cy = float(center[0]), float(center[1])
    theta = 2.0 * math.pi * (int(position) - 1) / SERVO_POSITIONS
    return Point2D(cx + radius * math.cos(theta), cy + radius * math.sin(theta))


@dataclass(frozen=True, eq=False)
class Environment:
    """Static description of the simulated deployment area.

    ``scatterer_xy`` is ``(k, 2)`` and ``scatterer_amp`` holds per-scatterer
    reflection amplitudes in [0, 1]. ``rssi_quantization`` of 0 disables
    quantization (useful in tests); the default mimics integer-dBm radios.
    """

    room: tuple[float, float, float, float]
    scatterer_xy: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    scatterer_amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tx_power: float = 4.5
    path_loss_exponent: float = 2.3
    reference_loss: float = 40.0
    noise_sigma: float = 0.0
    rssi_quantization: float = 1.0
    rssi_floor: float = -100.0
    packet_loss: float = 0.0
    seed: int = 0

    def __post_init__(self):
        xmin, ymin, xmax, ymax = (float(v) for v in self.room)
        if xmax <= xmin or ymax <= ymin:
            raise ValueError(f"empty room {self.room}")
        object.__setattr__(self, "room", (xmin, ymin, xmax, ymax))
        xy = np.asarray(self.scatterer_xy, dtype=float).reshape(-1, 2)
        amp = np.asarray(self.scatterer_amp, dtype=float).ravel()
        if xy.shape[0] != amp.shape[0]:
            raise ValueError("scatterer positions and amplitudes disagree in length")
        if amp.size and (amp.min() < 0.0 or amp.max() > 1.0):
            raise ValueError("scatterer amplitudes must lie in [0, 1]")
        for x, y in xy:
            if not self._inside(x, y):
                raise ValueError(f"scatterer ({x}, {y}) outside the room")
        object.__setattr__(self, "scatterer_xy", xy)
        object.__setattr__(self, "scatterer_amp", amp)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.rssi_quantization < 0:
            raise ValueError("rssi_quantization must be non-negative")
        if not 0.0 <= self.packet_loss <= 0.1:
            raise ValueError("packet_loss must lie in [0, 0.1]")
        if not math.isfinite(self.rssi_floor):
            raise ValueError("rssi_floor must be finite")

    def _inside(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.room
        return xmin <= x <= xmax and ymin <= y <= ymax

    def contains(self, point) -> bool:
        return self._inside(float(point[0]), float(point[1]))

    @classmethod
    def with_random_scatterers(
        cls,
        room,
        count: int,
        scatter_seed: int,
        amp_range: tuple[float, float] = (0.25, 0.70),
        margin: float = 0.1,
        **kwargs,
    ) -> "Environment":
        """Environment with ``count`` scatterers placed uniformly inside the
        room (inset by ``margin``) with amplitudes uniform in ``amp_range``.
        """
        xmin, ymin, xmax, ymax = (float(v) for v in room)
        rng = np.random.default_rng(scatter_seed)
        xs = rng.uniform(xmin + margin, xmax - margin, size=count)
        ys = rng.uniform(ymin + margin, ymax - margin, size=count)
        amp = rng.uniform(amp_range[0], amp_range[1], size=count)
        return cls(room=(xmin, ymin, xmax, ymax),
                   scatterer_xy=np.column_stack([xs, ys]),
                   scatterer_amp=amp, **kwargs)


@dataclass(frozen=True)
class PersonModel:
    """A person as an attenuating cylinder of given radius (meters)."""

    position: Point2D
    body_radius: float = 0.15
    path_attenuation_db: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "position", Point2D(float(self.position[0]), float(self.position[1])))
        if self.body_radius <= 0:
            raise ValueError("body_radius must be positive")
        if self.path_attenuation_db < 0:
            raise ValueError("path_attenuation_db must be non-negative")


@dataclass(frozen=True)
class NodeState:
    """One deployed node. ``servo_radius`` 0 models a standard fixed node, in
    which case the servo position is irrelevant to the antenna location."""

    node_id: int
    base_center: Point2D
    servo_radius: float = 0.10
    position: int = 1

    def __post_init__(self):
        object.__setattr__(self, "node_id", int(self.node_id))
        object.__setattr__(self, "base_center",
                           Point2D(float(self.base_center[0]), float(self.base_center[1])))
        # validates radius and position range
        antenna_position(self.base_center, self.servo_radius, self.position)

    @property
    def antenna(self) -> Point2D:
        return antenna_position(self.base_center, self.servo_radius, self.position)

    def rotated(self, position: int) -> "NodeState":
        return replace(self, position=int(position))


def directed_link_pairs(node_ids: Sequence[int]) -> list[tuple[int, int]]:
    """All ordered (tx, rx) pairs, tx-major in the given node order."""
    return [(t, r) for t in node_ids for r in node_ids if t != r]


@lru_cache(maxsize=256)
def _subset_rows(node_ids: tuple[int, ...], keep: tuple[int, ...]) -> np.ndarray:
    index = {pair: i for i, pair in enumerate(directed_link_pairs(node_ids))}
    return np.array([index[p] for p in directed_link_pairs(keep)], dtype=int)


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """RSS samples for every directed link and channel during one TDMA cycle.

    ``rss`` has shape ``(n_links, n_channels)`` with link rows ordered as
    :func:`directed_link_pairs`; NaN marks a lost sample. ``positions`` is a
    snapshot of each node's servo position during the cycle.
    """

    cycle: int
    node_ids: tuple[int, ...]
    channels: tuple[int, ...]
    rss: np.ndarray
    positions: Mapping[int, int]

    def __post_init__(self):
        n_links = len(self.node_ids) * (len(self.node_ids) - 1)
        rss = np.asarray(self.rss, dtype=float)
        if rss.shape != (n_links, len(self.channels)):
            raise ValueError(f"rss shape {rss.shape} does not match "
                             f"({n_links}, {len(self.channels)})")
        object.__setattr__(self, "rss", rss)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "positions",
                           {int(k): int(v) for k, v in dict(self.positions).items()})

    @property
    def n_links(self) -> int:
        return self.rss.shape[0]

    def links(self) -> list[tuple[int, int]]:
        return directed_link_pairs(self.node_ids)

    def sample(self, tx: int, rx: int, channel: int) -> float:
        pairs = directed_link_pairs(self.node_ids)
        try:
            li = pairs.index((int(tx), int(rx)))
            ci = self.channels.index(int(channel))
        except ValueError as exc:
            raise KeyError(f"no sample for link ({tx}, {rx}) channel {channel}") from exc
        return float(self.rss[li, ci])

    def subset(self, keep_ids: Sequence[int]) -> "MeasurementFrame":
        """Frame restricted to links among ``keep_ids`` (order preserved from
        this frame's node order)."""
        keep = tuple(i for i in self.node_ids if i in set(int(k) for k in keep_ids))
        if len(keep) < 2:
            raise ValueError("subset needs at least two nodes")
        rows = _subset_rows(self.node_ids, keep)
        return MeasurementFrame(
            cycle=self.cycle,
            node_ids=keep,
            channels=self.channels,
            rss=self.rss[rows],
            positions={i: self.positions[i] for i in keep},
        )


# counter-based generator: splitmix64 finalizer over mixed key words

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    with np.errstate(over="ignore"):
        z = z + _SM_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SM_M1
        z = (z ^ (z >> np.uint64(27))) * _SM_M2
        return z ^ (z >> np.uint64(31))


def _hash_uniform(seed: int, cycle: int, tx_ids, rx_ids, channels, stream: int) -> np.ndarray:
    """Uniform (0, 1) variates keyed by sample identity, not draw order."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _mix(np.uint64(cycle)))
        h = _mix(h ^ np.asarray(tx_ids, dtype=np.uint64))
        h = _mix(h ^ np.asarray(rx_ids, dtype=np.uint64))
        h = _mix(h ^ np.asarray(channels, dtype=np.uint64))
        h = _mix(h ^ np.uint64(stream))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def _segment_distance(point, seg_a, seg_b) -> np.ndarray:
    """Distance from ``point`` to segments with endpoint arrays ``(..., 2)``."""
    a = np.asarray(seg_a, dtype=float)
    b = np.asarray(seg_b, dtype=float)
    p = np.asarray(point, dtype=float)
    ab = b - a
    ap = p - a
    denom = np.einsum("...i,...i", ab, ab)
    t = np.einsum("...i,...i", ap, ab) / np.where(denom == 0.0, 1.0, denom)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    diff = p - closest
    return np.sqrt(np.einsum("...i,...i", diff, diff))


def _complex_gains(env: Environment, tx_xy: np.ndarray, rx_xy: np.ndarray,
                   channels: Sequence[int],
                   person: Optional[PersonModel]) -> np.ndarray:
    """Complex channel gain per (link, channel).

    ``tx_xy`` and ``rx_xy`` are ``(n_links, 2)`` antenna arrays.
    """
    tx = np.asarray(tx_xy, dtype=float)
    rx = np.asarray(rx_xy, dtype=float)
    lam = np.array([wavelength(c) for c in channels])
    eta = env.path_loss_exponent
    shadow = 1.0
    if person is not None:
        shadow = 10.0 ** (-person.path_attenuation_db / 20.0)

    d = np.hypot(rx[:, 0] - tx[:, 0], rx[:, 1] - tx[:, 1])
    amp_los = d ** (-eta / 2.0)
    if person is not None:
        blocked = _segment_distance(person.position, tx, rx) < person.body_radius
        amp_los = amp_los * np.where(blocked, shadow, 1.0)
    gains = amp_los[:, None] * np.exp(-2j * np.pi * d[:, None] / lam[None, :])

    if env.scatterer_xy.shape[0]:
        scat = env.scatterer_xy  # (k, 2)
        d_tx = np.hypot(tx[:, None, 0] - scat[None, :, 0],
                        tx[:, None, 1] - scat[None, :, 1])
        d_rx = np.hypot(rx[:, None, 0] - scat[None, :, 0],
                        rx[:, None, 1] - scat[None, :, 1])
        total = d_tx + d_rx  # (n_links, k)
        amp = env.scatterer_amp[None, :] * total ** (-eta / 2.0)
        if person is not None:
            seg_tx = np.broadcast_to(tx[:, None, :], (tx.shape[0], scat.shape[0], 2))
            seg_rx = np.broadcast_to(rx[:, None, :], (rx.shape[0], scat.shape[0], 2))
            seg_sc = np.broadcast_to(scat[None, :, :], (tx.shape[0], scat.shape[0], 2))
            blocked = ((_segment_distance(person.position, seg_tx, seg_sc)
                        < person.body_radius)
                       | (_segment_distance(person.position, seg_sc, seg_rx)
                          < person.body_radius))
            amp = amp * np.where(blocked, shadow, 1.0)
        phase = np.exp(-2j * np.pi * total[:, :, None] / lam[None, None, :])
        gains = gains + np.einsum("lk,lkc->lc", amp, phase)
    return gains


def channel_gain(env: Environment, tx, rx, channel: int,
                 person: Optional[PersonModel] = None) -> complex:
    """Complex gain of a single link on one channel."""
    link_distance(tx, rx)
    tx_xy = np.array([[float(tx[0]), float(tx[1])]])
    rx_xy = np.array([[float(rx[0]), float(rx[1])]])
    validate_channels([channel])
    return complex(_complex_gains(env, tx_xy, rx_xy, [channel], person)[0, 0])


def _power_dbm(env: Environment, gains: np.ndarray) -> np.ndarray:
    mag = np.abs(gains)
    with np.errstate(divide="ignore"):
        return env.tx_power - env.reference_loss + 20.0 * np.log10(mag)


def _quantize_clamp(env: Environment, power: np.ndarray) -> np.ndarray:
    out = np.asarray(power, dtype=float)
    if env.rssi_quantization > 0:
        step = env.rssi_quantization
        out = np.round(out / step) * step
    return np.maximum(out, env.rssi_floor)


def simulate_rss(env: Environment, tx, rx, channel: int,
                 person: Optional[PersonModel] = None,
                 rng: Optional[np.random.Generator] = None) -> float:
    """Quantized RSS (dBm) of one link sample; noise is added only when an
    ``rng`` is supplied."""
    for name, point in (("tx", tx), ("rx", rx)):
        if not env.contains(point):
            raise ValueError(f"{name} antenna {tuple(point)} outside the room")
    if person is not None and not env.contains(person.position):
        raise ValueError(f"person {tuple(person.position)} outside the room")
    gain = channel_gain(env, tx, rx, channel, person)
    power = float(_power_dbm(env, np.array([[gain]]))[0, 0])
    if rng is not None and env.noise_sigma > 0:
        power += float(rng.normal(0.0, env.noise_sigma))
    return float(_quantize_clamp(env, np.array(power)))


class TdmaNetwork:
    """TDMA measurement loop over every directed link and channel.

    Each :meth:`run_cycle` call measures one frame at the nodes' current
    positions. A rotation command rides the slot at the end of the cycle, so
    it takes effect from the next cycle; the frame returned by the call that
    carried the command was still measured at the old position.
    """

    def __init__(self, env: Environment, nodes: Sequence[NodeState],
                 channels: Iterable[int]):
        nodes = list(nodes)
        if len(nodes) < 2:
            raise ValueError("a network needs at least two nodes")
        ids = [n.node_id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate node ids in {ids}")
        for n in nodes:
            for p in range(1, SERVO_POSITIONS + 1):
                spot = antenna_position(n.base_center, n.servo_radius, p)
                if not env.contains(spot):
                    raise ValueError(
                        f"node {n.node_id} position {p} antenna {tuple(spot)} "
                        f"outside the room")
        self.env = env
        self.channels = validate_channels(channels)
        self._nodes = {n.node_id: n for n in nodes}
        self.cycle = 0
        self._pairs = directed_link_pairs(tuple(self._nodes))
        self._id_index = {i: k for k, i in enumerate(self._nodes)}
        self._tx_idx = np.array([self._id_index[t] for t, _ in self._pairs])
        self._rx_idx = np.array([self._id_index[r] for _, r in self._pairs])
        self._tx_ids = np.array([t for t, _ in self._pairs], dtype=np.uint64)[:, None]
        self._rx_ids = np.array([r for _, r in self._pairs], dtype=np.uint64)[:, None]
        self._ch_arr = np.array(self.channels, dtype=np.uint64)[None, :]
        self._gain_cache: dict = {}

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(self._nodes)

    @property
    def positions(self) -> dict[int, int]:
        return {i: n.position for i, n in self._nodes.items()}

    def node(self, node_id: int) -> NodeState:
        return self._nodes[node_id]

    def states(self) -> list[NodeState]:
        return list(self._nodes.values())

    def antennas(self) -> dict[int, Point2D]:
        return {i: n.antenna for i, n in self._nodes.items()}

    def set_positions(self, mapping: Mapping[int, int]) -> None:
        """Deployment-time setup; costs no cycles, unlike a rotation command."""
        for node_id, p in mapping.items():
            if node_id not in self._nodes:
                raise KeyError(f"unknown node {node_id}")
            self._nodes[node_id] = self._nodes[node_id].rotated(p)

    def _antenna_array(self) -> np.ndarray:
        return np.array([n.antenna for n in self._nodes.values()], dtype=float)

    def _gains(self, person: Optional[PersonModel]) -> np.ndarray:
        key = (tuple((i, n.position) for i, n in self._nodes.items()),
               None if person is None else (person.position.x, person.position.y,
                                            person.body_radius,
                                            person.path_attenuation_db))
        cached = self._gain_cache.get(key)
        if cached is not None:
            return cached
        antennas = self._antenna_array()
        gains = _complex_gains(self.env, antennas[self._tx_idx],
                               antennas[self._rx_idx], self.channels, person)
        if len(self._gain_cache) > 1024:
            self._gain_cache.clear()
        self._gain_cache[key] = gains
        return gains

    def run_cycle(self, person: Optional[PersonModel] = None,
                  command: Optional[tuple[int, int]] = None) -> MeasurementFrame:
        if person is not None and not self.env.contains(person.position):
            raise ValueError(f"person {tuple(person.position)} outside the room")
        power = _power_dbm(self.env, self._gains(person))
        if self.env.noise_sigma > 0:
            u = _hash_uniform(self.env.seed, self.cycle,
                              self._tx_ids, self._rx_ids, self._ch_arr, stream=1)
            power = power + self.env.noise_sigma * ndtri(u)
        rss = _quantize_clamp(self.env, power)
        if self.env.packet_loss > 0:
            u = _hash_uniform(self.env.seed, self.cycle,
                              self._tx_ids, self._rx_ids, self._ch_arr, stream=0)
            rss = np.where(u < self.env.packet_loss, np.nan, rss)
        frame = MeasurementFrame(cycle=self.cycle, node_ids=self.node_ids,
                                 channels=self.channels, rss=rss,
                                 positions=self.positions)
        if command is not None:
            node_id, position = command
            if node_id not in self._nodes:
                raise KeyError(f"rotation command for unknown node {node_id}")
            self._nodes[node_id] = self._nodes[node_id].rotated(position)
        self.cycle += 1
        return frame

    def run_cycles(self, count: int,
                   person: Optional[PersonModel] = None) -> list[MeasurementFrame]:
        return [self.run_cycle(person=person) for _ in range(count)]
