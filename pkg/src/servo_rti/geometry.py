"""Planar geometry: points, link ellipses, and voxel grids.

All coordinates are meters in a fixed 2D frame. Operations here are pure
and stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "DegenerateLinkError",
    "Point2D",
    "LinkGeometry",
    "VoxelGrid",
    "link_distance",
    "ellipse_contains",
    "ellipse_contains_many",
    "ellipse_area",
]


class DegenerateLinkError(ValueError):
    """A link's transmitter and receiver coincide."""


class Point2D(NamedTuple):
    x: float
    y: float


def _as_xy(point) -> tuple[float, float]:
    x, y = point
    x, y = float(x), float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite coordinates ({x}, {y})")
    return x, y


def link_distance(tx, rx) -> float:
    """Euclidean distance between link endpoints; zero-length links are invalid."""
    tx_x, tx_y = _as_xy(tx)
    rx_x, rx_y = _as_xy(rx)
    d = math.hypot(rx_x - tx_x, rx_y - tx_y)
    if d == 0.0:
        raise DegenerateLinkError(f"link endpoints coincide at ({tx_x}, {tx_y})")
    return d


@dataclass(frozen=True)
class LinkGeometry:
    """Directed link between two antennas."""

    tx: Point2D
    rx: Point2D

    def __post_init__(self):
        object.__setattr__(self, "tx", Point2D(*_as_xy(self.tx)))
        object.__setattr__(self, "rx", Point2D(*_as_xy(self.rx)))
        link_distance(self.tx, self.rx)

    @property
    def length(self) -> float:
        return math.hypot(self.rx.x - self.tx.x, self.rx.y - self.tx.y)


def ellipse_contains(point, link: LinkGeometry, width: float) -> bool:
    """True iff ``point`` lies strictly inside the ellipse with the link
    endpoints as foci and focal-distance sum ``link.length + width``.
    """
    if width < 0:
        raise ValueError("ellipse width must be non-negative")
    px, py = _as_xy(point)
    d_tx = math.hypot(px - link.tx.x, py - link.tx.y)
    d_rx = math.hypot(px - link.rx.x, py - link.rx.y)
    return d_tx + d_rx < link.length + width


def ellipse_contains_many(points, link: LinkGeometry, width: float) -> np.ndarray:
    """Vectorized :func:`ellipse_contains` over an ``(n, 2)`` array of points."""
    if width < 0:
        raise ValueError("ellipse width must be non-negative")
    pts = np.asarray(points, dtype=float)
    d_tx = np.hypot(pts[:, 0] - link.tx.x, pts[:, 1] - link.tx.y)
    d_rx = np.hypot(pts[:, 0] - link.rx.x, pts[:, 1] - link.rx.y)
    return d_tx + d_rx < link.length + width


def ellipse_area(link_length: float, width: float) -> float:
    """Area of the ellipse with foci ``link_length`` apart and focal-distance
    sum ``link_length + width``.

    Semi-major axis a = (d + w) / 2, semi-minor b = sqrt(a^2 - (d/2)^2).
    """
    if width <= 0:
        raise ValueError("ellipse width must be positive")
    if link_length < 0:
        raise ValueError("link length must be non-negative")
    a = 0.5 * (link_length + width)
    b = math.sqrt(a * a - 0.25 * link_length * link_length)
    return math.pi * a * b


@dataclass(frozen=True)
class VoxelGrid:
    """Regular grid of square voxels covering a rectangle.

    Voxel ``j = iy * nx + ix`` (row-major, y outer) has its center at
    ``origin + ((ix + 0.5) * s, (iy + 0.5) * s)`` for voxel size ``s``.
    """

    origin: Point2D
    voxel_size: float
    nx: int
    ny: int

    def __post_init__(self):
        object.__setattr__(self, "origin", Point2D(*_as_xy(self.origin)))
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one voxel per axis")

    @classmethod
    def from_bounds(cls, xmin, ymin, xmax, ymax, voxel_size: float) -> "VoxelGrid":
        if xmax <= xmin or ymax <= ymin:
            raise ValueError("empty bounds")
        # tolerate bounds that are an exact multiple of the voxel size
        nx = max(1, math.ceil((xmax - xmin) / voxel_size - 1e-9))
        ny = max(1, math.ceil((ymax - ymin) / voxel_size - 1e-9))
        return cls(Point2D(xmin, ymin), float(voxel_size), nx, ny)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny

    def centers(self) -> np.ndarray:
        """All voxel centers as an ``(n_voxels, 2)`` array in index order."""
        xs = self.origin.x + (np.arange(self.nx) + 0.5) * self.voxel_size
        ys = self.origin.y + (np.arange(self.ny) + 0.5) * self.voxel_size
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def center(self, index: int) -> Point2D:
        if not 0 <= index < self.n_voxels:
            raise IndexError(f"voxel index {index} out of range")
        iy, ix = divmod(index, self.nx)
        return Point2D(
            self.origin.x + (ix + 0.5) * self.voxel_size,
            self.origin.y + (iy + 0.5) * self.voxel_size,
        )

    def index_of(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise IndexError(f"voxel ({ix}, {iy}) out of range")
        return iy * self.nx + ix
