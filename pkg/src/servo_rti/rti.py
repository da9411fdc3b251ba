"""Attenuation-image reconstruction from RSS change measurements.

The chain: empty-room baselines per directed link and channel, a shared-slope
log-distance path-loss fit, per link-channel fade levels (measured baseline
minus fitted prediction), fade-dependent ellipse widths, bounded attenuation
probabilities from RSS deltas, a regularized least-squares image estimate,
and argmax localization on the voxel grid.

Links sitting above the fitted curve (anti-fade) behave predictably when
crossed, so they get narrow ellipses; links far below the curve (deep fade)
get wider, less trusted ellipses. Positive and negative RSS excursions feed
separate measurement rows so that gains on deeply faded links still
contribute evidence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .channel import MeasurementFrame, directed_link_pairs
from .geometry import Point2D, VoxelGrid, ellipse_area, link_distance

__all__ = [
    "SingularFitError",
    "SingularSystemError",
    "BaselineTable",
    "PathLossFit",
    "FadeLevelTable",
    "WidthConfig",
    "EllipseWidths",
    "ProbabilityConfig",
    "RegularizationParams",
    "train_baseline",
    "fit_path_loss",
    "fade_levels",
    "lambda_widths",
    "rss_delta",
    "excess_probabilities",
    "measurement_vector",
    "build_weight_matrix",
    "covariance_matrix",
    "build_projection",
    "estimate_image",
    "localize",
    "RtiLocalizer",
]

log = logging.getLogger(__name__)


class SingularFitError(ValueError):
    """Path-loss regression is rank deficient (e.g. all links equally long)."""


class SingularSystemError(ValueError):
    """The regularized normal equations could not be solved."""


@dataclass(frozen=True, eq=False)
class BaselineTable:
    """Per link-channel mean RSS over an empty-room training window.

    ``mean`` is ``(n_links, n_channels)`` with NaN where no sample arrived;
    ``counts`` holds the number of samples behind each mean.
    """

    node_ids: tuple[int, ...]
    channels: tuple[int, ...]
    mean: np.ndarray
    counts: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.counts > 0

    def links(self) -> list[tuple[int, int]]:
        return directed_link_pairs(self.node_ids)

    def value(self, tx: int, rx: int, channel: int) -> float:
        li = self.links().index((int(tx), int(rx)))
        ci = self.channels.index(int(channel))
        return float(self.mean[li, ci])


def train_baseline(frames: Sequence[MeasurementFrame]) -> BaselineTable:
    """Average frames from a static, empty-room window into a baseline table.

    Frames must agree on node set, channel set, and servo positions.
    """
    if not frames:
        raise ValueError("no training frames")
    first = frames[0]
    for f in frames[1:]:
        if f.node_ids != first.node_ids or f.channels != first.channels:
            raise ValueError("training frames mix different networks")
        if f.positions != first.positions:
            raise ValueError("training frames mix different servo positions")
    stack = np.stack([f.rss for f in frames])
    finite = np.isfinite(stack)
    counts = finite.sum(axis=0)
    total = np.where(finite, stack, 0.0).sum(axis=0)
    mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return BaselineTable(node_ids=first.node_ids, channels=first.channels,
                         mean=mean, counts=counts)


@dataclass(frozen=True, eq=False)
class PathLossFit:
    """Log-distance fit with one slope shared across channels and one
    intercept per channel: P(d, c) = intercept_c - 10 * eta * log10(d)."""

    eta: float
    intercepts: dict[int, float]
    residuals: np.ndarray

    def predict(self, distance: float, channel: int) -> float:
        if distance <= 0:
            raise ValueError("distance must be positive")
        return self.intercepts[int(channel)] - 10.0 * self.eta * math.log10(distance)

    def predict_table(self, distances: np.ndarray,
                      channels: Sequence[int]) -> np.ndarray:
        d = np.asarray(distances, dtype=float)
        inter = np.array([self.intercepts[int(c)] for c in channels])
        return inter[None, :] - 10.0 * self.eta * np.log10(d)[:, None]


def fit_path_loss(baseline: BaselineTable, distances: np.ndarray) -> PathLossFit:
    """Least-squares fit of the baseline table against link length.

    ``distances`` holds one length per directed link, in table row order.
    Channels with no valid entries get a NaN intercept and NaN predictions.
    """
    d = np.asarray(distances, dtype=float)
    if d.shape != (baseline.mean.shape[0],):
        raise ValueError(f"distances shape {d.shape} does not match "
                         f"{baseline.mean.shape[0]} links")
    if np.any(d <= 0):
        raise ValueError("link distances must be positive")
    valid = baseline.valid & np.isfinite(baseline.mean)
    if not valid.any():
        raise SingularFitError("no valid baseline entries to fit")
    n_ch = len(baseline.channels)
    rows_d = np.repeat(d[:, None], n_ch, axis=1)[valid]
    rows_c = np.repeat(np.arange(n_ch)[None, :], d.size, axis=0)[valid]
    rows_r = baseline.mean[valid]
    if np.unique(rows_d).size < 2:
        raise SingularFitError("all valid links share one length; "
                               "slope is unidentifiable")
    used_ch = np.unique(rows_c)
    design = np.zeros((rows_r.size, 1 + used_ch.size))
    design[:, 0] = -10.0 * np.log10(rows_d)
    for k, ci in enumerate(used_ch):
        design[rows_c == ci, 1 + k] = 1.0
    coef, _, rank, _ = np.linalg.lstsq(design, rows_r, rcond=None)
    if rank < design.shape[1]:
        raise SingularFitError("rank-deficient path-loss design matrix")
    eta = float(coef[0])
    intercepts = {int(baseline.channels[ci]): float("nan") for ci in range(n_ch)}
    for k, ci in enumerate(used_ch):
        intercepts[int(baseline.channels[ci])] = float(coef[1 + k])
    inter = np.array([intercepts[int(c)] for c in baseline.channels])
    predicted = inter[None, :] - 10.0 * eta * np.log10(d)[:, None]
    residuals = np.where(valid, baseline.mean - predicted, np.nan)
    return PathLossFit(eta=eta, intercepts=intercepts, residuals=residuals)


@dataclass(frozen=True, eq=False)
class FadeLevelTable:
    """Fade level per link-channel: baseline mean minus fitted path loss.

    Non-negative entries are anti-fade (constructive multipath), negative
    entries are deep fade. NaN marks pairs with no baseline.
    """

    node_ids: tuple[int, ...]
    channels: tuple[int, ...]
    level: np.ndarray

    @property
    def anti_fade(self) -> np.ndarray:
        return self.level >= 0

    @property
    def deep_fade(self) -> np.ndarray:
        return self.level < 0


def fade_levels(baseline: BaselineTable, fit: PathLossFit,
                distances: np.ndarray) -> FadeLevelTable:
    predicted = fit.predict_table(np.asarray(distances, dtype=float),
                                  baseline.channels)
    level = baseline.mean - predicted
    return FadeLevelTable(node_ids=baseline.node_ids,
                          channels=baseline.channels, level=level)


@dataclass(frozen=True)
class WidthConfig:
    """Fade level to ellipse width map.

    Anti-fade links keep the narrow ``lambda_min``; the width grows by
    ``slope`` meters per dB below the fitted curve, saturating at
    ``lambda_max``.
    """

    lambda_min: float = 0.05
    slope: float = 0.03
    lambda_max: float = 1.0

    def __post_init__(self):
        if self.lambda_min <= 0:
            raise ValueError("lambda_min must be positive")
        if self.slope < 0:
            raise ValueError("slope must be non-negative")
        if self.lambda_max < self.lambda_min:
            raise ValueError("lambda_max must be at least lambda_min")


@dataclass(frozen=True, eq=False)
class EllipseWidths:
    """Per link-channel widths for the positive and negative measurement rows."""

    node_ids: tuple[int, ...]
    channels: tuple[int, ...]
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray


def lambda_widths(fades: FadeLevelTable,
                  config: WidthConfig = WidthConfig()) -> EllipseWidths:
    depth = np.maximum(-fades.level, 0.0)  # NaN propagates
    width = np.minimum(config.lambda_max, config.lambda_min + config.slope * depth)
    return EllipseWidths(node_ids=fades.node_ids, channels=fades.channels,
                         lambda_plus=width.copy(), lambda_minus=width.copy())


@dataclass(frozen=True)
class ProbabilityConfig:
    """RSS delta to attenuation probability map.

    Deltas inside the ``dead_band`` (dB) count as noise; beyond it the
    probability rises linearly and saturates at ``saturation`` dB.
    """

    dead_band: float = 1.0
    saturation: float = 10.0

    def __post_init__(self):
        if self.dead_band < 0:
            raise ValueError("dead_band must be non-negative")
        if self.saturation <= self.dead_band:
            raise ValueError("saturation must exceed dead_band")


def rss_delta(frame: MeasurementFrame, baseline: BaselineTable) -> np.ndarray:
    """Per link-channel RSS change of a frame against the baseline; NaN where
    either side is missing."""
    if frame.node_ids != baseline.node_ids or frame.channels != baseline.channels:
        raise ValueError("frame and baseline describe different networks")
    return frame.rss - baseline.mean


def excess_probabilities(delta: np.ndarray,
                         config: ProbabilityConfig = ProbabilityConfig()
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Split RSS deltas into rise and drop probabilities in [0, 1].

    At most one of the two is nonzero per entry; missing deltas map to zero
    on both sides.
    """
    d = np.asarray(delta, dtype=float)
    span = config.saturation - config.dead_band
    with np.errstate(invalid="ignore"):
        excess = np.clip((np.abs(d) - config.dead_band) / span, 0.0, 1.0)
        p_plus = np.where(d > config.dead_band, excess, 0.0)
        p_minus = np.where(d < -config.dead_band, excess, 0.0)
    return np.nan_to_num(p_plus), np.nan_to_num(p_minus)


def measurement_vector(p_plus: np.ndarray, p_minus: np.ndarray) -> np.ndarray:
    """Interleave probability tables into the measurement vector.

    Row ``2 * (l * n_channels + c)`` is the rise row of link ``l`` on channel
    ``c``; the drop row follows it.
    """
    if p_plus.shape != p_minus.shape:
        raise ValueError("probability tables disagree in shape")
    y = np.empty(2 * p_plus.size)
    y[0::2] = np.asarray(p_plus, dtype=float).ravel()
    y[1::2] = np.asarray(p_minus, dtype=float).ravel()
    return y


def build_weight_matrix(antennas: Mapping[int, Sequence[float]],
                        grid: VoxelGrid, widths: EllipseWidths) -> np.ndarray:
    """Voxel weights for every measurement row.

    A voxel strictly inside a row's link ellipse gets weight ``1 / area`` of
    that ellipse; rows whose width is NaN (no baseline) stay zero. Row order
    matches :func:`measurement_vector`.
    """
    ids = widths.node_ids
    pairs = directed_link_pairs(ids)
    n_ch = len(widths.channels)
    xy = np.array([[float(antennas[i][0]), float(antennas[i][1])] for i in ids])
    centers = grid.centers()
    node_to_voxel = np.hypot(xy[:, None, 0] - centers[None, :, 0],
                             xy[:, None, 1] - centers[None, :, 1])
    index = {i: k for k, i in enumerate(ids)}
    weights = np.zeros((2 * len(pairs) * n_ch, grid.n_voxels))
    empty_rows = 0
    for li, (t, r) in enumerate(pairs):
        d = link_distance(xy[index[t]], xy[index[r]])
        focal_sum = node_to_voxel[index[t]] + node_to_voxel[index[r]]
        for ci in range(n_ch):
            for si, width in ((0, widths.lambda_plus[li, ci]),
                              (1, widths.lambda_minus[li, ci])):
                if not np.isfinite(width):
                    continue
                inside = focal_sum < d + width
                row = 2 * (li * n_ch + ci) + si
                if inside.any():
                    weights[row, inside] = 1.0 / ellipse_area(d, width)
                else:
                    empty_rows += 1
    if empty_rows:
        log.debug("%d measurement rows contain no voxel centers", empty_rows)
    return weights


@dataclass(frozen=True)
class RegularizationParams:
    """Image prior: exponentially distance-correlated voxel covariance."""

    sigma_noise2: float = 1.0
    sigma_voxel2: float = 0.5
    corr_distance: float = 0.5

    def __post_init__(self):
        for name in ("sigma_noise2", "sigma_voxel2", "corr_distance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def covariance_matrix(grid: VoxelGrid,
                      params: RegularizationParams = RegularizationParams()
                      ) -> np.ndarray:
    centers = grid.centers()
    d = np.hypot(centers[:, None, 0] - centers[None, :, 0],
                 centers[:, None, 1] - centers[None, :, 1])
    return params.sigma_voxel2 * np.exp(-d / params.corr_distance)


def build_projection(weights: np.ndarray, covariance: np.ndarray,
                     sigma_noise2: float) -> np.ndarray:
    """Linear map from measurement vector to voxel image.

    Solves (W^T W + sigma_noise2 * C^-1) X = W^T rather than forming an
    explicit inverse of the regularized normal matrix.
    """
    if sigma_noise2 <= 0:
        raise ValueError("sigma_noise2 must be positive")
    w = np.asarray(weights, dtype=float)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (w.shape[1], w.shape[1]):
        raise ValueError(f"covariance shape {cov.shape} does not match "
                         f"{w.shape[1]} voxels")
    try:
        cov_inv = cho_solve(cho_factor(cov), np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"voxel covariance not positive definite "
            f"(cond={np.linalg.cond(cov):.3e})") from exc
    normal = w.T @ w + sigma_noise2 * cov_inv
    normal = 0.5 * (normal + normal.T)
    try:
        return cho_solve(cho_factor(normal), w.T)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            f"regularized normal matrix not positive definite "
            f"(cond={np.linalg.cond(normal):.3e})") from exc


def estimate_image(projection: np.ndarray, measurement: np.ndarray) -> np.ndarray:
    y = np.asarray(measurement, dtype=float).ravel()
    if y.size != projection.shape[1]:
        raise ValueError(f"measurement length {y.size} does not match "
                         f"projection columns {projection.shape[1]}")
    return projection @ y


def localize(image: np.ndarray, grid: VoxelGrid) -> tuple[Point2D, bool]:
    """Center of the brightest voxel, plus a flag for a flat (uninformative)
    image. Ties resolve to the lowest voxel index."""
    x = np.asarray(image, dtype=float).ravel()
    if x.size != grid.n_voxels:
        raise ValueError(f"image length {x.size} does not match grid "
                         f"{grid.n_voxels}")
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("image must be finite and non-empty")
    degenerate = bool(np.all(x == x[0]))
    return grid.center(int(np.argmax(x))), degenerate


class RtiLocalizer(BaseEstimator):
    """Scikit-learn style wrapper for the full reconstruction chain.

    ``fit`` consumes empty-room frames plus antenna coordinates and freezes
    the baseline, path-loss fit, fade levels, ellipse widths, and projection
    matrix. ``transform`` maps frames to voxel images; ``predict`` maps them
    to positions.
    """

    def __init__(self, voxel_size: float = 0.25,
                 bounds: Optional[tuple[float, float, float, float]] = None,
                 margin: float = 0.5,
                 sigma_noise2: float = 1.0, sigma_voxel2: float = 0.5,
                 corr_distance: float = 0.5,
                 lambda_min: float = 0.05, lambda_slope: float = 0.03,
                 lambda_max: float = 1.0,
                 dead_band: float = 1.0, saturation: float = 10.0):
        self.voxel_size = voxel_size
        self.bounds = bounds
        self.margin = margin
        self.sigma_noise2 = sigma_noise2
        self.sigma_voxel2 = sigma_voxel2
        self.corr_distance = corr_distance
        self.lambda_min = lambda_min
        self.lambda_slope = lambda_slope
        self.lambda_max = lambda_max
        self.dead_band = dead_band
        self.saturation = saturation

    def fit(self, frames: Sequence[MeasurementFrame],
            antennas: Mapping[int, Sequence[float]]) -> "RtiLocalizer":
        width_cfg = WidthConfig(lambda_min=self.lambda_min,
                                slope=self.lambda_slope,
                                lambda_max=self.lambda_max)
        prob_cfg = ProbabilityConfig(dead_band=self.dead_band,
                                     saturation=self.saturation)
        reg = RegularizationParams(sigma_noise2=self.sigma_noise2,
                                   sigma_voxel2=self.sigma_voxel2,
                                   corr_distance=self.corr_distance)
        baseline = train_baseline(frames)
        missing = [i for i in baseline.node_ids if i not in antennas]
        if missing:
            raise ValueError(f"no antenna coordinates for nodes {missing}")
        points = {i: Point2D(float(antennas[i][0]), float(antennas[i][1]))
                  for i in baseline.node_ids}
        distances = np.array([link_distance(points[t], points[r])
                              for t, r in baseline.links()])
        fit = fit_path_loss(baseline, distances)
        fades = fade_levels(baseline, fit, distances)
        widths = lambda_widths(fades, width_cfg)
        if self.bounds is not None:
            xmin, ymin, xmax, ymax = self.bounds
        else:
            xy = np.array(list(points.values()))
            xmin, ymin = xy.min(axis=0) - self.margin
            xmax, ymax = xy.max(axis=0) + self.margin
        grid = VoxelGrid.from_bounds(xmin, ymin, xmax, ymax, self.voxel_size)
        weights = build_weight_matrix(points, grid, widths)
        projection = build_projection(weights, covariance_matrix(grid, reg),
                                      reg.sigma_noise2)
        self.baseline_ = baseline
        self.antennas_ = points
        self.distances_ = distances
        self.path_loss_ = fit
        self.fades_ = fades
        self.widths_ = widths
        self.prob_config_ = prob_cfg
        self.grid_ = grid
        self.weights_ = weights
        self.projection_ = projection
        return self

    def measurement_for(self, frame: MeasurementFrame) -> np.ndarray:
        check_is_fitted(self, "projection_")
        p_plus, p_minus = excess_probabilities(rss_delta(frame, self.baseline_),
                                               self.prob_config_)
        return measurement_vector(p_plus, p_minus)

    def transform(self, frames: Sequence[MeasurementFrame]) -> np.ndarray:
        """Voxel images, one row per frame."""
        check_is_fitted(self, "projection_")
        if not frames:
            return np.zeros((0, self.grid_.n_voxels))
        ys = np.stack([self.measurement_for(f) for f in frames])
        return ys @ self.projection_.T

    def predict(self, frames: Sequence[MeasurementFrame]) -> np.ndarray:
        """Estimated positions, one ``(x, y)`` row per frame."""
        images = self.transform(frames)
        out = np.empty((images.shape[0], 2))
        for k, image in enumerate(images):
            point, _ = localize(image, self.grid_)
            out[k] = point
        return out
