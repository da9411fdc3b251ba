"""Radio tomography with rotatable RF sensors.

Simulates dense 2.4 GHz sensor networks whose antennas sit on small servo
turntables, reconstructs attenuation images from RSS changes with
fade-level-dependent weighting, and evaluates antenna-position calibration
procedures against fixed deployments.
"""

from .calibration import (CalibrationConfig, CalibrationState,
                          IncrementalResult, incremental_calibrate,
                          mean_network_rss, network_calibrate,
                          position_histogram)
from .channel import (Environment, MeasurementFrame, NodeState, PersonModel,
                      TdmaNetwork, antenna_position, channel_frequency,
                      channel_gain, simulate_rss, wavelength)
from .geometry import (LinkGeometry, Point2D, VoxelGrid, ellipse_area,
                       ellipse_contains, link_distance)
from .harness import (ExperimentReport, MaxCountBiasResult, SweepResult,
                      multinomial_bias_test, rmse, run_comparison,
                      run_experiment, standard_subset_sweep)
from .rti import (BaselineTable, FadeLevelTable, PathLossFit, RtiLocalizer,
                  build_projection, build_weight_matrix, covariance_matrix,
                  estimate_image, excess_probabilities, fade_levels,
                  fit_path_loss, lambda_widths, localize, rss_delta,
                  train_baseline)
from .scenario import Scenario, perimeter_layout

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CalibrationConfig", "CalibrationState", "IncrementalResult",
    "incremental_calibrate", "mean_network_rss", "network_calibrate",
    "position_histogram",
    "Environment", "MeasurementFrame", "NodeState", "PersonModel",
    "TdmaNetwork", "antenna_position", "channel_frequency", "channel_gain",
    "simulate_rss", "wavelength",
    "LinkGeometry", "Point2D", "VoxelGrid", "ellipse_area",
    "ellipse_contains", "link_distance",
    "ExperimentReport", "MaxCountBiasResult", "SweepResult",
    "multinomial_bias_test", "rmse", "run_comparison", "run_experiment",
    "standard_subset_sweep",
    "BaselineTable", "FadeLevelTable", "PathLossFit", "RtiLocalizer",
    "build_projection", "build_weight_matrix", "covariance_matrix",
    "estimate_image", "excess_probabilities", "fade_levels", "fit_path_loss",
    "lambda_widths", "localize", "rss_delta", "train_baseline",
    "Scenario", "perimeter_layout",
]
