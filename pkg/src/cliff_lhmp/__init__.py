"""Long-term human motion prediction biased by circular-linear flow field maps."""
from .errors import (
    CliffError,
    EmptyMapError,
    EmptyReportError,
    FormatVersionError,
    InsufficientDataError,
    InvalidArgumentError,
    MalformedTrajectoryError,
    NumericalDegenerateError,
    ParseError,
)
from .evaluation import EvalConfig, EvalReport, HorizonRecord, ade, evaluate_method, fde, parameter_sweep, success_ratio
from .mapping import CliffMap, EmConfig, FitResult, GridSpec, KlHeatmap, build_map, compare_maps_kl, fit_cell
from .motion import SWGMM, SemiWrappedComponent, State, Velocity, kernel, swgmm_pdf, swgmm_sample, swn_pdf, wrap_angle
from .predictor import (
    ObservationHistory,
    PredictedTrajectory,
    PredictionConfig,
    cvm_predict,
    observed_velocity,
    predict_ensemble,
    predict_one,
)
from .trajectory import Trajectory

__version__ = "0.1.0"
