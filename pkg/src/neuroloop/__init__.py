"""Alpha band power and filter-bank CSP control signals, a simulated
closed-loop neurofeedback protocol on synthetic EEG/EMG, and the
statistics used to score it."""

from .analysis import (
    BlockDifference, PerformanceRow, Report, StatResult, TimeCourse, block_differences,
    column_mean, parse_report, performance_row, render_report, spearman, stars, time_course,
    wilcoxon_signed_rank,
)
from .decoder import (
    DecoderModel, DecoderStream, FeatureDef, LabeledEpoch, ModelKind, SourceSet, SpatialFilter,
    TrainingSet, decode_stream, epoch_phases, extract_feature, fit_linear, make_filter_bank,
    mutual_information, regularized_covariance, select_features, train_combined, train_csp,
    train_model,
)
from .dsp import (
    AlphaBand, BandPowerStream, BandSpec, CalibrationMap, Cs1Stream, PowerSeries,
    band_power_series, compute_cs1, design_band_filter, estimate_alpha_band, fit_calibration,
    power_spectrum,
)
from .protocol import (
    ExperimentPlan, SessionLog, SessionPlan, build_experiment_plan, build_session_plan,
    offline_replay, run_experiment_part, run_session, session_duration,
)
from .signals import (
    ChannelInfo, Modality, Recording, RecordingFormatError, SynthScenario, generate_synthetic,
    load_csv, save_csv,
)

__version__ = "0.1.0"

__all__ = [
    "AlphaBand",
    "BandPowerStream",
    "BandSpec",
    "BlockDifference",
    "CalibrationMap",
    "ChannelInfo",
    "Cs1Stream",
    "DecoderModel",
    "DecoderStream",
    "ExperimentPlan",
    "FeatureDef",
    "LabeledEpoch",
    "Modality",
    "ModelKind",
    "PerformanceRow",
    "PowerSeries",
    "Recording",
    "RecordingFormatError",
    "Report",
    "SessionLog",
    "SessionPlan",
    "SourceSet",
    "SpatialFilter",
    "StatResult",
    "SynthScenario",
    "TimeCourse",
    "TrainingSet",
    "band_power_series",
    "block_differences",
    "build_experiment_plan",
    "build_session_plan",
    "column_mean",
    "compute_cs1",
    "decode_stream",
    "design_band_filter",
    "epoch_phases",
    "estimate_alpha_band",
    "extract_feature",
    "fit_calibration",
    "fit_linear",
    "generate_synthetic",
    "load_csv",
    "make_filter_bank",
    "mutual_information",
    "offline_replay",
    "parse_report",
    "performance_row",
    "power_spectrum",
    "regularized_covariance",
    "render_report",
    "run_experiment_part",
    "run_session",
    "save_csv",
    "select_features",
    "session_duration",
    "spearman",
    "stars",
    "time_course",
    "train_combined",
    "train_csp",
    "train_model",
    "wilcoxon_signed_rank",
]
