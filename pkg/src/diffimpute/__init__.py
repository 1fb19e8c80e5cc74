"""Score-based diffusion imputation for multivariate time series.

The conditional model generates missing entries given the observed ones by
running a learned reverse diffusion chain; ensembles of chains are scored
with CRPS.
"""

from .data import Dataset, Normalization, SynthSpec, generate_synthetic, load_dataset, save_dataset
from .denoiser import DenoiserConfig, DenoiserInput, DenoiserModel, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, DiffImputeError, NumericError
from .masking import MaskSplit, TimeSeriesSample
from .metrics import ScoreReport, crps_discretized, crps_exact_empirical, crps_normalized_average, crps_sum
from .sampling import ImputationEnsemble, conditional_impute, generate_ensemble, impute_samples, median_impute
from .schedule import NoiseSchedule, build_quadratic_schedule
from .training import TrainConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "DenoiserConfig",
    "DenoiserInput",
    "DenoiserModel",
    "DiffImputeError",
    "ImputationEnsemble",
    "MaskSplit",
    "NoiseSchedule",
    "Normalization",
    "NumericError",
    "ScoreReport",
    "SynthSpec",
    "TimeSeriesSample",
    "TrainConfig",
    "build_quadratic_schedule",
    "conditional_impute",
    "crps_discretized",
    "crps_exact_empirical",
    "crps_normalized_average",
    "crps_sum",
    "generate_ensemble",
    "generate_synthetic",
    "impute_samples",
    "load_checkpoint",
    "load_dataset",
    "median_impute",
    "run_training",
    "save_checkpoint",
    "save_dataset",
]
