"""Long-horizon forecasting with a global temporal retriever.

A learnable per-channel embedding of one full cycle is indexed by absolute
position, fused with the lookback window and fed to a residual MLP.
"""

__version__ = "0.1.0"

from .analysis import acf, estimate_cycle_length, mae, mse, pearson, verify_theorem1
from .config import RunConfig, load_config, preset
from .data import SplitSpec, TimeSeriesDataset, ingest_csv
from .estimator import CycleLengthEstimator, GTRForecaster
from .model import ForecastModel
from .retriever import GtrModule, compute_cycle_index
from .training import train

__all__ = [
    "CycleLengthEstimator",
    "ForecastModel",
    "GTRForecaster",
    "GtrModule",
    "RunConfig",
    "SplitSpec",
    "TimeSeriesDataset",
    "acf",
    "compute_cycle_index",
    "estimate_cycle_length",
    "ingest_csv",
    "load_config",
    "mae",
    "mse",
    "pearson",
    "preset",
    "train",
    "verify_theorem1",
]
