"""Imputation-free incremental attention learning for tabular data with missing values."""
from .baselines import AM_FTT, IFIAL, MEDIAN_FTT, Method, impute_median, run_method
from .data import Dataset, FeatureSchema, FeatureStats, compute_stats, from_arrays, load_csv, standardize, write_csv
from .estimators import AMFTTClassifier, IFIALClassifier, MedianFTTClassifier
from .model import ModelConfig, ModelState
from .partition import PartitionPlan, build_plan, partition_count, partition_view
from .simulate import MissingSpec, inject
from .train import TrainConfig, predict, train_ifial

__version__ = "0.1.0"

__all__ = [
    "AM_FTT", "IFIAL", "MEDIAN_FTT", "Method", "impute_median", "run_method",
    "Dataset", "FeatureSchema", "FeatureStats", "compute_stats", "from_arrays", "load_csv", "standardize",
    "write_csv", "AMFTTClassifier", "IFIALClassifier", "MedianFTTClassifier", "ModelConfig", "ModelState",
    "PartitionPlan", "build_plan", "partition_count", "partition_view", "MissingSpec", "inject",
    "TrainConfig", "predict", "train_ifial",
]
