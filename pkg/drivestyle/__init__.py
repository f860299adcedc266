"""DriveStyle - Nonparametric segmentation and semantic analysis of car-following behavior."""

from drivestyle.dataio import DriverDataset, EventSeries, load_events, normalize
from drivestyle.evaluation import compare_models, kfold_split, predictive_duration_loglik
from drivestyle.inference import FitResult, fit
from drivestyle.markov import Segment, Segmentation, map_segmentation
from drivestyle.models import ComparisonReport, InferenceConfig, ModelKind, ThresholdTable
from drivestyle.semantics import PrimitivePattern, default_thresholds, label_segment, semantic_sentence
from drivestyle.styles import frequency_distribution, kl_divergence, preferred_pattern

__all__ = [
    "ComparisonReport",
    "DriverDataset",
    "EventSeries",
    "FitResult",
    "InferenceConfig",
    "ModelKind",
    "PrimitivePattern",
    "Segment",
    "Segmentation",
    "ThresholdTable",
    "compare_models",
    "default_thresholds",
    "fit",
    "frequency_distribution",
    "kfold_split",
    "kl_divergence",
    "label_segment",
    "load_events",
    "map_segmentation",
    "normalize",
    "predictive_duration_loglik",
    "preferred_pattern",
    "semantic_sentence",
]
__version__ = "0.1.0"
