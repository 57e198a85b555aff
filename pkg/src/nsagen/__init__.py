"""Genetic-algorithm detector generation over equal-width-binned NSL-KDD features."""
from .dataset import (DEFAULT_SCHEMA, DatasetError, FeatureSchema, Label, LabeledSample,
                      load_records, map_service_category, split_self)
from .detection import Verdict, classify, classify_all, matches
from .discretizer import BinningModel, EncodedSample, assign_bin, compute_bin_width, encode, fit
from .evaluation import ConfusionMatrix, EvaluationReport, rates, score, sweep
from .ga import Detector, DetectorSet, GAConfig, distance, evolve, extract_best, fitness

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_SCHEMA",
    "DatasetError",
    "FeatureSchema",
    "Label",
    "LabeledSample",
    "load_records",
    "map_service_category",
    "split_self",
    "Verdict",
    "classify",
    "classify_all",
    "matches",
    "BinningModel",
    "EncodedSample",
    "assign_bin",
    "compute_bin_width",
    "encode",
    "fit",
    "ConfusionMatrix",
    "EvaluationReport",
    "rates",
    "score",
    "sweep",
    "Detector",
    "DetectorSet",
    "GAConfig",
    "distance",
    "evolve",
    "extract_best",
    "fitness",
]
