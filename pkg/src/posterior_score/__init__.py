"""Scoring predicted per-cell feature posteriors against single true samples."""

from .dataset import CellRecord, EvaluationTable, FeatureId, parse_table, parse_tables
from .density import DensityConfig, FittedDensity, GaussianMixture, KernelDensity
from .scoring import FeatureMetricReport, info_gain, score_table

__version__ = "0.1.0"
