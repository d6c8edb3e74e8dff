"""Predict whether a self-reported meal was eaten alone or with others."""
from .episodes import ExtractionConfig, FeatureMatrix, build_matrix
from .errors import DegenerateDataError, InvalidInputError, MealsenseError
from .evaluation import group_kfold, run_experiment
from .forest import ForestModel, ForestParams, predict, train_forest
from .ingest import CohortStore, load_cohort, parse_stream
from .stats import cohens_d, rank_features, welch_t
from .synth import CohortSpec, generate_cohort, shuffle_labels

__version__ = "0.1.0"
