"""Off-policy learning toolkit for logged contextual-bandit data.

Estimates the logging policy, corrects its bias with (truncated) inverse
propensity weighting, selects per-action relevant features with
variance-aware thresholds, and trains a masked stochastic policy network on
the corrected cross-entropy objective.
"""

from .datasets import (FeatureKind, FeatureSchema, LoggedDataset, LoggedRecord,
                       RewardTable, SupervisedDataset, add_noise_features,
                       convert_to_bandit, load_csv, split)
from .evaluation import EvalResult, accuracy, ci95, improvement_score
from .harness import ExperimentConfig, run_experiment
from .policy import (PolicyArchitecture, PolicyNetwork, TrainConfig, encode,
                     forward, recommend, train)
from .propensity import PropensityModel, WeightCap, fit, importance_weight
from .relevance import (Binning, FeatureMasks, RelevanceReport, bernstein_bound,
                        ips_conditional_mean, ips_mean, make_bins,
                        pearson_avg_abs_corr, relevance_score, sample_variances,
                        select_features, selection_threshold, truncation_bias)

__version__ = "0.1.0"
