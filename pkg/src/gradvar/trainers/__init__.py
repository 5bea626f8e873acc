from .config import FixedPolicyConfig, PpoConfig, SgdConfig, apply_overrides, read_config_sections
from .fixed_policy import ESTIMATORS, fixed_policy_variance_experiment, mean_variance_by_policy
from .ppo import ppo_train
from .sgd import BASELINE_NAMES, IterationRecord, TrainingTrace, basin_labels, exact_gradient_descent, sgd_train

__all__ = [
    "BASELINE_NAMES", "ESTIMATORS", "FixedPolicyConfig", "IterationRecord", "PpoConfig", "SgdConfig",
    "TrainingTrace", "apply_overrides", "basin_labels", "exact_gradient_descent",
    "fixed_policy_variance_experiment", "mean_variance_by_policy", "ppo_train", "read_config_sections", "sgd_train",
]
