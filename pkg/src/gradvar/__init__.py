"""Score-function policy gradients, their baselines, and exact oracles on small MDPs."""

from .baselines import (
    OptimalBaseline,
    PerParamBaseline,
    TabularBaseline,
    ValueBaseline,
    ZeroBaseline,
    optimal_baseline_exact,
    per_parameter_baseline_exact,
    q_weighted_baseline_exact,
    value_baseline_exact,
)
from .estimator import EstimatorConfig, VarianceReport, assemble, exact_variance, empirical_variance, ppo_clip_indicator
from .mdp import (
    EnumerationLimitError,
    TabularMdp,
    Trajectory,
    Transition,
    enumerate_paths,
    exact_expected_return,
    exact_policy_gradient,
    sample_trajectory,
)
from .policy import SoftmaxPolicy
from .returns import GaeParams, discounted_returns, gae_advantages, monte_carlo_returns

__version__ = "0.1.0"
