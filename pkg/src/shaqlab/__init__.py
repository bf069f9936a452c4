"""Desk-scale Shapley value factorisation for cooperative multi-agent Q-learning."""

from .bellman import FactoredQ, WeightSpec, apply_operator, check_weight_spec, fixed_point_iterate
from .game import (
    MarkovConvexGame,
    all_coalition_values,
    check_convexity,
    coalition_value_iteration,
    generate_convex_game,
    joint_value_iteration,
)
from .learner import AlphaModel, LearnerConfig, LearnerState, train
from .shapley import (
    ShapleyTable,
    check_efficiency,
    check_markov_core,
    markov_shapley_table_exact,
    markov_shapley_table_sampled,
)

__version__ = "0.1.0"
