"""Budget-conditioned architecture generation.

A Pareto-dominance evaluator is trained by pairwise ranking on sampled
(architecture, latency, accuracy) triplets; an LSTM policy conditioned on a
latency budget is then trained by policy gradient against that evaluator.
"""

from .artifacts import __version__, derive_seed
from .budget import BudgetDistribution, interpolation_weights, supported_range
from .dominance import FrontierPoint, best_under_budget, dominance, dominance_key, hypervolume, pareto_front
from .errors import ConfigError, EnumerationLimitError, NumericalError, PnagError, ValidationError
from .evaluator import EvaluatorModel, ranking_loss, train_evaluator
from .generator import GeneratorModel, generate, reinforce_step, sample, train_generator
from .oracle import DeviceProfile, EvaluatedArch, SyntheticOracle, collect_dataset, load_tabular
from .search_space import (DEFAULT_SPACE, REDUCED_SPACE, Architecture, SearchSpaceConfig, count, decode, encode,
                           enumerate_space, sample_uniform)

__all__ = [
    "__version__", "derive_seed",
    "BudgetDistribution", "interpolation_weights", "supported_range",
    "FrontierPoint", "best_under_budget", "dominance", "dominance_key", "hypervolume", "pareto_front",
    "ConfigError", "EnumerationLimitError", "NumericalError", "PnagError", "ValidationError",
    "EvaluatorModel", "ranking_loss", "train_evaluator",
    "GeneratorModel", "generate", "reinforce_step", "sample", "train_generator",
    "DeviceProfile", "EvaluatedArch", "SyntheticOracle", "collect_dataset", "load_tabular",
    "DEFAULT_SPACE", "REDUCED_SPACE", "Architecture", "SearchSpaceConfig", "count", "decode", "encode",
    "enumerate_space", "sample_uniform",
]
