"""Self-organizing interval type-2 fuzzy neural network for multi-step forecasting."""

from .backend import NAME as BACKEND
from .evaluation import ExperimentConfig, evaluate, run_experiment
from .modelio import ForecastModel, load_model, save_model
from .network import NetworkParams, forward, parameter_count
from .structure import LearnConfig, learn

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ExperimentConfig", "ForecastModel", "LearnConfig", "NetworkParams", "evaluate", "forward",
    "learn", "load_model", "parameter_count", "run_experiment", "save_model", "__version__",
]
