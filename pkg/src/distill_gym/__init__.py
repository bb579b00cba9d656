"""Tree-structured reinforcement learning for distillation-train synthesis."""

__version__ = "0.1.0"

from .agent import AgentConfig, SACAgent, Trainer, evaluate_episode, train
from .column import ColumnResult, ColumnSpec, solve_column
from .config import ConfigError, load_config, load_problem
from .env import DistillationEnv, ProblemSpec
from .flowsheet import Flowsheet, export_flowsheet, parse_flowsheet
from .thermo import Component, Stream, load_component_library

__all__ = [
    "AgentConfig",
    "ColumnResult",
    "ColumnSpec",
    "Component",
    "ConfigError",
    "DistillationEnv",
    "Flowsheet",
    "ProblemSpec",
    "SACAgent",
    "Stream",
    "Trainer",
    "evaluate_episode",
    "export_flowsheet",
    "load_component_library",
    "load_config",
    "load_problem",
    "parse_flowsheet",
    "solve_column",
    "train",
]
