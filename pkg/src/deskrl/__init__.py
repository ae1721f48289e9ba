"""deskrl: configuration-driven modular deep reinforcement learning."""

from .config import (Factory, ParamTree, RunConfig, SchemaError,
                     UnknownKeyError, default_factories, load_config)
from .trainer import average_runs, train

__version__ = "0.1.0"

__all__ = [
    "Factory", "ParamTree", "RunConfig", "SchemaError", "UnknownKeyError",
    "default_factories", "load_config", "train", "average_runs",
    "__version__",
]
