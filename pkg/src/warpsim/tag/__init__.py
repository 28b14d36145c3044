from .config import CONTINUOUS, DISCRETE, FULL, PARTIAL, InvalidConfigError, TagConfig
from .env import TagEnv, build_plan
from .reference import TagReference

__all__ = [
    "CONTINUOUS", "DISCRETE", "FULL", "PARTIAL", "InvalidConfigError", "TagConfig",
    "TagEnv", "TagReference", "build_plan",
]
