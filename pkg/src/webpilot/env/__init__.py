from .base import EnvConfig, EnvError, Environment, NavigationTimeout, Observation
from .sim import PageSpec, SimEnv, World, WorldValidationError, load_world, parse_world

__all__ = [
    "EnvConfig",
    "EnvError",
    "Environment",
    "NavigationTimeout",
    "Observation",
    "PageSpec",
    "SimEnv",
    "World",
    "WorldValidationError",
    "load_world",
    "parse_world",
]
