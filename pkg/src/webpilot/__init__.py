"""Screenshot-only web agent: policy, localizer and validator models driving a browser."""

from .core import Action, AgentMemory, EpisodeTrace, Step, Task, Verdict
from .orchestrator import EpisodeResult, Modules, RunConfig, run_episode

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentMemory",
    "EpisodeResult",
    "EpisodeTrace",
    "Modules",
    "RunConfig",
    "Step",
    "Task",
    "Verdict",
    "run_episode",
]
