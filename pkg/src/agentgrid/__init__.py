"""Search over a modular design space of LLM agents.

An agent is a combination of four standardized modules (planning,
reasoning, tool use, memory). The search loop alternates module evolution
and module recombination, screening offspring with a performance predictor
before spending real evaluations on them.
"""

from .core import (
    AgentConfig,
    ExperiencePool,
    ExperienceRecord,
    ModuleKind,
    ModulePools,
    ModuleSpec,
    PredictedScore,
    StrategyKind,
    SubTaskPlan,
    TaskSpec,
    ToolDef,
    Trajectory,
    combination_count,
    validate_module_spec,
)
from .errors import AgentGridError

__version__ = "0.1.0"
