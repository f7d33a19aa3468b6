"""Evaluation environments and the task registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..core import TaskSpec
from ..errors import AgentGridError
from ..llm import MockBackend
from .base import Environment, StepResult
from .landscape import OracleLandscape, landscape_optimum, synthetic_pools
from .lockbox import LockboxEnv
from .scripts import lockbox_solver, toolchain_solver
from .toolchain import ToolChainEnv


@dataclass(frozen=True)
class TaskEntry:
    """Registry entry. Exactly one of ``env_factory`` / ``landscape`` is set."""

    id: str
    env_factory: Callable[[int], Environment] | None = None
    landscape: Callable[[], OracleLandscape] | None = None
    solver: Callable[[], MockBackend] | None = None

    @property
    def is_landscape(self) -> bool:
        return self.landscape is not None

    def task_spec(self) -> TaskSpec:
        if self.env_factory is not None:
            return self.env_factory(0).task
        return TaskSpec(
            id=self.id,
            description=(
                "Synthetic benchmark: each agent configuration has a hidden score in [0, 1]. "
                "Find the configuration with the highest score."
            ),
        )


TASKS: dict[str, TaskEntry] = {
    "lockbox-3": TaskEntry(
        "lockbox-3",
        env_factory=lambda seed=0: LockboxEnv(("red", "green", "blue"), seed=seed),
        solver=lockbox_solver,
    ),
    "toolchain": TaskEntry(
        "toolchain",
        env_factory=lambda seed=0: ToolChainEnv(seed=seed),
        solver=toolchain_solver,
    ),
    "landscape-small": TaskEntry(
        "landscape-small",
        landscape=lambda: OracleLandscape.generate((3, 3, 2, 3), seed=7, noise_sigma=0.02),
    ),
    # Interaction-heavy: additive surrogates struggle, evolved modules can beat every base module.
    "landscape-1050": TaskEntry(
        "landscape-1050",
        landscape=lambda: OracleLandscape.generate(
            (5, 7, 5, 6), seed=42, main_scale=0.03, pair_density=0.5, pair_scale=0.08,
            noise_sigma=0.02, evolve_sigma=0.08,
        ),
    ),
    # Mostly additive with sparse interactions.
    "landscape-additive": TaskEntry(
        "landscape-additive",
        landscape=lambda: OracleLandscape.generate(
            (5, 7, 5, 6), seed=42, main_scale=0.1, pair_density=0.2, pair_scale=0.05, noise_sigma=0.02,
        ),
    ),
    # Pairwise effects dominate and evolution steps are small, so neither operator suffices alone.
    "landscape-interact": TaskEntry(
        "landscape-interact",
        landscape=lambda: OracleLandscape.generate(
            (5, 7, 5, 6), seed=11, main_scale=0.02, pair_density=0.8, pair_scale=0.1,
            noise_sigma=0.02, evolve_sigma=0.03, base=0.4,
        ),
    ),
}


def get_task(task_id: str) -> TaskEntry:
    try:
        return TASKS[task_id]
    except KeyError:
        raise AgentGridError(f"unknown task id {task_id!r}; known: {', '.join(sorted(TASKS))}") from None


__all__ = [
    "Environment",
    "StepResult",
    "LockboxEnv",
    "ToolChainEnv",
    "OracleLandscape",
    "landscape_optimum",
    "synthetic_pools",
    "TaskEntry",
    "TASKS",
    "get_task",
    "lockbox_solver",
    "toolchain_solver",
]
