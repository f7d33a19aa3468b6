from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

from ..core import TaskSpec


@dataclass(frozen=True)
class StepResult:
    observation: str
    feedback: str
    done: bool
    rejected: bool = False


class Environment(Protocol):
    """A single-episode, single-writer text environment."""

    task: TaskSpec
    tools: Mapping[str, Callable[[str], str]]
    done: bool

    def step(self, action: str) -> StepResult: ...

    def parse_action(self, solution: str) -> str: ...

    def evaluate(self) -> float: ...
