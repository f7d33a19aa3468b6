"""Object puzzle: press colored buttons in the right order to open a box."""

from __future__ import annotations

import random
import re

from ..core import TaskSpec
from ..errors import EpisodeFinished
from .base import StepResult

COLORS = ("red", "green", "blue", "yellow")
_PRESS = re.compile(r"\bpress\s+(?:the\s+)?(" + "|".join(COLORS) + r")\b", re.IGNORECASE)


class LockboxEnv:
    def __init__(self, sequence: tuple[str, ...] | None = None, seed: int = 0, task_id: str = "lockbox-3",
                 max_trials: int = 3, max_steps_per_trial: int = 4):
        if sequence is None:
            rng = random.Random(seed)
            sequence = tuple(rng.choice(COLORS) for _ in range(3))
        if any(c not in COLORS for c in sequence):
            raise ValueError(f"unknown color in {sequence}")
        self.sequence = tuple(sequence)
        self.seed = seed
        self.state = 0
        self.done = False
        self.tools = {}
        self.task = TaskSpec(
            id=task_id,
            description=(
                f"A lockbox has {len(self.sequence)} locks. Each lock opens when one of the "
                f"colored buttons ({', '.join(COLORS)}) is pressed; the locks must be opened in order. "
                "Open the lockbox. Actions look like 'press <color>'."
            ),
            max_trials=max_trials,
            max_steps_per_trial=max_steps_per_trial,
        )

    def parse_action(self, solution: str) -> str:
        hits = _PRESS.findall(solution)
        if hits:
            return f"press {hits[-1].lower()}"
        lines = [ln.strip() for ln in solution.strip().splitlines() if ln.strip()]
        return lines[-1] if lines else ""

    def step(self, action: str) -> StepResult:
        if self.done:
            raise EpisodeFinished()
        m = re.fullmatch(r"\s*press\s+(\w+)\s*", action, re.IGNORECASE)
        if not m or m.group(1).lower() not in COLORS:
            return StepResult("nothing happens", f"unknown action: {action!r}", False, rejected=True)
        color = m.group(1).lower()
        if color != self.sequence[self.state]:
            return StepResult(
                "the button does not move",
                f"the {color} button does not fit lock {self.state + 1}",
                False,
                rejected=True,
            )
        self.state += 1
        if self.state == len(self.sequence):
            self.done = True
            return StepResult("the lockbox springs open", "all locks are open", True)
        return StepResult("a click", f"lock {self.state} is open", False)

    def evaluate(self) -> float:
        return self.state / len(self.sequence)
