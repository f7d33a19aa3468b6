"""Multi-tool arithmetic task whose key intermediate value only a tool can supply."""

from __future__ import annotations

import ast
import operator
import random
import re

from ..core import TaskSpec, ToolDef
from ..errors import EpisodeFinished
from .base import StepResult

KEYS = ("alpha", "bravo", "charlie", "delta")

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def safe_arith(expr: str) -> float:
    """Evaluate +-*/ arithmetic without touching ``eval``."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](walk(node.operand))
        raise ValueError(f"unsupported expression: {expr!r}")

    return walk(ast.parse(expr, mode="eval"))


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:.6g}"


class ToolChainEnv:
    def __init__(self, seed: int = 0, key: str = "alpha", factor: int = 7, task_id: str = "toolchain",
                 max_trials: int = 3, max_steps_per_trial: int = 5):
        rng = random.Random(seed)
        self.secrets = {k: rng.randint(100, 999) for k in KEYS}
        self.key = key
        self.factor = factor
        self.answer = self.secrets[key] * factor
        self.looked_up = False
        self.calculated = False
        self.submitted = False
        self.done = False
        self.tools = {
            "lookup": self._lookup,
            "calculator": self._calculator,
            "search": self._search,
        }
        self.task = TaskSpec(
            id=task_id,
            description=(
                f"Compute the access code: look up the secret number for key '{key}', "
                f"multiply it by {factor}, and submit the product. "
                "Actions: 'submit <number>' or 'report <note>'."
            ),
            tools=(
                ToolDef("lookup", "(key: str) -> int", "Return the secret number stored under a key.", "lookup"),
                ToolDef("calculator", "(expression: str) -> number", "Evaluate an arithmetic expression.", "calculator"),
                ToolDef("search", "(query: str) -> str", "Search the web for text.", "search"),
            ),
            max_trials=max_trials,
            max_steps_per_trial=max_steps_per_trial,
        )

    # tools ---------------------------------------------------------------
    def _lookup(self, problem: str) -> str:
        for k in KEYS:
            if re.search(rf"\b{k}\b", problem, re.IGNORECASE):
                if k == self.key:
                    self.looked_up = True
                return f"{k} = {self.secrets[k]}"
        return "no such key"

    def _calculator(self, problem: str) -> str:
        candidates = re.findall(r"[\d\s.+\-*/()%]*\d[\d\s.+\-*/()%]*", problem)
        if not candidates:
            return "error: no expression"
        expr = max(candidates, key=len).strip()
        try:
            value = safe_arith(expr)
        except (ValueError, SyntaxError, ZeroDivisionError) as exc:
            return f"error: {exc}"
        if value == self.answer:
            self.calculated = True
        return _fmt(value)

    def _search(self, problem: str) -> str:
        return "no relevant results"

    # environment ---------------------------------------------------------
    def parse_action(self, solution: str) -> str:
        m = re.findall(r"\bsubmit\s+(-?\d+(?:\.\d+)?)", solution, re.IGNORECASE)
        if m:
            return f"submit {m[-1]}"
        lines = [ln.strip() for ln in solution.strip().splitlines() if ln.strip()]
        note = lines[-1] if lines else ""
        return note if note.lower().startswith("report ") else f"report {note}"

    def step(self, action: str) -> StepResult:
        if self.done:
            raise EpisodeFinished()
        action = action.strip()
        m = re.fullmatch(r"submit\s+(-?\d+(?:\.\d+)?)", action, re.IGNORECASE)
        if m:
            if float(m.group(1)) == self.answer:
                self.submitted = True
                self.done = True
                return StepResult("access granted", "correct code", True)
            return StepResult("access denied", f"wrong code {m.group(1)}", False, rejected=True)
        m = re.fullmatch(r"report\s+(.+)", action, re.IGNORECASE | re.DOTALL)
        if m:
            return StepResult(f"noted: {m.group(1).strip()}", "", False)
        return StepResult("nothing happens", f"unknown action: {action!r}", False, rejected=True)

    def evaluate(self) -> float:
        return (self.looked_up + self.calculated + self.submitted) / 3
