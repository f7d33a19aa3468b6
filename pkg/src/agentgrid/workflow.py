"""Run one assembled agent against an environment.

Per trial: plan with the latest feedback, then for each sub-task read memory,
reason (optionally detouring through a tool when the solution carries a
``TOOL:`` directive), act, and write the observation back to memory. A
rejected action or an exhausted step budget ends the trial and its feedback
seeds the next plan.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .core import (
    KINDS,
    AgentConfig,
    MemoryStore,
    ModuleKind,
    ModulePools,
    ModuleSpec,
    TaskSpec,
    Trajectory,
    TrajectoryStep,
)
from .envs import OracleLandscape, get_task
from .envs.base import Environment
from .errors import AgentGridError
from .llm import Metered, Provider, digest
from .modules.strategies import memory_read, memory_write, plan, reason, select_tool

_TOOL = re.compile(r"TOOL:\s*(.+)")


class TrajectoryDrift(AgentGridError):
    def __init__(self, step: int):
        super().__init__(f"trajectory drift at step {step}")
        self.step = step


def tool_directive(solution: str) -> str | None:
    m = _TOOL.search(solution)
    return m.group(1).strip() if m else None


def _step(meter: Metered, mark: int, phase: str, action: str = "", feedback: str = "") -> TrajectoryStep:
    calls = meter.since(mark)
    return TrajectoryStep(
        phase=phase,
        prompt_digest=digest("\x1e".join(r.prompt for r, _ in calls)) if calls else "",
        completion_digest=digest("\x1e".join(c.text for _, c in calls)) if calls else "",
        action_text=action,
        feedback_text=feedback,
        tokens_in=sum(c.tokens_in for _, c in calls),
        tokens_out=sum(c.tokens_out for _, c in calls),
    )


def run_episode(agent: AgentConfig, pools: ModulePools, task: TaskSpec, env: Environment,
                llm: Provider) -> Trajectory:
    specs = pools.resolve(agent)
    if env.task.id != task.id:
        raise ValueError(f"environment serves {env.task.id!r}, not {task.id!r}")
    planner = specs[ModuleKind.PLANNING]
    reasoner = specs[ModuleKind.REASONING]
    tooluser = specs[ModuleKind.TOOLUSE]
    memory = specs[ModuleKind.MEMORY]

    meter = Metered(llm)
    traj = Trajectory(task.id, agent)
    store = MemoryStore()
    feedback = ""
    actions = 0

    for _ in range(task.max_trials):
        traj.trials += 1
        mark = meter.mark()
        try:
            subplan = plan(planner, task, feedback, meter)
        except AgentGridError as exc:
            traj.steps.append(_step(meter, mark, "plan", feedback=str(exc)))
            feedback = f"planning failed: {exc}"
            continue
        traj.steps.append(_step(meter, mark, "plan", action="\n".join(subplan.subtasks)))

        trial_feedback = None
        used = 0
        for subtask in subplan.subtasks:
            if used >= task.max_steps_per_trial:
                trial_feedback = "step budget exhausted before the plan was finished"
                break
            hits: list[str] = []
            if not memory.is_sentinel:
                hits = memory_read(memory, store, subtask)
                traj.steps.append(TrajectoryStep("memory_read", action_text="\n".join(hits)))

            phase = "reason"
            mark = meter.mark()
            try:
                solution = reason(reasoner, subtask, feedback, hits, None, meter)
                traj.steps.append(_step(meter, mark, "reason", action=solution))
                problem = tool_directive(solution)
                if problem is not None and not tooluser.is_sentinel and task.tools:
                    phase = "tool"
                    mark = meter.mark()
                    tool, result = select_tool(tooluser, problem, task.tools, meter, env.tools)
                    solution = reason(reasoner, subtask, feedback, hits, result, meter)
                    traj.steps.append(_step(meter, mark, "tool", action=f"{tool.name}: {problem}",
                                            feedback=result))
            except AgentGridError as exc:
                traj.steps.append(_step(meter, mark, phase, feedback=str(exc)))
                trial_feedback = f"{phase} failed: {exc}"
                break

            action = env.parse_action(solution)
            result = env.step(action)
            actions += 1
            used += 1
            traj.steps.append(TrajectoryStep("env_act", action_text=action,
                                             feedback_text=result.feedback or result.observation))
            if not memory.is_sentinel:
                memory_write(memory, store, f"{action} -> {result.observation}", actions)
                traj.steps.append(TrajectoryStep("memory_write", action_text=result.observation))
            if result.done:
                break
            if result.rejected:
                trial_feedback = f"action {action!r} was rejected: {result.feedback}"
                break

        if env.done:
            break
        feedback = trial_feedback or "all sub-tasks were carried out but the task is not complete"

    traj.final_score = float(env.evaluate())
    return traj


# -- trajectory files -------------------------------------------------------

def write_trajectory(path: str | Path, traj: Trajectory, specs: dict[ModuleKind, ModuleSpec],
                     env_seed: int = 0) -> None:
    header = {
        "type": "header",
        "task_id": traj.task_id,
        "agent": traj.agent.to_dict(),
        "modules": {k.slot: specs[k].to_dict() for k in KINDS},
        "env_seed": env_seed,
        "trials": traj.trials,
        "final_score": traj.final_score,
        "tokens_in": traj.tokens_in,
        "tokens_out": traj.tokens_out,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for i, step in enumerate(traj.steps):
            fh.write(json.dumps({"type": "step", "index": i, **step.to_dict()}, ensure_ascii=False) + "\n")


def read_trajectory(path: str | Path) -> tuple[dict, list[dict]]:
    lines = [json.loads(ln) for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].get("type") != "header":
        raise AgentGridError(f"{path}: missing trajectory header")
    return lines[0], lines[1:]


def verify_replay(path: str | Path, llm: Provider) -> Trajectory:
    """Re-run a recorded episode and compare every step digest.

    Raises :class:`TrajectoryDrift` naming the first step that differs.
    """
    header, steps = read_trajectory(path)
    # Scratch pool for re-execution only; lineage does not affect behaviour, so
    # evolved specs are inserted without their (unrecorded) ancestors.
    pools = ModulePools()
    for kind in KINDS:
        spec = ModuleSpec.from_dict(header["modules"][kind.slot])
        pools.add(dataclasses.replace(spec, origin="seed", parent_name=None))
    agent = AgentConfig.from_dict(header["agent"])
    entry = get_task(header["task_id"])
    if entry.env_factory is None:
        raise AgentGridError(f"task {header['task_id']!r} has no episode environment")
    env = entry.env_factory(header.get("env_seed", 0))
    traj = run_episode(agent, pools, env.task, env, llm)
    for i, (old, new) in enumerate(zip(steps, traj.steps)):
        if (old["phase"], old["prompt_digest"], old["completion_digest"]) != (
            new.phase, new.prompt_digest, new.completion_digest
        ):
            raise TrajectoryDrift(i)
    if len(steps) != len(traj.steps):
        raise TrajectoryDrift(min(len(steps), len(traj.steps)))
    return traj


# -- evaluators ---------------------------------------------------------------

@dataclass(frozen=True)
class Evaluation:
    score: float
    token_cost: int = 0
    trajectory: Trajectory | None = None


Evaluator = Callable[[AgentConfig, ModulePools], Evaluation]


class LandscapeEvaluator:
    """Scores configurations directly on an oracle landscape; costs no tokens."""

    def __init__(self, landscape: OracleLandscape, task_id: str = "landscape"):
        self.landscape = landscape
        self.task_id = task_id
        self.calls = 0

    def __call__(self, agent: AgentConfig, pools: ModulePools) -> Evaluation:
        self.calls += 1
        return Evaluation(self.landscape.score(agent, pools))


class EpisodeEvaluator:
    """Runs one workflow episode per evaluation on a fresh environment."""

    def __init__(self, env_factory: Callable[[int], Environment], llm: Provider, env_seed: int = 0,
                 trajectory_dir: str | Path | None = None):
        self.env_factory = env_factory
        self.llm = llm
        self.env_seed = env_seed
        self.trajectory_dir = Path(trajectory_dir) if trajectory_dir else None
        self.calls = 0
        probe = env_factory(env_seed)
        self.task_id = probe.task.id

    def __call__(self, agent: AgentConfig, pools: ModulePools) -> Evaluation:
        env = self.env_factory(self.env_seed)
        traj = run_episode(agent, pools, env.task, env, self.llm)
        if self.trajectory_dir is not None:
            write_trajectory(self.trajectory_dir / f"{self.calls:04d}.jsonl", traj,
                             pools.resolve(agent), self.env_seed)
        self.calls += 1
        return Evaluation(traj.final_score, traj.token_cost, traj)
