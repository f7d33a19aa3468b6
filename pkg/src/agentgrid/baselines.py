"""Module-search baselines: uniform random combinations and an additive UCB surrogate."""

from __future__ import annotations

import random

import numpy as np

from .core import KINDS, AgentConfig, ExperiencePool, ExperienceRecord, ModulePools
from .search import IterationRow, SearchResult
from .workflow import Evaluator

RIDGE_LAMBDA = 0.1


class _Runner:
    """Shared bookkeeping: evaluate, record, and log a nondecreasing best."""

    def __init__(self, name: str, task_id: str, pools: ModulePools, evaluator: Evaluator,
                 experience: ExperiencePool, params: dict):
        self.name = name
        self.task_id = task_id
        self.pools = pools
        self.evaluator = evaluator
        self.experience = experience
        self.params = params
        self.best_agent: AgentConfig | None = None
        self.best = -1.0
        self.tokens = 0
        self.history: list[IterationRow] = []
        self.evaluated: list[AgentConfig] = []

    def evaluate(self, agent: AgentConfig, phase: str) -> float:
        ev = self.evaluator(agent, self.pools)
        self.experience.append(ExperienceRecord(agent, ev.score, ev.token_cost, self.task_id,
                                                len(self.evaluated) + 1, "baseline"))
        self.tokens += ev.token_cost
        self.evaluated.append(agent)
        if ev.score > self.best:
            self.best, self.best_agent = ev.score, agent
        self.history.append(IterationRow(len(self.evaluated), phase, self.best,
                                         len(self.evaluated), self.tokens))
        return ev.score

    def result(self) -> SearchResult:
        return SearchResult(
            searcher=self.name,
            task_id=self.task_id,
            best_agent=self.best_agent,
            best_score=max(self.best, 0.0),
            history=self.history,
            real_evals=len(self.evaluated),
            tokens=self.tokens,
            params=self.params,
            evaluated=self.evaluated,
        )


def random_search(budget: int, pools: ModulePools, evaluator: Evaluator, experience: ExperiencePool,
                  seed: int = 0, task_id: str = "") -> SearchResult:
    """Evaluate ``budget`` distinct uniformly drawn combinations (all of them if fewer exist)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    run = _Runner("random", task_id, pools, evaluator, experience, {"budget": budget, "seed": seed})
    total = pools.combination_count()
    for index in random.Random(seed).sample(range(total), min(budget, total)):
        run.evaluate(pools.config_at(index), "random")
    return run.result()


def _slot_tables(pools: ModulePools, observed: list[AgentConfig]):
    """Indicator column offsets and per-module observation counts."""
    names = [pools.names(k) for k in KINDS]
    offsets = np.cumsum([0] + [len(n) for n in names[:-1]])
    lookup = [{name: i for i, name in enumerate(n)} for n in names]
    rows = np.array([[lookup[s][a.get(k)] for s, k in enumerate(KINDS)] for a in observed], dtype=int)
    counts = [np.bincount(rows[:, s], minlength=len(names[s])) for s in range(4)]
    return names, offsets, rows, counts


def fit_additive(pools: ModulePools, observed: list[AgentConfig], scores: list[float],
                 lam: float = RIDGE_LAMBDA) -> tuple[float, list[np.ndarray]]:
    """Ridge fit of score = intercept + sum of per-module effects.

    The intercept is the sample mean and is left undamped.
    """
    names, offsets, rows, _ = _slot_tables(pools, observed)
    dim = sum(len(n) for n in names)
    x = np.zeros((len(observed), dim))
    for s in range(4):
        x[np.arange(len(observed)), offsets[s] + rows[:, s]] = 1.0
    y = np.asarray(scores, dtype=float)
    intercept = float(y.mean())
    w = np.linalg.solve(x.T @ x + lam * np.eye(dim), x.T @ (y - intercept))
    return intercept, [w[offsets[s]: offsets[s] + len(names[s])] for s in range(4)]


def acquisition(pools: ModulePools, observed: list[AgentConfig], scores: list[float],
                ucb_beta: float) -> np.ndarray:
    """Flattened (enumeration order) mean + beta * sum over slots of 1/sqrt(1 + count)."""
    intercept, effects = fit_additive(pools, observed, scores)
    _, _, _, counts = _slot_tables(pools, observed)
    sizes = pools.sizes()
    total = np.full(sizes, intercept)
    for s in range(4):
        shape = [1, 1, 1, 1]
        shape[s] = sizes[s]
        bonus = ucb_beta / np.sqrt(1.0 + counts[s])
        total = total + (effects[s] + bonus).reshape(shape)
    return total.ravel()


def bayesian_search(budget: int, pools: ModulePools, evaluator: Evaluator, experience: ExperiencePool,
                    seed: int = 0, init_samples: int = 10, ucb_beta: float = 0.1,
                    task_id: str = "") -> SearchResult:
    """Random warm start, then greedy UCB acquisition on an additive ridge surrogate."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not 1 <= init_samples < budget:
        raise ValueError("init_samples must lie in [1, budget)")
    run = _Runner("bayesian", task_id, pools, evaluator, experience,
                  {"budget": budget, "seed": seed, "init_samples": init_samples, "ucb_beta": ucb_beta})
    total = pools.combination_count()
    seen = np.zeros(total, dtype=bool)
    observed: list[AgentConfig] = []
    scores: list[float] = []
    for index in random.Random(seed).sample(range(total), min(init_samples, total)):
        agent = pools.config_at(index)
        scores.append(run.evaluate(agent, "warmup"))
        observed.append(agent)
        seen[index] = True
    while len(observed) < budget and not seen.all():
        value = acquisition(pools, observed, scores, ucb_beta)
        value[seen] = -np.inf
        index = int(np.argmax(value))
        agent = pools.config_at(index)
        scores.append(run.evaluate(agent, "acquire"))
        observed.append(agent)
        seen[index] = True
    return run.result()
