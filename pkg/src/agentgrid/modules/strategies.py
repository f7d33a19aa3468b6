"""Executable behaviour behind each StrategyKind.

Every function takes the ModuleSpec that configures it plus a completion
provider, so call counts are fully determined by the module's knobs:

=================  =====================================================
single_shot        1 call
sample_and_vote    sample_count calls
tree_search        sum(breadth**level for level in 1..depth) proposals
                   plus one scoring call per level
self_refine        1 + refine_rounds calls
step_back          2 calls (abstraction, then answer)
=================  =====================================================
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Callable, Mapping, Sequence

from ..core import (
    MAX_SUBTASKS,
    MemoryStore,
    ModuleKind,
    ModuleSpec,
    StrategyKind,
    SubTaskPlan,
    TaskSpec,
    ToolDef,
    render,
    template_fields,
)
from ..errors import AgentGridError, PlanParseError, ReasoningProviderError, ToolHallucination
from ..llm import Provider, ask

ToolRegistry = Mapping[str, Callable[[str], str]]

PLAN_REASKS = 2
_NUMBERED = re.compile(r"^\s*(?:step\s*)?\d{1,2}\s*[.):]\s*(.*\S)\s*$", re.IGNORECASE)
_FLOAT = re.compile(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?")


def _require(spec: ModuleSpec, kind: ModuleKind):
    if spec.kind is not kind:
        raise ValueError(f"{spec.name} is a {spec.kind.value} module, expected {kind.value}")


def _temperature(spec: ModuleSpec, default: float = 0.0) -> float:
    return float(spec.params.get("temperature", default))


# -- planning -------------------------------------------------------------

def parse_numbered_list(text: str) -> list[str]:
    return [m.group(1) for m in map(_NUMBERED.match, text.splitlines()) if m]


def planning_prompt(spec: ModuleSpec, task: TaskSpec, feedback: str) -> str:
    prompt = render(spec.prompt_template, task=task.description, feedback=feedback or "none")
    # feedback must reach the planner even when the template has no slot for it
    if feedback and "feedback" not in template_fields(spec.prompt_template):
        prompt += f"\n\nFeedback from the previous trial: {feedback}"
    return prompt


def plan(spec: ModuleSpec, task: TaskSpec, feedback: str, llm: Provider) -> SubTaskPlan:
    """Decompose ``task`` into an ordered list of sub-tasks."""
    _require(spec, ModuleKind.PLANNING)
    if spec.is_sentinel:
        return SubTaskPlan((task.description,))

    prompt = planning_prompt(spec, task, feedback)
    limit = min(int(spec.param("max_subtasks")), MAX_SUBTASKS)
    temperature = _temperature(spec)
    text = ""
    for attempt in range(PLAN_REASKS + 1):
        p = prompt if attempt == 0 else (
            prompt + "\n\nYour previous answer could not be parsed. "
            "Reply only with a numbered list, one sub-task per line."
        )
        text = ask(llm, p, temperature).text
        items = [s for s in parse_numbered_list(text) if s.strip()]
        if items:
            return SubTaskPlan(tuple(items[:limit]))
    raise PlanParseError(text)


# -- reasoning ------------------------------------------------------------

def normalize_answer(text: str) -> str:
    return " ".join(text.split()).lower()


def majority_vote(answers: Sequence[str]) -> str:
    """Modal answer after whitespace/case normalization; ties go to the first seen."""
    if not answers:
        raise ValueError("no answers to vote on")
    keys = [normalize_answer(a) for a in answers]
    counts = Counter(keys)
    best = max(counts.values())
    for key, answer in zip(keys, answers):
        if counts[key] == best:
            return answer.strip()
    raise AssertionError("unreachable")


def parse_scores(text: str, n: int) -> list[float]:
    """Scores for ``n`` candidates from 'index: score' lines, else bare numbers in order."""
    scores = [0.0] * n
    indexed = False
    for line in text.splitlines():
        m = re.match(r"^\s*(\d+)\s*[:.)=-]\s*(" + _FLOAT.pattern + r")", line)
        if m and 1 <= int(m.group(1)) <= n:
            scores[int(m.group(1)) - 1] = float(m.group(2))
            indexed = True
    if not indexed:
        for i, v in enumerate(_FLOAT.findall(text)[:n]):
            scores[i] = float(v)
    return scores


def _reasoning_base(spec, subtask, feedback, memory_hits, tool_result) -> str:
    return render(
        spec.prompt_template,
        subtask=subtask,
        feedback=feedback or "none",
        memory="\n".join(memory_hits) if memory_hits else "none",
        tool_result=tool_result if tool_result is not None else "none",
    )


def _tree_search(spec: ModuleSpec, base: str, llm: Provider) -> str:
    breadth = int(spec.param("tree_breadth"))
    depth = int(spec.param("tree_depth"))
    temperature = _temperature(spec, 0.7)
    # frontier entries: (path of thoughts, cumulative score)
    frontier: list[tuple[list[str], float]] = [([], 0.0)]
    proposals = 0
    for level in range(1, depth + 1):
        children: list[tuple[list[str], float]] = []
        for path, score in frontier:
            shown = "\n".join(f"- {t}" for t in path) or "(none yet)"
            for b in range(breadth):
                prompt = (
                    f"{base}\n\nThoughts so far:\n{shown}\n"
                    f"Propose the next thought (level {level}, option {b + 1} of {breadth})."
                )
                text = ask(llm, prompt, temperature, seed=proposals).text.strip()
                proposals += 1
                children.append((path + [text], score))
        listing = "\n".join(f"{i + 1}. {p[-1]}" for i, (p, _) in enumerate(children))
        verdict = ask(
            llm,
            f"{base}\n\nEvaluate the candidate thoughts at level {level}. "
            f"Rate each from 0 to 1, one line per candidate as 'index: score'.\n{listing}",
        ).text
        values = parse_scores(verdict, len(children))
        frontier = [(p, s + v) for (p, s), v in zip(children, values)]
    best_path, _ = max(frontier, key=lambda item: item[1])  # max keeps the first on ties
    return best_path[-1]


def reason(spec: ModuleSpec, subtask: str, feedback: str, memory_hits: Sequence[str],
           tool_result: str | None, llm: Provider) -> str:
    """Solve one sub-task and return the solution text."""
    _require(spec, ModuleKind.REASONING)
    base = _reasoning_base(spec, subtask, feedback, memory_hits, tool_result)
    strategy = spec.strategy
    try:
        if strategy is StrategyKind.SINGLE_SHOT:
            return ask(llm, base, _temperature(spec)).text.strip()

        if strategy is StrategyKind.SAMPLE_AND_VOTE:
            n = int(spec.param("sample_count"))
            temperature = _temperature(spec, 0.7)
            answers = [ask(llm, base, temperature, seed=i).text for i in range(n)]
            return majority_vote(answers)

        if strategy is StrategyKind.TREE_SEARCH:
            return _tree_search(spec, base, llm)

        if strategy is StrategyKind.SELF_REFINE:
            answer = ask(llm, base, _temperature(spec)).text.strip()
            for round_ in range(int(spec.param("refine_rounds"))):
                critique = (
                    f"{feedback or 'none'}\nCritique round {round_ + 1}: "
                    f"find the flaws in your previous answer and improve it.\n"
                    f"Previous answer: {answer}"
                )
                prompt = _reasoning_base(spec, subtask, critique, memory_hits, tool_result)
                if "feedback" not in template_fields(spec.prompt_template):
                    prompt += f"\n\n{critique}"
                answer = ask(llm, prompt, _temperature(spec)).text.strip()
            return answer

        if strategy is StrategyKind.STEP_BACK:
            principle = ask(
                llm,
                f"{base}\n\nStep back: what general principle or concept is needed here? "
                "State it briefly.",
                _temperature(spec),
            ).text.strip()
            return ask(
                llm, f"{base}\n\nPrinciple: {principle}\nNow answer the sub-task.", _temperature(spec)
            ).text.strip()
    except ReasoningProviderError:
        raise
    except AgentGridError as exc:
        raise ReasoningProviderError(f"reasoning provider failure: {exc}") from exc
    raise ValueError(f"strategy {strategy.value} cannot reason")


# -- tool use -------------------------------------------------------------

def tool_catalog(tools: Sequence[ToolDef]) -> str:
    return "\n".join(f"- {t.name}{t.signature}: {t.docstring}" for t in tools)


def _name_tool(answer: str, tools: Sequence[ToolDef]) -> ToolDef | None:
    cleaned = answer.strip().strip("`'\".:").strip().lower()
    by_name = {t.name.lower(): t for t in tools}
    if cleaned in by_name:
        return by_name[cleaned]
    words = set(re.findall(r"[A-Za-z_][\w-]*", answer.lower()))
    named = [t for t in tools if t.name.lower() in words]
    return named[0] if len(named) == 1 else None


def _rank_tools(answer: str, tools: Sequence[ToolDef]) -> ToolDef | None:
    scores: dict[str, float] = {}
    for line in answer.splitlines():
        m = re.match(r"^\s*[-*]?\s*`?([\w-]+)`?\s*[:=]\s*(" + _FLOAT.pattern + r")", line)
        if m:
            scores[m.group(1).lower()] = float(m.group(2))
    ranked = [(scores[t.name.lower()], t) for t in tools if t.name.lower() in scores]
    if not ranked:
        return None
    best = max(s for s, _ in ranked)
    return next(t for s, t in ranked if s == best)


def select_tool(spec: ModuleSpec, problem: str, tools: Sequence[ToolDef], llm: Provider,
                registry: ToolRegistry) -> tuple[ToolDef, str]:
    """Pick one tool from ``tools`` for ``problem`` and invoke it."""
    _require(spec, ModuleKind.TOOLUSE)
    if spec.is_sentinel:
        raise ValueError("the 'none' tool-use module cannot select tools")
    if not tools:
        raise ValueError("empty tool pool")

    prompt = render(spec.prompt_template, problem=problem, tool_catalog=tool_catalog(tools))
    if spec.strategy is StrategyKind.TOOL_MATCH:
        pick = _name_tool
    elif spec.strategy is StrategyKind.TOOL_BRUTE_RANK:
        pick = _rank_tools
    else:
        raise ValueError(f"strategy {spec.strategy.value} cannot select tools")

    answer = ask(llm, prompt, _temperature(spec)).text
    chosen = pick(answer, tools)
    if chosen is None:
        names = ", ".join(t.name for t in tools)
        answer = ask(llm, f"{prompt}\n\nOnly these tools exist: {names}. Answer again.",
                     _temperature(spec)).text
        chosen = pick(answer, tools)
    if chosen is None:
        raise ToolHallucination(answer.strip())
    return chosen, str(registry[chosen.impl_id](problem))


# -- memory ---------------------------------------------------------------

def tokens(text: str) -> set[str]:
    return set(text.lower().split())


def jaccard(a: str, b: str) -> float:
    ta, tb = tokens(a), tokens(b)
    if not ta and not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def memory_write(spec: ModuleSpec, store: MemoryStore, observation: str, step: int) -> MemoryStore:
    _require(spec, ModuleKind.MEMORY)
    if not spec.is_sentinel:
        store.append(observation, step, tag=spec.name)
    return store


def memory_read(spec: ModuleSpec, store: MemoryStore, query: str) -> list[str]:
    _require(spec, ModuleKind.MEMORY)
    if spec.is_sentinel:
        return []
    entries = store.entries
    k = int(spec.param("retrieval_k"))
    n = len(entries)
    # newest first, so stable sorting breaks ties toward recency
    newest_first = list(reversed(range(n)))
    if spec.strategy is StrategyKind.MEMORY_RECENCY:
        order = newest_first
    elif spec.strategy is StrategyKind.MEMORY_SIMILARITY:
        order = sorted(newest_first, key=lambda i: -jaccard(query, entries[i].text))
    elif spec.strategy is StrategyKind.MEMORY_SCORED:
        def blended(i: int) -> float:
            recency = i / (n - 1) if n > 1 else 1.0
            return jaccard(query, entries[i].text) + 0.1 * recency

        order = sorted(newest_first, key=lambda i: -blended(i))
    else:
        raise ValueError(f"strategy {spec.strategy.value} cannot read memory")
    return [entries[i].text for i in order[:k]]
