"""Domain types for the modular agent design space.

An agent is one point ``(planning, reasoning, tooluse, memory)`` in the
Cartesian product of four module pools. Every evaluated point lands in an
append-only :class:`ExperiencePool`.
"""

from __future__ import annotations

import enum
import itertools
import math
import string
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import EmptyDesignDimension, InvalidSpec, UnknownModule

SENTINEL = "none"
MAX_SUBTASKS = 16
MAX_DESCRIPTION = 600


class ModuleKind(str, enum.Enum):
    PLANNING = "Planning"
    REASONING = "Reasoning"
    TOOLUSE = "ToolUse"
    MEMORY = "Memory"

    @property
    def slot(self) -> str:
        return _SLOTS[self]

    @classmethod
    def from_slot(cls, slot: str) -> "ModuleKind":
        for kind, name in _SLOTS.items():
            if name == slot:
                return kind
        raise ValueError(f"unknown slot {slot!r}")


_SLOTS = {
    ModuleKind.PLANNING: "planning",
    ModuleKind.REASONING: "reasoning",
    ModuleKind.TOOLUSE: "tooluse",
    ModuleKind.MEMORY: "memory",
}
KINDS: tuple[ModuleKind, ...] = tuple(ModuleKind)
SLOTS: tuple[str, ...] = tuple(k.slot for k in KINDS)


class StrategyKind(str, enum.Enum):
    SINGLE_SHOT = "single_shot"
    SAMPLE_AND_VOTE = "sample_and_vote"
    TREE_SEARCH = "tree_search"
    SELF_REFINE = "self_refine"
    STEP_BACK = "step_back"
    PLAN_LIST = "plan_list"
    PLAN_WITH_FEEDBACK = "plan_with_feedback"
    TOOL_MATCH = "tool_match"
    TOOL_BRUTE_RANK = "tool_brute_rank"
    MEMORY_RECENCY = "memory_recency"
    MEMORY_SIMILARITY = "memory_similarity"
    MEMORY_SCORED = "memory_scored"
    NONE = "none"


_R, _P, _T, _M = KINDS[1], KINDS[0], KINDS[2], KINDS[3]

STRATEGY_KINDS: dict[StrategyKind, frozenset[ModuleKind]] = {
    StrategyKind.SINGLE_SHOT: frozenset({_R}),
    StrategyKind.SAMPLE_AND_VOTE: frozenset({_R}),
    StrategyKind.TREE_SEARCH: frozenset({_R}),
    StrategyKind.SELF_REFINE: frozenset({_R}),
    StrategyKind.STEP_BACK: frozenset({_R}),
    StrategyKind.PLAN_LIST: frozenset({_P}),
    StrategyKind.PLAN_WITH_FEEDBACK: frozenset({_P}),
    StrategyKind.TOOL_MATCH: frozenset({_T}),
    StrategyKind.TOOL_BRUTE_RANK: frozenset({_T}),
    StrategyKind.MEMORY_RECENCY: frozenset({_M}),
    StrategyKind.MEMORY_SIMILARITY: frozenset({_M}),
    StrategyKind.MEMORY_SCORED: frozenset({_M}),
    StrategyKind.NONE: frozenset({_P, _T, _M}),
}

# name -> (low, high, type, default)
PARAM_BOUNDS: dict[str, tuple[float, float, type, float]] = {
    "sample_count": (1, 9, int, 3),
    "tree_breadth": (1, 4, int, 2),
    "tree_depth": (1, 3, int, 2),
    "refine_rounds": (0, 3, int, 1),
    "retrieval_k": (1, 8, int, 3),
    "max_subtasks": (1, MAX_SUBTASKS, int, 8),
    "temperature": (0.0, 1.5, float, 0.0),
}

_LLM_KNOB = {"temperature"}
STRATEGY_PARAMS: dict[StrategyKind, frozenset[str]] = {
    StrategyKind.SINGLE_SHOT: frozenset(_LLM_KNOB),
    StrategyKind.SAMPLE_AND_VOTE: frozenset({"sample_count"} | _LLM_KNOB),
    StrategyKind.TREE_SEARCH: frozenset({"tree_breadth", "tree_depth"} | _LLM_KNOB),
    StrategyKind.SELF_REFINE: frozenset({"refine_rounds"} | _LLM_KNOB),
    StrategyKind.STEP_BACK: frozenset(_LLM_KNOB),
    StrategyKind.PLAN_LIST: frozenset({"max_subtasks"} | _LLM_KNOB),
    StrategyKind.PLAN_WITH_FEEDBACK: frozenset({"max_subtasks"} | _LLM_KNOB),
    StrategyKind.TOOL_MATCH: frozenset(_LLM_KNOB),
    StrategyKind.TOOL_BRUTE_RANK: frozenset(_LLM_KNOB),
    StrategyKind.MEMORY_RECENCY: frozenset({"retrieval_k"}),
    StrategyKind.MEMORY_SIMILARITY: frozenset({"retrieval_k"}),
    StrategyKind.MEMORY_SCORED: frozenset({"retrieval_k"}),
    StrategyKind.NONE: frozenset(),
}

PLACEHOLDERS: dict[ModuleKind, frozenset[str]] = {
    ModuleKind.PLANNING: frozenset({"task", "feedback"}),
    ModuleKind.REASONING: frozenset({"subtask", "feedback", "memory", "tool_result"}),
    ModuleKind.TOOLUSE: frozenset({"problem", "tool_catalog"}),
    ModuleKind.MEMORY: frozenset({"observation", "query"}),
}


def template_fields(template: str) -> list[str]:
    """Placeholder names used by ``template``; raises ValueError on bad syntax."""
    return [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]


def render(template: str, **values: str) -> str:
    fields = template_fields(template)
    return template.format_map({f: values.get(f, "") for f in fields})


@dataclass(frozen=True, eq=True)
class ModuleSpec:
    name: str
    kind: ModuleKind
    strategy: StrategyKind
    params: dict[str, Any] = field(default_factory=dict, hash=False)
    prompt_template: str = ""
    description: str = ""
    origin: str = "seed"
    parent_name: str | None = None

    @property
    def is_sentinel(self) -> bool:
        return self.name == SENTINEL

    def param(self, name: str):
        if name in self.params:
            return self.params[name]
        return PARAM_BOUNDS[name][3]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "strategy": self.strategy.value,
            "params": dict(self.params),
            "prompt_template": self.prompt_template,
            "description": self.description,
            "origin": self.origin,
            "parent_name": self.parent_name,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ModuleSpec":
        """Build a spec from its document form. Raises InvalidSpec on shape errors."""
        try:
            return cls(
                name=str(doc["name"]),
                kind=ModuleKind(doc["kind"]),
                strategy=StrategyKind(doc["strategy"]),
                params=dict(doc.get("params") or {}),
                prompt_template=str(doc.get("prompt_template", "")),
                description=str(doc.get("description", "")),
                origin=str(doc.get("origin", "seed")),
                parent_name=doc.get("parent_name"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidSpec([f"malformed document: {exc}"]) from exc


def sentinel(kind: ModuleKind) -> ModuleSpec:
    return ModuleSpec(
        name=SENTINEL,
        kind=kind,
        strategy=StrategyKind.NONE,
        description=f"No {kind.value.lower()} module.",
    )


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_for_violations(self):
        if self.violations:
            raise InvalidSpec(self.violations)


def validate_module_spec(spec: ModuleSpec, pools: "ModulePools | None" = None) -> ValidationReport:
    """Check every ModuleSpec invariant; violations are returned, not raised."""
    out: list[str] = []
    if not spec.name.strip():
        out.append("empty name")
    if spec.kind not in STRATEGY_KINDS[spec.strategy]:
        out.append(f"strategy {spec.strategy.value} illegal for kind {spec.kind.value}")
    if (spec.strategy is StrategyKind.NONE) != (spec.name == SENTINEL):
        out.append("sentinel name and strategy 'none' must go together")

    try:
        fields = template_fields(spec.prompt_template)
    except ValueError as exc:
        out.append(f"malformed prompt template: {exc}")
        fields = []
    legal = PLACEHOLDERS[spec.kind]
    for f in fields:
        if f not in legal:
            out.append(f"illegal placeholder for kind: {{{f}}}")

    allowed = STRATEGY_PARAMS[spec.strategy]
    for key, value in spec.params.items():
        if key not in allowed:
            out.append(f"unknown param: {key}")
            continue
        low, high, typ, _ = PARAM_BOUNDS[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            out.append(f"param {key} is not numeric")
        elif typ is int and value != int(value):
            out.append(f"param {key} must be an integer")
        elif not (low <= value <= high) or math.isnan(value):
            out.append(f"param {key}={value} out of bounds [{low}, {high}]")

    if len(spec.description) > MAX_DESCRIPTION:
        out.append(f"description longer than {MAX_DESCRIPTION} chars")
    if spec.origin not in ("seed", "evolved"):
        out.append(f"unknown origin: {spec.origin}")

    if pools is not None:
        if spec.name in pools.names(spec.kind):
            out.append(f"duplicate name: {spec.name}")
        if spec.origin == "evolved":
            if not spec.parent_name or spec.parent_name not in pools.names(spec.kind):
                out.append(f"evolved spec parent {spec.parent_name!r} not in {spec.kind.value} pool")
    elif spec.origin == "evolved" and not spec.parent_name:
        out.append("evolved spec without parent_name")
    return ValidationReport(out)


@dataclass(frozen=True, order=True)
class AgentConfig:
    planning: str
    reasoning: str
    tooluse: str
    memory: str

    def __post_init__(self):
        if self.reasoning == SENTINEL:
            raise ValueError("reasoning slot may not be the 'none' sentinel")

    def slots(self) -> tuple[str, str, str, str]:
        return (self.planning, self.reasoning, self.tooluse, self.memory)

    def get(self, kind: ModuleKind) -> str:
        return getattr(self, kind.slot)

    def replace(self, kind: ModuleKind, name: str) -> "AgentConfig":
        values = dict(zip(SLOTS, self.slots()))
        values[kind.slot] = name
        return AgentConfig(**values)

    def hamming(self, other: "AgentConfig") -> int:
        return sum(a != b for a, b in zip(self.slots(), other.slots()))

    def to_dict(self) -> dict[str, str]:
        return dict(zip(SLOTS, self.slots()))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "AgentConfig":
        return cls(**{s: str(doc[s]) for s in SLOTS})

    def label(self) -> str:
        return " | ".join(self.slots())


class ModulePools:
    """The four standardized pools. Evolution appends; nothing is removed."""

    def __init__(self, pools: dict[ModuleKind, Iterable[ModuleSpec]] | None = None):
        self._pools: dict[ModuleKind, list[ModuleSpec]] = {k: [] for k in KINDS}
        self._lock = threading.Lock()
        for kind, specs in (pools or {}).items():
            for spec in specs:
                self.add(spec)

    def add(self, spec: ModuleSpec) -> ModuleSpec:
        report = validate_module_spec(spec, self)
        report.raise_for_violations()
        with self._lock:
            self._pools[spec.kind].append(spec)
        return spec

    def __getitem__(self, kind: ModuleKind) -> list[ModuleSpec]:
        return list(self._pools[kind])

    def names(self, kind: ModuleKind) -> list[str]:
        return [s.name for s in self._pools[kind]]

    def get(self, kind: ModuleKind, name: str) -> ModuleSpec:
        for spec in self._pools[kind]:
            if spec.name == name:
                return spec
        raise UnknownModule(kind.slot, name)

    def __contains__(self, item: tuple[ModuleKind, str]) -> bool:
        kind, name = item
        return name in self.names(kind)

    def resolve(self, agent: AgentConfig) -> dict[ModuleKind, ModuleSpec]:
        return {k: self.get(k, agent.get(k)) for k in KINDS}

    def admits(self, agent: AgentConfig) -> bool:
        return all(agent.get(k) in self.names(k) for k in KINDS)

    def sizes(self) -> tuple[int, int, int, int]:
        return tuple(len(self._pools[k]) for k in KINDS)

    def combination_count(self) -> int:
        return combination_count(self)

    def configs(self) -> Iterator[AgentConfig]:
        """Every combination in enumeration order (planning varies slowest)."""
        for names in itertools.product(*(self.names(k) for k in KINDS)):
            yield AgentConfig(*names)

    def config_at(self, index: int) -> AgentConfig:
        """Mixed-radix decoding consistent with :meth:`configs` ordering."""
        names = []
        for kind in reversed(KINDS):
            pool = self.names(kind)
            index, r = divmod(index, len(pool))
            names.append(pool[r])
        return AgentConfig(*reversed(names))

    def copy(self) -> "ModulePools":
        return ModulePools({k: self[k] for k in KINDS})

    def to_dict(self) -> dict[str, list[dict[str, Any]]]:
        return {k.value: [s.to_dict() for s in self._pools[k]] for k in KINDS}

    @classmethod
    def from_dict(cls, doc: dict[str, list[dict[str, Any]]]) -> "ModulePools":
        pools = cls()
        for kind in KINDS:
            for item in doc.get(kind.value, []):
                pools.add(ModuleSpec.from_dict(item))
        return pools

    def check_sentinels(self) -> list[str]:
        problems = []
        for kind in KINDS:
            count = self.names(kind).count(SENTINEL)
            want = 0 if kind is ModuleKind.REASONING else 1
            if count != want:
                problems.append(f"{kind.value} pool has {count} sentinels, expected {want}")
        return problems


def combination_count(pools: ModulePools) -> int:
    sizes = pools.sizes()
    for kind, n in zip(KINDS, sizes):
        if n == 0:
            raise EmptyDesignDimension(kind.value)
    return math.prod(sizes)


@dataclass(frozen=True)
class ToolDef:
    name: str
    signature: str
    docstring: str
    impl_id: str


@dataclass(frozen=True)
class TaskSpec:
    id: str
    description: str
    tools: tuple[ToolDef, ...] = ()
    max_trials: int = 3
    max_steps_per_trial: int = 8

    def __post_init__(self):
        if self.max_trials < 1 or self.max_steps_per_trial < 1:
            raise ValueError("max_trials and max_steps_per_trial must be >= 1")
        names = [t.name for t in self.tools]
        if len(set(names)) != len(names):
            raise ValueError("tool names must be unique")


@dataclass(frozen=True)
class SubTaskPlan:
    subtasks: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= len(self.subtasks) <= MAX_SUBTASKS:
            raise ValueError(f"a plan needs 1..{MAX_SUBTASKS} subtasks, got {len(self.subtasks)}")
        if any(not s.strip() for s in self.subtasks):
            raise ValueError("empty subtask")


@dataclass(frozen=True)
class MemoryEntry:
    text: str
    step_index: int
    tag: str = "observation"


class MemoryStore:
    """Append-only memory database; a single writer, any number of readers."""

    def __init__(self):
        self._entries: list[MemoryEntry] = []
        self._lock = threading.Lock()

    def append(self, text: str, step_index: int, tag: str = "observation") -> MemoryEntry:
        with self._lock:
            if self._entries and step_index < self._entries[-1].step_index:
                raise ValueError("memory step_index must be nondecreasing")
            entry = MemoryEntry(text, step_index, tag)
            self._entries.append(entry)
            return entry

    @property
    def entries(self) -> tuple[MemoryEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


SOURCES = ("init", "evolution", "recombination", "baseline")


@dataclass(frozen=True)
class ExperienceRecord:
    agent: AgentConfig
    score: float
    token_cost: int = 0
    task_id: str = ""
    episode: int = 0
    source: str = "init"

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.episode < 0:
            raise ValueError("episode must be >= 0")
        if self.token_cost < 0:
            raise ValueError("token_cost must be >= 0")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = self.agent.to_dict()
        doc.update(
            score=self.score,
            token_cost=self.token_cost,
            task_id=self.task_id,
            episode=self.episode,
            source=self.source,
        )
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ExperienceRecord":
        if isinstance(doc["score"], bool) or not isinstance(doc["score"], (int, float)):
            raise ValueError("score must be a number")
        for key in ("token_cost", "episode"):
            if isinstance(doc[key], bool) or not isinstance(doc[key], int):
                raise ValueError(f"{key} must be an integer")
        return cls(
            agent=AgentConfig.from_dict(doc),
            score=float(doc["score"]),
            token_cost=doc["token_cost"],
            task_id=str(doc["task_id"]),
            episode=doc["episode"],
            source=str(doc["source"]),
        )


class ExperiencePool:
    """Append-only log of real evaluations.

    When bound to ``path`` every append is also persisted as one JSONL line.
    """

    def __init__(self, records: Iterable[ExperienceRecord] = (), path: str | Path | None = None):
        self._records: list[ExperienceRecord] = list(records)
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        self.skipped_lines: list[int] = []

    def append(self, record: ExperienceRecord) -> None:
        with self._lock:
            if self.path is not None:
                from .store import append_record

                append_record(self.path, record)
            self._records.append(record)

    @property
    def records(self) -> tuple[ExperienceRecord, ...]:
        return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ExperienceRecord]:
        return iter(self.records)

    def best_score(self, agent: AgentConfig) -> float | None:
        scores = [r.score for r in self._records if r.agent == agent]
        return max(scores) if scores else None


PHASES = ("plan", "reason", "tool", "memory_read", "memory_write", "env_act")


@dataclass
class TrajectoryStep:
    phase: str
    prompt_digest: str = ""
    completion_digest: str = ""
    action_text: str = ""
    feedback_text: str = ""
    tokens_in: int = 0
    tokens_out: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "phase": self.phase,
            "prompt_digest": self.prompt_digest,
            "completion_digest": self.completion_digest,
            "action_text": self.action_text,
            "feedback_text": self.feedback_text,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
        }


@dataclass
class Trajectory:
    task_id: str
    agent: AgentConfig
    steps: list[TrajectoryStep] = field(default_factory=list)
    final_score: float = 0.0
    trials: int = 0

    @property
    def tokens_in(self) -> int:
        return sum(s.tokens_in for s in self.steps)

    @property
    def tokens_out(self) -> int:
        return sum(s.tokens_out for s in self.steps)

    @property
    def token_cost(self) -> int:
        return self.tokens_in + self.tokens_out

    def phases(self) -> list[str]:
        return [s.phase for s in self.steps]


@dataclass(frozen=True)
class PredictedScore:
    value: float
    rationale: str
    predictor_id: str

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("predicted value outside [0, 1]")
