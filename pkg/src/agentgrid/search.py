"""Evolutionary module search with surrogate screening.

Each episode runs two phases on the current incumbent:

* evolution: an LLM writes new module specs; each one replaces the matching
  slot of the incumbent, giving one child per new module;
* recombination: an LLM proposes new combinations of existing pool members.

All offspring are scored by a performance predictor, only the top
``predictor_screen_k`` unseen ones are really evaluated, and the best of
{incumbent} + evaluated offspring becomes the next incumbent. The incumbent
always competes, so best-so-far never decreases.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    KINDS,
    PARAM_BOUNDS,
    PLACEHOLDERS,
    STRATEGY_KINDS,
    STRATEGY_PARAMS,
    AgentConfig,
    ExperiencePool,
    ExperienceRecord,
    ModuleKind,
    ModulePools,
    ModuleSpec,
    PredictedScore,
    StrategyKind,
    TaskSpec,
    validate_module_spec,
)
from .errors import AgentGridError, InvalidSpec, SearchConfigError
from .llm import Metered, Provider, ask
from .store import top_k
from .workflow import Evaluator

log = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"
EXPERIENCE_CONTEXT = 20
PREDICTOR_CONTEXT = 30
_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)
_MUTANT_SUFFIX = re.compile(r"(-m\d+|-v\d+)+$")
_NUMBER = re.compile(r"(?<![\w.])(\d*\.\d+|\d+)(?![\w.])")


def load_template(name: str) -> str:
    return (TEMPLATE_DIR / f"{name}.txt").read_text(encoding="utf-8")


@dataclass
class OperatorStats:
    recombination_fallbacks: int = 0
    evolution_fallbacks: int = 0
    predictor_fallbacks: int = 0
    reasks: int = 0
    operator_failures: int = 0


# -- prompt sections --------------------------------------------------------

def describe_pools(pools: ModulePools) -> str:
    lines = []
    for kind in KINDS:
        lines.append(f"{kind.value} ({kind.slot}):")
        for spec in pools[kind]:
            lines.append(f"  - {spec.name} [{spec.strategy.value}]: {spec.description}")
    return "\n".join(lines)


def describe_experience(records: Sequence[ExperienceRecord], k: int = EXPERIENCE_CONTEXT) -> str:
    best = top_k(list(records), k)
    if not best:
        return "(none yet)"
    return "\n".join(f"- {json.dumps(r.agent.to_dict())} -> {r.score:.3f}" for r in best)


def describe_agent(agent: AgentConfig, pools: ModulePools, full: bool = False) -> str:
    if not full:
        return json.dumps(agent.to_dict())
    specs = pools.resolve(agent)
    return "\n".join(
        f"{kind.slot}: {json.dumps(specs[kind].to_dict(), ensure_ascii=False)}" for kind in KINDS
    )


def describe_schema() -> str:
    lines = []
    for strategy in StrategyKind:
        if strategy is StrategyKind.NONE:
            continue
        kinds = ", ".join(sorted(k.value for k in STRATEGY_KINDS[strategy]))
        knobs = ", ".join(
            f"{p} in [{PARAM_BOUNDS[p][0]}, {PARAM_BOUNDS[p][1]}]" for p in sorted(STRATEGY_PARAMS[strategy])
        )
        lines.append(f"- {strategy.value} ({kinds}): {knobs or 'no knobs'}")
    for kind in KINDS:
        fields = ", ".join("{" + f + "}" for f in sorted(PLACEHOLDERS[kind]))
        lines.append(f"- {kind.value} templates may use only: {fields}")
    return "\n".join(lines)


def _json_blocks(text: str) -> list:
    """Every JSON value found in fenced blocks (or the bare text), lists flattened."""
    chunks = _FENCE.findall(text) or [text]
    out = []
    for chunk in chunks:
        try:
            value = json.loads(chunk)
        except ValueError:
            continue
        if isinstance(value, dict):
            value = value.get("agents") or value.get("modules") or [value]
        if isinstance(value, list):
            out.extend(value)
    return out


# -- fallbacks --------------------------------------------------------------

def random_neighbors(parent: AgentConfig, pools: ModulePools, count: int, rng: random.Random,
                     exclude: Iterable[AgentConfig] = ()) -> list[AgentConfig]:
    """Seeded random valid combinations that differ from ``parent`` in 1-2 slots.

    Falls back to uniform sampling over all remaining combinations when the
    neighbourhood is exhausted.
    """
    taken = set(exclude) | {parent}
    mutable = [k for k in KINDS if len(pools.names(k)) > 1]
    out: list[AgentConfig] = []
    if not mutable:
        return out
    for _ in range(50 * count):
        if len(out) == count:
            return out
        slots = rng.sample(mutable, min(len(mutable), rng.choice((1, 2))))
        child = parent
        for kind in slots:
            options = [n for n in pools.names(kind) if n != parent.get(kind)]
            child = child.replace(kind, rng.choice(options))
        if child not in taken:
            taken.add(child)
            out.append(child)
    rest = [c for c in pools.configs() if c not in taken]
    rng.shuffle(rest)
    return out + rest[: count - len(out)]


def _unique_name(base: str, kind: ModuleKind, pools: ModulePools, extra: Iterable[str] = ()) -> str:
    taken = set(pools.names(kind)) | set(extra)
    if base not in taken:
        return base
    k = 2
    while f"{base}-v{k}" in taken:
        k += 1
    return f"{base}-v{k}"


def mutate_spec(base: ModuleSpec, pools: ModulePools, rng: random.Random) -> ModuleSpec:
    """Copy of ``base`` with one knob nudged inside its bounds."""
    knobs = sorted(STRATEGY_PARAMS[base.strategy])
    if not knobs:
        raise ValueError(f"{base.name} has no knobs to perturb")
    key = rng.choice(knobs)
    low, high, typ, _ = PARAM_BOUNDS[key]
    current = base.param(key)
    if typ is int:
        options = [v for v in (current - 1, current + 1) if low <= v <= high]
        value = rng.choice(options)
    else:
        step = rng.choice((-0.2, -0.1, 0.1, 0.2))
        value = round(min(high, max(low, current + step)), 3)
        if value == current:
            value = round(min(high, max(low, current - step)), 3)
    params = dict(base.params)
    params[key] = value
    root = _MUTANT_SUFFIX.sub("", base.name) or base.name
    taken = set(pools.names(base.kind))
    k = 1
    while f"{root}-m{k}" in taken:
        k += 1
    name = f"{root}-m{k}"
    return ModuleSpec(
        name=name,
        kind=base.kind,
        strategy=base.strategy,
        params=params,
        prompt_template=base.prompt_template,
        description=f"{base.description} ({key} {current} -> {value})"[:600],
        origin="evolved",
        parent_name=base.name,
    )


# -- operators --------------------------------------------------------------

def recombine(parent: AgentConfig, task: TaskSpec, n: int, pools: ModulePools,
              experience: ExperiencePool | Sequence[ExperienceRecord], llm: Provider,
              rng: random.Random | None = None, stats: OperatorStats | None = None) -> list[AgentConfig]:
    """Propose ``n`` distinct new combinations of existing modules."""
    rng = rng or random.Random(0)
    stats = stats if stats is not None else OperatorStats()
    pools.resolve(parent)
    prompt = load_template("recombination").format(
        task=task.description,
        pools=describe_pools(pools),
        experience=describe_experience(list(experience)),
        parent=describe_agent(parent, pools),
        n=n,
    )
    accepted: list[AgentConfig] = []
    problems: list[str] = []

    def take(text: str):
        for item in _json_blocks(text):
            if len(accepted) == n:
                return
            try:
                cand = AgentConfig.from_dict(item)
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"malformed proposal {item!r}: {exc}")
                continue
            if cand == parent:
                problems.append(f"{cand.to_dict()} is the current agent")
            elif not pools.admits(cand):
                missing = [f"{k.slot}={cand.get(k)!r}" for k in KINDS if cand.get(k) not in pools.names(k)]
                problems.append(f"unknown modules {', '.join(missing)}")
            elif cand in accepted:
                problems.append(f"duplicate proposal {cand.to_dict()}")
            else:
                accepted.append(cand)

    take(ask(llm, prompt).text)
    if len(accepted) < n:
        stats.reasks += 1
        note = "; ".join(problems[:8]) or "no parseable proposals"
        take(ask(
            llm,
            f"{prompt}\n\nYour previous answer had problems: {note}. "
            f"Give {n - len(accepted)} more valid, distinct proposals in the JSON block.",
        ).text)
    if len(accepted) < n:
        fill = random_neighbors(parent, pools, n - len(accepted), rng, exclude=accepted)
        stats.recombination_fallbacks += len(fill)
        accepted.extend(fill)
    return accepted


def _spec_from_doc(doc, parent_specs: dict[ModuleKind, ModuleSpec], pools: ModulePools,
                   pending: dict[ModuleKind, list[str]]) -> ModuleSpec:
    if not isinstance(doc, dict):
        raise InvalidSpec([f"not a document: {doc!r}"])
    doc = dict(doc)
    doc["origin"] = "evolved"
    # Knobs given at top level are folded into params.
    params = dict(doc.get("params") or {})
    for key in list(doc):
        if key in PARAM_BOUNDS:
            params.setdefault(key, doc.pop(key))
    doc["params"] = params
    try:
        kind = ModuleKind(doc.get("kind"))
    except ValueError:
        raise InvalidSpec([f"unknown kind {doc.get('kind')!r}"]) from None
    if doc.get("parent_name") not in pools.names(kind):
        doc["parent_name"] = parent_specs[kind].name
    doc["name"] = _unique_name(str(doc.get("name") or "").strip() or "evolved", kind, pools, pending[kind])
    spec = ModuleSpec.from_dict(doc)
    validate_module_spec(spec, pools).raise_for_violations()
    return spec


def evolve(parent: AgentConfig, task: TaskSpec, n: int, pools: ModulePools,
           experience: ExperiencePool | Sequence[ExperienceRecord], llm: Provider,
           rng: random.Random | None = None,
           stats: OperatorStats | None = None) -> tuple[list[ModuleSpec], list[AgentConfig]]:
    """Write ``n`` new modules into ``pools`` and return one single-slot child per module."""
    rng = rng or random.Random(0)
    stats = stats if stats is not None else OperatorStats()
    parent_specs = pools.resolve(parent)
    prompt = load_template("evolution").format(
        task=task.description,
        parent=describe_agent(parent, pools, full=True),
        pools=describe_pools(pools),
        experience=describe_experience(list(experience)),
        schema=describe_schema(),
        n=n,
    )
    new_specs: list[ModuleSpec] = []
    problems: list[str] = []

    def take(text: str):
        for doc in _json_blocks(text):
            if len(new_specs) == n:
                return
            pending = {k: [] for k in KINDS}
            try:
                spec = _spec_from_doc(doc, parent_specs, pools, pending)
            except InvalidSpec as exc:
                problems.extend(exc.violations)
                continue
            pools.add(spec)
            new_specs.append(spec)

    take(ask(llm, prompt).text)
    if len(new_specs) < n:
        stats.reasks += 1
        note = "; ".join(problems[:8]) or "no parseable module documents"
        take(ask(
            llm,
            f"{prompt}\n\nYour previous answer had problems: {note}. "
            f"Give {n - len(new_specs)} more valid module documents in the JSON block.",
        ).text)
    mutable = [s for s in parent_specs.values() if STRATEGY_PARAMS[s.strategy]]
    while len(new_specs) < n:
        spec = mutate_spec(rng.choice(mutable), pools, rng)
        pools.add(spec)
        new_specs.append(spec)
        stats.evolution_fallbacks += 1
    children = [parent.replace(spec.kind, spec.name) for spec in new_specs]
    return new_specs, children


def knn_predict(candidate: AgentConfig, records: Sequence[ExperienceRecord]) -> PredictedScore:
    """Inverse-Hamming weighted mean of recorded scores: w = 1 / (1 + differing slots)."""
    if not records:
        return PredictedScore(0.5, "no experience", "knn")
    num = den = 0.0
    for r in records:
        w = 1.0 / (1.0 + candidate.hamming(r.agent))
        num += w * r.score
        den += w
    value = min(1.0, max(0.0, num / den))
    return PredictedScore(value, f"distance-weighted mean over {len(records)} records", "knn")


def predict(candidate: AgentConfig, task: TaskSpec, pools: ModulePools,
            experience: ExperiencePool | Sequence[ExperienceRecord], llm: Provider | None = None,
            method: str = "knn", stats: OperatorStats | None = None) -> PredictedScore:
    pools.resolve(candidate)
    records = list(experience)
    if method == "knn":
        return knn_predict(candidate, records)
    if method != "llm":
        raise SearchConfigError(f"unknown predictor {method!r}")
    if llm is None:
        raise SearchConfigError("llm predictor needs a provider")

    examples = records[-PREDICTOR_CONTEXT:]
    prompt = load_template("predictor").format(
        task=task.description,
        candidate=describe_agent(candidate, pools, full=True),
        experience="\n".join(f"- {json.dumps(r.agent.to_dict())} -> {r.score:.3f}" for r in examples)
        or "(none yet)",
    )
    for attempt in range(2):
        text = ask(llm, prompt if attempt == 0 else prompt + "\n\nEnd with 'Score: <number between 0 and 1>'.").text
        m = re.search(r"score\s*[:=]\s*(\d*\.\d+|\d+)", text, re.IGNORECASE)
        hits = [m.group(1)] if m else _NUMBER.findall(text)
        if hits:
            value = min(1.0, max(0.0, float(hits[-1] if not m else hits[0])))
            return PredictedScore(value, text.strip()[:500], "llm")
        if stats is not None and attempt == 0:
            stats.reasks += 1
    if stats is not None:
        stats.predictor_fallbacks += 1
    fallback = knn_predict(candidate, records)
    return PredictedScore(fallback.value, f"llm output unparseable; knn fallback: {fallback.rationale}", "knn")


# -- search loop --------------------------------------------------------------

@dataclass
class SearchParams:
    max_episodes: int = 15
    population: int = 4
    stale_limit: int = 5
    predictor: str = "knn"
    predictor_screen_k: int = 2
    disable_evolution: bool = False
    disable_recombination: bool = False
    seed: int = 0
    stale_unit: str = "phase"

    def validate(self) -> None:
        if self.disable_evolution and self.disable_recombination:
            raise SearchConfigError("no operators enabled")
        if self.max_episodes < 1 or self.population < 1 or self.stale_limit < 1:
            raise SearchConfigError("max_episodes, population and stale_limit must be positive")
        if not 1 <= self.predictor_screen_k <= self.population:
            raise SearchConfigError("predictor_screen_k must lie in [1, population]")
        if self.predictor not in ("knn", "llm"):
            raise SearchConfigError(f"unknown predictor {self.predictor!r}")
        if self.stale_unit not in ("phase", "episode"):
            raise SearchConfigError(f"unknown stale unit {self.stale_unit!r}")


@dataclass
class IterationRow:
    iteration: int
    phase: str
    best_so_far: float
    real_evals_cum: int
    tokens_cum: int


CSV_FIELDS = ("iteration", "phase", "best_so_far", "real_evals_cum", "tokens_cum")


@dataclass
class SearchResult:
    searcher: str
    task_id: str
    best_agent: AgentConfig
    best_score: float
    history: list[IterationRow] = field(default_factory=list)
    real_evals: int = 0
    tokens: int = 0
    stats: OperatorStats = field(default_factory=OperatorStats)
    params: dict = field(default_factory=dict)
    evaluated: list[AgentConfig] = field(default_factory=list)

    def evals_to_reach(self, target: float) -> int | None:
        """Real evaluations spent when best-so-far first reached ``target``."""
        for row in self.history:
            if row.best_so_far >= target:
                return row.real_evals_cum
        return None

    def best_within(self, evals: int) -> float:
        best = 0.0
        for row in self.history:
            if row.real_evals_cum <= evals:
                best = max(best, row.best_so_far)
        return best

    def metadata(self) -> dict:
        return {
            "searcher": self.searcher,
            "task_id": self.task_id,
            "best_agent": self.best_agent.to_dict(),
            "best_score": self.best_score,
            "real_evals": self.real_evals,
            "tokens": self.tokens,
            "iterations": len(self.history),
            "stats": asdict(self.stats),
            "params": self.params,
        }

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in self.history:
            writer.writerow([row.iteration, row.phase, repr(float(row.best_so_far)),
                             row.real_evals_cum, row.tokens_cum])
        return buf.getvalue()

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(json.dumps(self.metadata(), indent=2) + "\n", encoding="utf-8")
        (out / "trajectory.csv").write_text(self.trajectory_csv(), encoding="utf-8")
        (out / "best_agent.json").write_text(
            json.dumps(self.best_agent.to_dict(), indent=2) + "\n", encoding="utf-8"
        )


def random_config(pools: ModulePools, rng: random.Random) -> AgentConfig:
    return AgentConfig(*(rng.choice(pools.names(k)) for k in KINDS))


def run_search(params: SearchParams, task: TaskSpec, evaluator: Evaluator, pools: ModulePools,
               experience: ExperiencePool, llm: Provider, initial: AgentConfig | None = None,
               seed_agents: Sequence[AgentConfig] = ()) -> SearchResult:
    """Alternate evolution and recombination phases until the episode budget or
    ``stale_limit`` phases without improvement."""
    params.validate()
    rng = random.Random(params.seed)
    meter = Metered(llm)
    stats = OperatorStats()
    eval_tokens = 0
    evaluated: list[AgentConfig] = []
    known: dict[AgentConfig, float] = {}
    for r in experience:
        if r.task_id == task.id:
            known[r.agent] = max(r.score, known.get(r.agent, 0.0))

    def history_records() -> list[ExperienceRecord]:
        return [r for r in experience if r.task_id == task.id]

    def real_eval(agent: AgentConfig, source: str, episode: int) -> float:
        nonlocal eval_tokens
        if not pools.admits(agent):
            raise AgentGridError(f"candidate {agent.to_dict()} is not in the pools")
        ev = evaluator(agent, pools)
        experience.append(ExperienceRecord(agent, ev.score, ev.token_cost, task.id, episode, source))
        eval_tokens += ev.token_cost
        evaluated.append(agent)
        known[agent] = max(ev.score, known.get(agent, 0.0))
        return ev.score

    history: list[IterationRow] = []

    def log_row(iteration: int, phase: str, best: float):
        history.append(IterationRow(iteration, phase, best, len(evaluated), meter.total_tokens + eval_tokens))

    for agent in seed_agents:
        if agent not in known:
            real_eval(agent, "init", 0)
    incumbent = initial or random_config(pools, rng)
    best = known[incumbent] if incumbent in known else real_eval(incumbent, "init", 0)
    for agent, score in known.items():
        if score > best:
            incumbent, best = agent, score
    log_row(0, "init", best)

    phases = []
    if not params.disable_evolution:
        phases.append("evolution")
    if not params.disable_recombination:
        phases.append("recombination")

    stale = 0
    for episode in range(1, params.max_episodes + 1):
        improved_in_episode = False
        stop = False
        for phase in phases:
            try:
                if phase == "evolution":
                    _, children = evolve(incumbent, task, params.population, pools,
                                         history_records(), meter, rng, stats)
                else:
                    children = recombine(incumbent, task, params.population, pools,
                                         history_records(), meter, rng, stats)
            except AgentGridError as exc:
                log.warning("%s operator failed (%s); using random fallback candidates", phase, exc)
                stats.operator_failures += 1
                children = random_neighbors(incumbent, pools, params.population, rng)
                if phase == "evolution":
                    stats.evolution_fallbacks += len(children)
                else:
                    stats.recombination_fallbacks += len(children)

            records = history_records()
            scored = []
            for index, child in enumerate(children):
                pred = predict(child, task, pools, records, meter, params.predictor, stats)
                scored.append((pred.value, index, child))
            unseen = [item for item in scored if item[2] not in known]
            unseen.sort(key=lambda item: (-item[0], item[1]))
            for _, _, child in sorted(unseen[: params.predictor_screen_k], key=lambda item: item[1]):
                real_eval(child, phase, episode)

            winner, winner_score = incumbent, best
            for child in children:
                if known.get(child, -1.0) > winner_score:
                    winner, winner_score = child, known[child]
            improved = winner_score > best
            incumbent, best = winner, winner_score
            improved_in_episode |= improved
            log_row(episode, phase, best)

            if params.stale_unit == "phase":
                stale = 0 if improved else stale + 1
                if stale >= params.stale_limit:
                    stop = True
                    break
        if params.stale_unit == "episode" and not stop:
            stale = 0 if improved_in_episode else stale + 1
            stop = stale >= params.stale_limit
        if stop:
            break

    return SearchResult(
        searcher="agentsearch",
        task_id=task.id,
        best_agent=incumbent,
        best_score=best,
        history=history,
        real_evals=len(evaluated),
        tokens=meter.total_tokens + eval_tokens,
        stats=stats,
        params=asdict(params),
        evaluated=evaluated,
    )
