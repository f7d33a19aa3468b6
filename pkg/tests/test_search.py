import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentgrid.core import (
    KINDS,
    AgentConfig,
    ExperiencePool,
    ExperienceRecord,
    ModuleKind,
    ModulePools,
    TaskSpec,
)
from agentgrid.envs import OracleLandscape, get_task, synthetic_pools
from agentgrid.errors import ProviderUnavailable, SearchConfigError
from agentgrid.llm import MockBackend
from agentgrid.modules import load_preset, seed_pools
from agentgrid.search import (
    OperatorStats,
    SearchParams,
    evolve,
    knn_predict,
    mutate_spec,
    predict,
    random_config,
    recombine,
    run_search,
)
from agentgrid.workflow import LandscapeEvaluator

from conftest import Recorder

TASK = TaskSpec("t", "find the best agent")


def fenced(obj) -> str:
    return "Here you go:\n```json\n" + json.dumps(obj) + "\n```"


def slots(p, r, t, m):
    return {"planning": p, "reasoning": r, "tooluse": t, "memory": m}


def rec(agent, score, task_id="t"):
    return ExperienceRecord(agent, score, task_id=task_id)


class TestRecombine:
    def test_only_legal_proposal_flips_to_none(self):
        pools = synthetic_pools((2, 1, 2, 2))
        parent = AgentConfig(*(pools.names(k)[-1] for k in KINDS))
        stats = OperatorStats()
        out = recombine(parent, TASK, 1, pools, ExperiencePool(), MockBackend(), random.Random(0), stats)
        assert len(out) == 1 and out[0] != parent
        flipped = [k for k in KINDS if out[0].get(k) != parent.get(k)]
        assert flipped and all(out[0].get(k) == "none" for k in flipped)
        assert stats.recombination_fallbacks == 1

    def test_unknown_member_triggers_reask(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "none")
        llm = Recorder([fenced([slots("IO", "HTSS", "none", "none")]),
                        fenced([slots("DEPS", "CoT", "none", "none")])])
        out = recombine(parent, TASK, 1, pools, ExperiencePool(), llm)
        assert out == [AgentConfig("DEPS", "CoT", "none", "none")]
        assert llm.calls == 2
        assert "HTSS" in llm.requests[1].prompt

    def test_known_good_combination_verbatim(self):
        pools = load_preset("alfworld-best").install(seed_pools())
        parent = AgentConfig("IO", "CoT", "none", "none")
        llm = Recorder([fenced([slots("TD", "SF-ToT", "none", "generative_agents")])])
        out = recombine(parent, TASK, 1, pools, ExperiencePool(), llm)
        assert out == [AgentConfig("TD", "SF-ToT", "none", "generative_agents")]
        assert llm.calls == 1

    def test_prompt_sections(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "none")
        exp = [rec(AgentConfig("IO", "ToT", "none", "none"), i / 30) for i in range(30)]
        llm = Recorder([""])
        recombine(parent, TASK, 2, pools, exp, llm)
        prompt = llm.requests[0].prompt
        assert TASK.description in prompt and json.dumps(parent.to_dict()) in prompt
        assert all(name in prompt for name in pools.names(ModuleKind.MEMORY))
        assert prompt.count("-> ") == 20  # top-20 experience cutoff

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 1000), st.integers(1, 6))
    def test_distinct_members_never_parent(self, seed, n):
        pools = seed_pools()
        rng = random.Random(seed)
        parent = random_config(pools, rng)
        before = pools.to_dict()
        out = recombine(parent, TASK, n, pools, ExperiencePool(), MockBackend(), rng)
        assert len(out) == n == len(set(out))
        assert parent not in out and all(pools.admits(c) for c in out)
        assert pools.to_dict() == before


def doc(name, kind="Reasoning", strategy="sample_and_vote", **params):
    return {"name": name, "kind": kind, "strategy": strategy, "params": params,
            "prompt_template": "Sub-task: {subtask}", "description": "evolved"}


class TestEvolve:
    def test_single_slot_child(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "dilu")
        llm = Recorder([fenced([doc("CoT-SC-5", sample_count=5)])])
        specs, children = evolve(parent, TASK, 1, pools, ExperiencePool(), llm)
        assert len(pools.names(ModuleKind.REASONING)) == 8
        assert specs[0].origin == "evolved" and specs[0].parent_name == "CoT"
        assert children == [parent.replace(ModuleKind.REASONING, "CoT-SC-5")]

    def test_out_of_bounds_falls_back(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "dilu")
        llm = Recorder([fenced([doc("Big", sample_count=99)])])
        stats = OperatorStats()
        specs, children = evolve(parent, TASK, 1, pools, ExperiencePool(), llm, random.Random(0), stats)
        assert llm.calls == 2 and stats.evolution_fallbacks == 1
        assert specs[0].origin == "evolved" and specs[0].parent_name in parent.slots()
        assert children[0].hamming(parent) == 1

    def test_three_kinds(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "dilu")
        docs = [
            {**doc("Plan2", "Planning", "plan_with_feedback"), "prompt_template": "{task} {feedback}"},
            doc("Vote7", sample_count=7),
            {**doc("Mem2", "Memory", "memory_recency", retrieval_k=2), "prompt_template": "{observation}"},
        ]
        specs, children = evolve(parent, TASK, 3, pools, ExperiencePool(), Recorder([fenced(docs)]))
        for spec, child in zip(specs, children):
            assert child.hamming(parent) == 1 and child.get(spec.kind) == spec.name
        assert [s.kind for s in specs] == [ModuleKind.PLANNING, ModuleKind.REASONING, ModuleKind.MEMORY]

    def test_collision_renamed(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "dilu")
        specs, _ = evolve(parent, TASK, 2, pools, ExperiencePool(),
                          Recorder([fenced([doc("CoT-SC"), doc("CoT-SC")])]))
        assert [s.name for s in specs] == ["CoT-SC-v2", "CoT-SC-v3"]

    def test_flat_params_accepted(self, pools):
        parent = AgentConfig("IO", "CoT", "none", "dilu")
        flat = {k: v for k, v in doc("Flat").items() if k != "params"} | {"sample_count": 4}
        specs, _ = evolve(parent, TASK, 1, pools, ExperiencePool(), Recorder([fenced([flat])]))
        assert specs[0].param("sample_count") == 4

    def test_prompt_has_full_parent_specs(self, pools):
        parent = AgentConfig("DEPS", "ToT", "Toolformer", "dilu")
        llm = Recorder([""])
        evolve(parent, TASK, 1, pools, ExperiencePool(), llm)
        prompt = llm.requests[0].prompt
        for kind in KINDS:
            assert json.dumps(pools.get(kind, parent.get(kind)).to_dict(), ensure_ascii=False) in prompt

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_mutation_stays_in_bounds(self, seed):
        pools = seed_pools()
        rng = random.Random(seed)
        base = rng.choice(pools[ModuleKind.REASONING])
        spec = mutate_spec(base, pools, rng)
        pools.add(spec)  # validates
        changed = [k for k in set(spec.params) | set(base.params) if spec.param(k) != base.param(k)]
        assert len(changed) == 1


class TestPredict:
    def test_knn_example(self):
        cand = AgentConfig("IO", "CoT", "none", "none")
        exp = [rec(AgentConfig("IO", "CoT", "none", "dilu"), 0.6),
               rec(AgentConfig("IO", "ToT", "Toolformer", "dilu"), 0.2)]
        assert knn_predict(cand, exp).value == pytest.approx(0.4667, abs=5e-5)

    def test_exact_match(self):
        cand = AgentConfig("IO", "CoT", "none", "none")
        assert knn_predict(cand, [rec(cand, 0.9)]).value == pytest.approx(0.9)

    def test_empty(self):
        p = knn_predict(AgentConfig("IO", "CoT", "none", "none"), [])
        assert (p.value, p.rationale) == (0.5, "no experience")

    def test_llm_parse_and_clamp(self, pools):
        cand = AgentConfig("IO", "CoT", "none", "none")
        assert predict(cand, TASK, pools, [], Recorder(["good. Score: 0.73"]), "llm").value == 0.73
        assert predict(cand, TASK, pools, [], Recorder(["Score: 7"]), "llm").value == 1.0

    def test_llm_fallback(self, pools):
        cand = AgentConfig("IO", "CoT", "none", "none")
        llm = Recorder(["no idea"])
        p = predict(cand, TASK, pools, [rec(cand, 0.9)], llm, "llm")
        assert llm.calls == 2 and p.predictor_id == "knn" and "knn fallback" in p.rationale
        assert p.value == pytest.approx(0.9)

    def test_llm_context_cap(self, pools):
        cand = AgentConfig("IO", "CoT", "none", "none")
        llm = Recorder(["Score: 0.5"])
        predict(cand, TASK, pools, [rec(cand, 0.5)] * 40, llm, "llm")
        assert llm.requests[0].prompt.count("-> 0.500") == 30

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 6), st.integers(0, 4), st.integers(0, 5),
                              st.floats(0, 1)), max_size=20),
           st.tuples(st.integers(0, 4), st.integers(0, 6), st.integers(0, 4), st.integers(0, 5)))
    def test_range(self, rows, cand):
        pools = seed_pools()
        to_agent = lambda idx: AgentConfig(*(pools.names(k)[i] for k, i in zip(KINDS, idx)))  # noqa: E731
        exp = [rec(to_agent(r[:4]), r[4]) for r in rows]
        value = knn_predict(to_agent(cand), exp).value
        assert 0.0 <= value <= 1.0
        if exp:
            assert min(r.score for r in exp) - 1e-12 <= value <= max(r.score for r in exp) + 1e-12


def optimal_start_landscape(seed: int):
    """Noise-free landscape whose seeded initial configuration is the unique optimum."""
    pools = synthetic_pools((3, 3, 3, 3))
    start = random_config(pools, random.Random(seed))
    main = [[0.15 if n == start.get(k) else 0.0 for n in pools.names(k)] for k in KINDS]
    land = OracleLandscape((3, 3, 3, 3), main, {}, noise_sigma=0.0, seed=seed, base=0.2, evolve_sigma=0.0)
    return land, pools, start


class TestRunSearch:
    def run(self, land, pools=None, llm=None, **kw):
        params = SearchParams(**{"max_episodes": 6, "population": 3, **kw})
        exp = ExperiencePool()
        pools = pools or land.pools()
        result = run_search(params, TASK, LandscapeEvaluator(land, "t"), pools, exp, llm or MockBackend())
        return result, exp, pools

    def test_no_operators(self):
        with pytest.raises(SearchConfigError, match="no operators enabled"):
            SearchParams(disable_evolution=True, disable_recombination=True).validate()

    @pytest.mark.parametrize("bad", [dict(predictor_screen_k=5, population=4), dict(stale_limit=0),
                                     dict(predictor="oracle"), dict(stale_unit="week")])
    def test_param_validation(self, bad):
        with pytest.raises(SearchConfigError):
            SearchParams(**bad).validate()

    @pytest.mark.parametrize("seed", range(5))
    def test_stops_after_stale_limit(self, seed):
        land, pools, start = optimal_start_landscape(seed)
        result, _, _ = self.run(land, pools, seed=seed, max_episodes=50)
        assert result.history[0].best_so_far == pytest.approx(0.8)
        assert len(result.history) - 1 == 5
        assert result.best_agent == start

    def test_episode_unit(self):
        land, pools, _ = optimal_start_landscape(0)
        result, _, _ = self.run(land, pools, max_episodes=50, stale_unit="episode", stale_limit=3)
        assert len(result.history) - 1 == 6

    def test_one_record_per_real_eval(self):
        land = get_task("landscape-small").landscape()
        result, exp, pools = self.run(land)
        assert len(exp) == result.real_evals == result.history[-1].real_evals_cum
        assert [r.agent for r in exp] == result.evaluated
        assert {r.source for r in exp} <= {"init", "evolution", "recombination"}

    def test_evaluated_candidates_are_members(self):
        land = get_task("landscape-small").landscape()
        result, _, pools = self.run(land)
        assert all(pools.admits(a) for a in result.evaluated)

    def test_recombination_only_keeps_pools(self):
        land = get_task("landscape-small").landscape()
        pools = land.pools()
        before = pools.to_dict()
        self.run(land, pools, disable_evolution=True)
        assert pools.to_dict() == before

    def test_evolution_grows_pools(self):
        land = get_task("landscape-small").landscape()
        pools = land.pools()
        size = sum(pools.sizes())
        result, _, _ = self.run(land, pools, disable_recombination=True)
        episodes = sum(1 for r in result.history if r.phase == "evolution")
        assert sum(pools.sizes()) == size + 3 * episodes

    def test_screening_budget(self):
        land = get_task("landscape-small").landscape()
        result, _, _ = self.run(land, predictor_screen_k=1)
        for prev, row in zip(result.history, result.history[1:]):
            assert row.real_evals_cum - prev.real_evals_cum <= 1

    def test_deterministic(self):
        land = get_task("landscape-1050").landscape()
        a, ea, _ = self.run(land, seed=3)
        b, eb, _ = self.run(land, seed=3)
        assert a.trajectory_csv() == b.trajectory_csv() and a.metadata() == b.metadata()
        assert ea.records == eb.records

    def test_operator_failure_does_not_crash(self):
        class Down:
            def complete(self, req):
                raise ProviderUnavailable("down")

        land = get_task("landscape-small").landscape()
        result, _, _ = self.run(land, llm=Down())
        assert result.stats.operator_failures > 0 and result.real_evals > 1

    def test_llm_predictor_with_mock(self):
        land = get_task("landscape-small").landscape()
        result, _, _ = self.run(land, predictor="llm")
        assert result.stats.predictor_fallbacks > 0

    def test_tokens_accumulate(self):
        land = get_task("landscape-small").landscape()
        result, _, _ = self.run(land, llm=MockBackend(default="nothing useful"))
        tokens = [r.tokens_cum for r in result.history]
        assert tokens == sorted(tokens) and tokens[-1] == result.tokens > 0

    def test_experience_from_other_tasks_ignored(self):
        land = get_task("landscape-small").landscape()
        pools = land.pools()
        exp = ExperiencePool([rec(AgentConfig(*(pools.names(k)[0] for k in KINDS)), 1.0, "other")])
        result = run_search(SearchParams(max_episodes=2, seed=0), TASK, LandscapeEvaluator(land), pools, exp,
                            MockBackend())
        assert result.best_score < 1.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.booleans(), st.booleans(), st.integers(1, 4))
    def test_elitism(self, seed, no_evo, no_rec, n):
        if no_evo and no_rec:
            no_rec = False
        land = get_task("landscape-interact").landscape()
        result, _, _ = self.run(land, seed=seed, disable_evolution=no_evo, disable_recombination=no_rec,
                                population=n, predictor_screen_k=1)
        best = [r.best_so_far for r in result.history]
        assert all(b >= a for a, b in zip(best, best[1:]))
        assert best[-1] == result.best_score


def test_result_files(tmp_path):
    land = get_task("landscape-small").landscape()
    result = run_search(SearchParams(max_episodes=2), TASK, LandscapeEvaluator(land), land.pools(),
                        ExperiencePool(), MockBackend())
    result.save(tmp_path)
    meta = json.loads((tmp_path / "result.json").read_text())
    assert meta["best_score"] == result.best_score and meta["searcher"] == "agentsearch"
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "iteration,phase,best_so_far,real_evals_cum,tokens_cum"
    assert len(lines) == len(result.history) + 1
    assert AgentConfig.from_dict(json.loads((tmp_path / "best_agent.json").read_text())) == result.best_agent


def test_pools_never_shared_between_runs():
    land = get_task("landscape-small").landscape()
    base = land.pools()
    copy = base.copy()
    run_search(SearchParams(max_episodes=2), TASK, LandscapeEvaluator(land), copy, ExperiencePool(), MockBackend())
    assert isinstance(base, ModulePools) and sum(base.sizes()) < sum(copy.sizes())
