import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentgrid.core import KINDS, AgentConfig
from agentgrid.envs import get_task
from agentgrid.envs.scripts import do_nothing, lockbox_solver, toolchain_solver
from agentgrid.errors import UnknownModule
from agentgrid.llm import Metered, MockBackend, ReplayCache
from agentgrid.modules import load_preset, seed_pools
from agentgrid.workflow import (
    EpisodeEvaluator,
    TrajectoryDrift,
    read_trajectory,
    run_episode,
    verify_replay,
    write_trajectory,
)


def lockbox():
    return get_task("lockbox-3").env_factory(0)


def toolchain():
    return get_task("toolchain").env_factory(0)


def preset(name):
    p = load_preset(name)
    return p.agent, p.install(seed_pools())


class TestLockboxEpisodes:
    def test_scripted_alfworld_best_solves_in_one_trial(self):
        agent, pools = preset("presets/alfworld-best")
        env = lockbox()
        traj = run_episode(agent, pools, env.task, env, lockbox_solver())
        assert traj.final_score == 1.0
        assert traj.trials == 1

    def test_do_nothing_fails_all_trials(self):
        agent, pools = preset("voyager")
        env = lockbox()
        traj = run_episode(agent, pools, env.task, env, do_nothing())
        assert traj.final_score == 0.0
        assert traj.trials == env.task.max_trials

    def test_sentinel_elision(self, pools):
        env = lockbox()
        traj = run_episode(AgentConfig("IO", "CoT", "none", "none"), pools, env.task, env, lockbox_solver())
        assert not {"memory_read", "memory_write", "tool"} & set(traj.phases())

    def test_replan_sees_feedback(self, pools):
        llm = Metered(MockBackend(default="1. press yellow"))
        env = lockbox()
        run_episode(AgentConfig("DEPS", "CoT", "none", "none"), pools, env.task, env, llm)
        plan_prompts = [r.prompt for r, _ in llm.log if "Open the lockbox" in r.prompt and "Sub-task" not in r.prompt]
        assert len(plan_prompts) == 3
        assert "the yellow button does not fit lock 1" in plan_prompts[1]

    def test_tokens_match_gateway(self, pools):
        llm = Metered(lockbox_solver())
        env = lockbox()
        traj = run_episode(AgentConfig("Voyager", "ToT", "none", "generative_agents"), pools, env.task, env, llm)
        assert traj.tokens_in == llm.tokens_in
        assert traj.tokens_out == llm.tokens_out

    def test_provider_failure_is_recorded(self, pools):
        env = lockbox()
        traj = run_episode(AgentConfig("IO", "CoT", "none", "none"), pools, env.task, env, MockBackend(strict=True))
        assert traj.final_score == 0.0
        assert traj.trials == env.task.max_trials
        assert all("unscripted prompt" in s.feedback_text for s in traj.steps if s.phase == "plan")

    def test_unknown_module(self, pools):
        env = lockbox()
        with pytest.raises(UnknownModule):
            run_episode(AgentConfig("IO", "Nope", "none", "none"), pools, env.task, env, do_nothing())

    @settings(max_examples=40, deadline=None)
    @given(st.data())
    def test_termination_bound(self, data):
        pools = seed_pools()
        agent = AgentConfig(*(data.draw(st.sampled_from(pools.names(k))) for k in KINDS))
        llm = data.draw(st.sampled_from([lockbox_solver, do_nothing, toolchain_solver]))()
        env = data.draw(st.sampled_from([lockbox, toolchain]))()
        traj = run_episode(agent, pools, env.task, env, llm)
        task = env.task
        acts = traj.phases().count("env_act")
        assert acts <= task.max_trials * task.max_steps_per_trial
        assert len(traj.steps) <= task.max_trials * task.max_steps_per_trial * 6
        assert 0.0 <= traj.final_score <= 1.0


class TestToolChainEpisodes:
    @pytest.mark.parametrize("agent", [
        ("DEPS", "CoT", "Toolbench", "dilu"),
        ("IO", "CoT-SC", "Toolformer", "memorybank"),
        ("HuggingGPT", "Step Back", "HuggingGPT", "voyager"),
    ])
    def test_tool_agents_solve(self, pools, agent):
        env = toolchain()
        traj = run_episode(AgentConfig(*agent), pools, env.task, env, toolchain_solver())
        assert traj.final_score == 1.0
        assert "tool" in traj.phases()

    def test_every_toolless_agent_falls_short(self, pools):
        for agent in pools.configs():
            if agent.tooluse != "none" or agent.memory not in ("none", "dilu"):
                continue
            env = toolchain()
            assert run_episode(agent, pools, env.task, env, toolchain_solver()).final_score < 1.0


class TestTrajectoryFiles:
    def record(self, tmp_path):
        agent, pools = preset("alfworld-best")
        cache = ReplayCache(lockbox_solver(), tmp_path / "cache.jsonl")
        env = lockbox()
        traj = run_episode(agent, pools, env.task, env, cache)
        path = tmp_path / "t.jsonl"
        write_trajectory(path, traj, pools.resolve(agent))
        return path, traj

    def test_round_trip(self, tmp_path):
        path, traj = self.record(tmp_path)
        header, steps = read_trajectory(path)
        assert header["agent"] == traj.agent.to_dict()
        assert [s["phase"] for s in steps] == traj.phases()
        assert all(len(s["prompt_digest"]) in (0, 16) for s in steps)

    def test_untampered_replay(self, tmp_path):
        path, traj = self.record(tmp_path)
        again = verify_replay(path, ReplayCache(None, tmp_path / "cache.jsonl", replay_only=True))
        assert again.final_score == traj.final_score

    def test_tampered_replay_drifts(self, tmp_path):
        path, _ = self.record(tmp_path)
        lines = path.read_text().splitlines()
        step = json.loads(lines[3])
        step["completion_digest"] = "0" * 16
        lines[3] = json.dumps(step)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TrajectoryDrift, match="trajectory drift at step 2"):
            verify_replay(path, ReplayCache(None, tmp_path / "cache.jsonl", replay_only=True))

    def test_evaluator_writes_trajectories(self, tmp_path, pools):
        ev = EpisodeEvaluator(get_task("lockbox-3").env_factory, lockbox_solver(), 0, tmp_path / "trajs")
        out = ev(AgentConfig("Voyager", "CoT", "none", "none"), pools)
        assert out.score == 1.0 and out.token_cost == out.trajectory.token_cost
        assert (tmp_path / "trajs" / "0000.jsonl").exists()

