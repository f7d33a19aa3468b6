"""Command-line entry point: search, baselines, single evaluations, replay checks and reports.

Exit codes: 0 ok, 1 runtime failure or trajectory drift, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .baselines import bayesian_search, random_search
from .core import KINDS, AgentConfig, ExperiencePool, ModulePools
from .envs import TASKS, TaskEntry, get_task
from .errors import AgentGridError, SearchConfigError
from .llm import MockBackend, Provider, build_provider
from .modules.catalog import load_preset, seed_pools
from .search import CSV_FIELDS, SearchParams, SearchResult, run_search
from .store import write_pools
from .workflow import (
    EpisodeEvaluator,
    Evaluator,
    LandscapeEvaluator,
    TrajectoryDrift,
    run_episode,
    verify_replay,
    write_trajectory,
)

log = logging.getLogger("agentgrid")


class UsageError(Exception):
    pass


# -- shared setup -------------------------------------------------------------

def _task(task_id: str) -> TaskEntry:
    try:
        return get_task(task_id)
    except AgentGridError as exc:
        raise UsageError(str(exc)) from None


def _provider(args, entry: TaskEntry) -> Provider:
    mock = None
    if args.llm == "mock" and not args.mock_script:
        mock = entry.solver() if entry.solver else MockBackend()
    try:
        return build_provider(args.llm, endpoint=args.endpoint, model=args.model,
                              mock_script=args.mock_script, mock=mock, cache=args.cache)
    except AgentGridError as exc:
        raise UsageError(str(exc)) from None


def _pools(entry: TaskEntry) -> ModulePools:
    return entry.landscape().pools() if entry.is_landscape else seed_pools()


def _evaluator(entry: TaskEntry, llm: Provider, env_seed: int, trajectory_dir: Path | None) -> Evaluator:
    if entry.is_landscape:
        return LandscapeEvaluator(entry.landscape(), entry.id)
    return EpisodeEvaluator(entry.env_factory, llm, env_seed, trajectory_dir)


def _fresh_store(out: Path) -> ExperiencePool:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "experience.jsonl"
    path.write_text("", encoding="utf-8")
    return ExperiencePool(path=path)


def _finish(result: SearchResult, pools: ModulePools, out: Path) -> None:
    result.save(out)
    write_pools(out / "pools.json", pools)
    print(f"best {result.best_agent.label()} score={result.best_score:.4f} "
          f"real_evals={result.real_evals} tokens={result.tokens}")


# -- commands ------------------------------------------------------------------

def cmd_search(args) -> int:
    entry = _task(args.task)
    params = SearchParams(
        max_episodes=args.episodes,
        population=args.population,
        stale_limit=args.stale_limit,
        predictor=args.predictor,
        predictor_screen_k=args.screen_k,
        disable_evolution=args.no_evolution,
        disable_recombination=args.no_recombination,
        seed=args.seed,
        stale_unit=args.stale_unit,
    )
    try:
        params.validate()
    except SearchConfigError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    llm = _provider(args, entry)
    pools = _pools(entry)
    experience = _fresh_store(out)
    trajectories = None if entry.is_landscape else out / "trajectories"
    evaluator = _evaluator(entry, llm, args.env_seed, trajectories)
    result = run_search(params, entry.task_spec(), evaluator, pools, experience, llm)
    _finish(result, pools, out)
    return 0


def cmd_baseline(args) -> int:
    entry = _task(args.task)
    out = Path(args.out)
    llm = _provider(args, entry)
    pools = _pools(entry)
    experience = _fresh_store(out)
    trajectories = None if entry.is_landscape else out / "trajectories"
    evaluator = _evaluator(entry, llm, args.env_seed, trajectories)
    try:
        if args.method == "random":
            result = random_search(args.budget, pools, evaluator, experience, args.seed, entry.id)
        else:
            result = bayesian_search(args.budget, pools, evaluator, experience, args.seed,
                                     args.init_samples, args.ucb_beta, entry.id)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _finish(result, pools, out)
    return 0


def _load_agent(ref: str) -> tuple[AgentConfig, ModulePools]:
    path = Path(ref)
    if path.is_file():
        doc = json.loads(path.read_text(encoding="utf-8"))
        if "agent" not in doc:
            return AgentConfig.from_dict(doc), seed_pools()
    preset = load_preset(ref)
    return preset.agent, preset.install(seed_pools())


def cmd_eval(args) -> int:
    entry = _task(args.task)
    if entry.is_landscape:
        land = entry.landscape()
        agent = AgentConfig.from_dict(json.loads(Path(args.agent).read_text(encoding="utf-8")))
        print(f"score {land.score(agent, land.pools()):.4f}")
        print("tokens 0")
        return 0
    try:
        agent, pools = _load_agent(args.agent)
    except AgentGridError as exc:
        raise UsageError(str(exc)) from None
    llm = _provider(args, entry)
    env = entry.env_factory(args.seed)
    traj = run_episode(agent, pools, env.task, env, llm)
    if args.trajectory_out:
        write_trajectory(args.trajectory_out, traj, pools.resolve(agent), args.seed)
    print(f"agent {agent.label()}")
    print(f"score {traj.final_score:.4f}")
    print(f"tokens {traj.token_cost}")
    return 0


def cmd_pools(args) -> int:
    pools = seed_pools()
    if args.preset:
        pools = load_preset(args.preset).install(pools)
    for kind in KINDS:
        for spec in pools[kind]:
            print(f"{kind.value:<10} {spec.name:<24} {spec.origin:<8} {spec.strategy.value}")
    return 0


def cmd_replay(args) -> int:
    if not args.cache:
        raise UsageError("replay needs --cache")
    llm = build_provider("replay", cache=args.cache)
    try:
        traj = verify_replay(args.trajectory, llm)
    except TrajectoryDrift as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(f"replay ok: {len(traj.steps)} steps, score {traj.final_score:.4f}")
    return 0


# -- report --------------------------------------------------------------------

def _read_run(directory: Path) -> tuple[str, list[dict]]:
    meta = json.loads((directory / "result.json").read_text(encoding="utf-8"))
    with (directory / "trajectory.csv").open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    label = f"{directory.name} ({meta.get('searcher', '?')})"
    return label, rows


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def render_svg(series: list[tuple[str, list[tuple[float, float]]]], x_label: str,
               width: int = 640, height: int = 400) -> str:
    """Minimal line chart: axes, one polyline per series, legend."""
    left, right, top, bottom = 60, 170, 20, 50
    xs = [x for _, pts in series for x, _ in pts] or [0.0]
    ys = [y for _, pts in series for _, y in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="14" y="{top + ph / 2}" font-size="12" transform="rotate(-90 14 {top + ph / 2})" '
        f'text-anchor="middle">best so far</text>',
        f'<text x="{left}" y="{top + ph + 16}" font-size="10" text-anchor="middle">{x0:g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 16}" font-size="10" text-anchor="middle">{x1:g}</text>',
        f'<text x="{left - 4}" y="{top + ph}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{left - 4}" y="{top + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for i, (label, pts) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        safe = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        out.append(f'<text x="{left + pw + 32}" y="{ly}" font-size="10">{safe}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.inputs or []]
    if not dirs:
        raise UsageError("report needs at least one --in directory")
    runs = []
    for d in dirs:
        try:
            runs.append(_read_run(d))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read run {d}: {exc}") from None
    x_key = "tokens_cum" if args.cost else "real_evals_cum"
    series = [
        (label, [(float(r[x_key]), float(r["best_so_far"])) for r in rows]) for label, rows in runs
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(series, "cumulative tokens" if args.cost else "real evaluations"),
                   encoding="utf-8")
    merged = out.with_suffix(".csv")
    with merged.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("run",) + CSV_FIELDS)
        for label, rows in runs:
            for r in rows:
                writer.writerow([label] + [r[f] for f in CSV_FIELDS])
    print(f"wrote {out} and {merged}")
    return 0


# -- parser ---------------------------------------------------------------------

def _llm_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--llm", choices=("http", "mock", "replay"), default="mock")
    p.add_argument("--endpoint", help="chat-completions URL for --llm http")
    p.add_argument("--model", help="model name for --llm http")
    p.add_argument("--cache", help="JSONL record/replay cache file")
    p.add_argument("--mock-script", help="JSON rules for the mock backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentgrid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the evolution/recombination module search")
    p.add_argument("--config", help="JSON file whose keys mirror these flags; flags win")
    p.add_argument("--task", required=True, help=f"one of: {', '.join(sorted(TASKS))}")
    p.add_argument("--episodes", type=int, default=15)
    p.add_argument("--population", type=int, default=4)
    p.add_argument("--stale-limit", type=int, default=5)
    p.add_argument("--stale-unit", choices=("phase", "episode"), default="phase")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument("--predictor", choices=("llm", "knn"), default="knn")
    p.add_argument("--screen-k", type=int, default=2)
    p.add_argument("--no-evolution", action="store_true")
    p.add_argument("--no-recombination", action="store_true")
    p.add_argument("--out", required=True)
    _llm_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("baseline", help="run random or Bayesian combination search")
    p.add_argument("--config", help="JSON file whose keys mirror these flags; flags win")
    p.add_argument("--task", required=True)
    p.add_argument("--method", choices=("random", "bayesian"), default="random")
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--init-samples", type=int, default=10)
    p.add_argument("--ucb-beta", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _llm_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="run one agent once and print its score")
    p.add_argument("--agent", required=True, help="preset name, preset file or agent JSON file")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trajectory-out", help="write the episode trajectory JSONL here")
    _llm_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pools", help="inspect module pools")
    p.add_argument("action", choices=("list",))
    p.add_argument("--preset", help="also list the modules shipped with this preset")
    p.set_defaults(func=cmd_pools)

    p = sub.add_parser("replay", help="re-run a recorded episode from the cache and check digests")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--cache", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="plot best-so-far curves of finished runs")
    p.add_argument("--in", dest="inputs", nargs="+", metavar="DIR")
    p.add_argument("--out", required=True, help="SVG path; the merged CSV is written next to it")
    p.add_argument("--cost", action="store_true", help="x axis = cumulative tokens")
    p.set_defaults(func=cmd_report)
    return parser


def _parse(parser: argparse.ArgumentParser, argv: Sequence[str] | None) -> argparse.Namespace:
    args = parser.parse_args(argv)
    config = getattr(args, "config", None)
    if not config:
        return args
    try:
        doc = json.loads(Path(config).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {config}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    # Re-parse with file values as defaults so explicit flags still win.
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = [k for k in doc if k.replace("-", "_") not in known]
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items()})
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AgentGridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
