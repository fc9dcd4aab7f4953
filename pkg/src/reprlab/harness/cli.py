"""Command-line entry point: ``reprlab <verb> [options]``.

Verbs: run, resume, evaluate, export-plots, fisher-overlap, list-conditions.
``REPRLAB_THREADS`` caps the BLAS thread pool; it must be read before numpy
loads, which is why the heavy imports below are deferred.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_thread_cap() -> None:
    cap = os.environ.get("REPRLAB_THREADS")
    if not cap:
        return
    if not cap.isdigit() or int(cap) < 1:
        raise SystemExit(f"REPRLAB_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ[var] = cap


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reprlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log phase progress")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run an experiment plan")
    run.add_argument("--config", required=True, help="YAML plan")
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--condition", help="override the plan's condition")
    run.add_argument("--profile", choices=("desk", "atari"), help="override the profile")
    run.add_argument("--out", help="override the output directory")

    res = sub.add_parser("resume", help="continue an interrupted run from its last phase")
    res.add_argument("--out", required=True, help="run directory")
    res.add_argument("--seed", type=int, help="resume only this seed")

    ev = sub.add_parser("evaluate", help="evaluate a run's final network on all its tasks")
    ev.add_argument("--out", required=True, help="run directory")
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--episodes", type=int, default=None)

    ex = sub.add_parser("export-plots", help="write per-task score curves as CSV")
    ex.add_argument("--out", required=True, help="run directory")
    ex.add_argument("--dest", default=None, help="output directory (default <out>/plots)")

    fo = sub.add_parser("fisher-overlap", help="Fisher overlap between a run's tasks")
    fo.add_argument("--out", required=True, help="run directory")
    fo.add_argument("--seed", type=int, default=None)
    fo.add_argument("--samples", type=int, default=None)

    sub.add_parser("list-conditions", help="print the available conditions")
    return p


def _seed_dirs(out: Path, seed: int | None) -> list[Path]:
    from reprlab.errors import ContractError

    dirs = [out / f"seed_{seed}"] if seed is not None else sorted(out.glob("seed_*"))
    dirs = [d for d in dirs if (d / "plan.yaml").exists()]
    if not dirs:
        raise ContractError(f"{out}: no run found")
    return dirs


def _cmd_run(args) -> int:
    from reprlab.harness.plan import load_plan
    from reprlab.harness.runner import run_plan

    overrides = {"condition": args.condition, "profile": args.profile, "out": args.out}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    plan = load_plan(args.config, overrides)
    summary = run_plan(plan)
    for r in summary.seeds:
        print(f"seed {r.seed}: status {r.status}, {len(r.completed)} phases -> {r.run_dir}")
    return summary.status


def _cmd_resume(args) -> int:
    from reprlab.harness.plan import load_plan
    from reprlab.harness.runner import run_plan

    status = 0
    for d in _seed_dirs(Path(args.out), args.seed):
        plan = load_plan(d / "plan.yaml").with_(stop_after=None, out=str(d.parent))
        seed = int(d.name.split("_", 1)[1])
        summary = run_plan(plan.with_(seeds=(seed,)), resume=True)
        for r in summary.seeds:
            print(f"seed {r.seed}: status {r.status}, {len(r.completed)} phases -> {r.run_dir}")
        status = max(status, summary.status)
    return status


def _cmd_evaluate(args) -> int:
    from reprlab.agent.dqn import evaluate, score_summary
    from reprlab.envs.gridworld import make_task
    from reprlab.harness.plan import load_plan
    from reprlab.harness.runner import final_params
    from reprlab.profiles import dqn_spec
    from reprlab.seeding import seed_int, stream
    from reprlab.tensor.nn import Network

    for d in _seed_dirs(Path(args.out), args.seed):
        plan = load_plan(d / "plan.yaml")
        seed = int(d.name.split("_", 1)[1])
        params, meta = final_params(d)
        env0 = make_task(plan.tasks[0], 0)
        net = Network(dqn_spec(plan.profile, env0.obs_shape, env0.n_actions))
        episodes = args.episodes or plan.eval.episodes
        for task in plan.tasks:
            scores = evaluate(net, params,
                              lambda e, t=task: make_task(t, seed_int(seed, "cli-eval", t, e)),
                              episodes, plan.eval.epsilon, stream(seed, "cli-eval-act", task))
            mean, std = score_summary(scores)
            print(f"seed {seed} {task}: mean {mean:.3f} stdev {std:.3f} over {episodes} episodes")
    return 0


def _cmd_export(args) -> int:
    from reprlab.harness.metrics import export_plot_data

    for path in export_plot_data(args.out, args.dest):
        print(path)
    return 0


def _cmd_overlap(args) -> int:
    from reprlab.analysis import overlap_reports, write_overlap_csv
    from reprlab.baselines import fisher_diag
    from reprlab.envs.gridworld import make_task
    from reprlab.harness.plan import load_plan
    from reprlab.harness.runner import final_params, rollout_states
    from reprlab.profiles import dqn_spec
    from reprlab.tensor.nn import Network

    for d in _seed_dirs(Path(args.out), args.seed):
        plan = load_plan(d / "plan.yaml")
        seed = int(d.name.split("_", 1)[1])
        params, _ = final_params(d)
        env0 = make_task(plan.tasks[0], 0)
        net = Network(dqn_spec(plan.profile, env0.obs_shape, env0.n_actions))
        samples = args.samples or plan.analysis.fisher_samples
        fishers = {}
        for task in sorted(plan.tasks):
            states = rollout_states(net, params, task, samples, plan.analysis.fisher_epsilon, seed)
            fishers[task] = fisher_diag(net, params, states.astype(params.dtype))
        reports = overlap_reports(fishers, plan.analysis.order_label)
        write_overlap_csv(d / "overlap.csv", reports)
        for r in reports:
            print(f"seed {seed} {r.task_a} {r.task_b} {r.order}: {r.overlap:.4f}")
    return 0


def _cmd_list(args) -> int:
    from reprlab.baselines import CONDITIONS

    for cid, cond in CONDITIONS.items():
        print(f"{cid:12s} {cond.description}")
    return 0


_COMMANDS = {"run": _cmd_run, "resume": _cmd_resume, "evaluate": _cmd_evaluate,
             "export-plots": _cmd_export, "fisher-overlap": _cmd_overlap,
             "list-conditions": _cmd_list}


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    from reprlab.errors import ReprLabError

    try:
        return _COMMANDS[args.verb](args)
    except ReprLabError as exc:
        print(f"reprlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
