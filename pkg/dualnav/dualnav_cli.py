# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""The ``dualnav`` command line."""
import argparse
import json
import logging
import os
import sys

from .dualnav import DualNavError, InvalidConfigError
from .dualnav_harness import (
    AgentConfig,
    RunConfig,
    ablate,
    agent_from_run_config,
    anchor_configs,
    default_matrix,
    estimate_intelligence,
    evaluate,
    read_points,
    write_reports_csv,
    write_summary_csv,
    write_trajectories,
)
from .dualnav_switch import GateParams, label_switch_data, load_switch_data, save_switch_data, train_gate
from .dualnav_system1 import ScorerParams, build_demos, init_scorer, load_demos, save_demos, train_offline
from .dualnav_system2 import (
    OnlinePolicyParams,
    init_online_policy,
    save_experiences,
    train_online,
)
from .dualnav_tools import render_page
from .dualnav_webenv import (
    Difficulty,
    bimodal_difficulty,
    generate_environment,
    load_environment,
    load_tasks,
    sample_tasks,
    save_environment,
    save_tasks,
)

logger = logging.getLogger("DualNav")


def _difficulty(args):
    if args.hist:
        histogram = {}
        for item in args.hist.split(","):
            steps, weight = item.split(":")
            histogram[int(steps)] = float(weight)
        return Difficulty.from_histogram(histogram)
    if args.bimodal:
        return bimodal_difficulty()
    return Difficulty.geometric(args.geom_p)


def _run_config(args):
    run_config = RunConfig.from_file(args.config) if args.config else RunConfig()
    return run_config.merged(
        max_steps=getattr(args, "max_steps", None),
        seed=getattr(args, "seed", None),
        epochs=getattr(args, "epochs", None),
        jobs=getattr(args, "jobs", None),
        selection=getattr(args, "selection", None),
    )


def _write_json(data, path):
    with open(path, "w") as handle:
        json.dump(data, handle, indent=2, sort_keys=True)


def cmd_gen_env(args):
    env = generate_environment(args.pages, args.degree, args.vocab, args.seed, args.drift)
    save_environment(env, args.out)
    logger.info("wrote %r to %s", env, args.out)


def cmd_gen_tasks(args):
    env = load_environment(args.env)
    tasks = sample_tasks(env, args.n, _difficulty(args), args.seed)
    save_tasks(tasks, args.out)


def cmd_render(args):
    env = load_environment(args.env)
    if args.page not in env.pages:
        raise InvalidConfigError("no page %s in %s" % (args.page, args.env))
    sys.stdout.write(render_page(env.pages[args.page]))


def cmd_gen_demos(args):
    env = load_environment(args.env)
    demos = build_demos(env, load_tasks(args.tasks), args.negatives, args.strategy, args.seed)
    save_demos(demos, args.out)


def cmd_train_s1(args):
    env = load_environment(args.env)
    params = init_scorer(args.arch, args.dim, args.seed)
    result = train_offline(
        params,
        env,
        load_demos(args.demos),
        args.objective,
        args.lr,
        args.epochs,
        args.batch_size,
        args.seed,
    )
    result.params.save(args.out)
    logger.info("loss curve: %s", ", ".join("%.4f" % value for value in result.curve))


def cmd_label_switch(args):
    run_config = _run_config(args)
    env = load_environment(args.env)
    rows = label_switch_data(
        env,
        load_tasks(args.tasks),
        ScorerParams.load(args.s1),
        run_config.planner,
        args.budget,
        run_config.cost_model,
        run_config.limits.max_steps,
    )
    save_switch_data(rows, args.out)


def cmd_train_switch(args):
    result = train_gate(
        GateParams(), load_switch_data(args.data), args.iterations, args.lr, seed=args.seed
    )
    result.gate.save(args.out)
    logger.info("final accuracy: %.3f", result.curve[-1] if result.curve else 0.0)


def cmd_train_s2(args):
    env = load_environment(args.env)
    params = init_online_policy(args.dim, args.theta)
    result = train_online(
        params,
        env,
        load_tasks(args.tasks),
        rounds=args.rounds,
        learning_rate=args.lr,
        seed=args.seed,
    )
    result.params.save(args.out)
    logger.info("success per round: %s", result.curve)


def _agent(args, run_config, label="agent"):
    s1 = ScorerParams.load(args.s1) if args.s1 else None
    gate = GateParams.load(args.gate) if args.gate else None
    online = OnlinePolicyParams.load(args.online) if getattr(args, "online", None) else None
    return agent_from_run_config(
        run_config, label, s1, gate, not args.no_s2, not args.no_memory, online
    )


def cmd_run(args):
    run_config = _run_config(args)
    env = load_environment(args.env)
    tasks = load_tasks(args.tasks)
    report = evaluate(_agent(args, run_config), env, tasks, run_config.limits)
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    write_reports_csv([report], os.path.join(args.out, "report.csv"))
    if not args.report_only:
        write_trajectories([report], os.path.join(args.out, "trajectories.jsonl"))
        save_experiences(report.pool, os.path.join(args.out, "experiences.jsonl"))
    sys.stdout.write(json.dumps(report.summary(), sort_keys=True) + "\n")


def _matrix(args, run_config):
    s1 = ScorerParams.load(args.s1) if args.s1 else None
    gate = GateParams.load(args.gate) if args.gate else None
    if not args.matrix:
        return default_matrix(s1, run_config.planner, gate, run_config.cost_model)
    with open(args.matrix) as handle:
        rows = json.load(handle)
    return [
        AgentConfig(
            row["label"],
            s1 if row.get("s1", True) else None,
            run_config.planner if row.get("s2", True) else None,
            gate,
            row.get("memory", True),
            run_config.cost_model,
            run_config.recall_m,
            selection=run_config.selection,
        )
        for row in rows
    ]


def cmd_ablate(args):
    run_config = _run_config(args)
    env = load_environment(args.env)
    tasks = load_tasks(args.tasks)
    reports = ablate(_matrix(args, run_config), env, tasks, run_config.limits)
    if not os.path.isdir(args.out):
        os.makedirs(args.out)
    write_reports_csv(reports, os.path.join(args.out, "report.csv"))
    write_summary_csv(reports, os.path.join(args.out, "summary.csv"))
    for report in reports:
        sys.stdout.write(json.dumps(report.summary(), sort_keys=True) + "\n")


def cmd_anchor(args):
    result = anchor_configs(read_points(args.points), args.easy_share)
    data = {
        "fast": result.fast.label,
        "slow": result.slow.label,
        "split": result.split,
        "threshold_index": result.threshold_index,
        "success_per_token": result.success_per_token,
        "order": [point.label for point in result.ordered],
    }
    if args.out:
        _write_json(data, args.out)
    sys.stdout.write(json.dumps(data, sort_keys=True) + "\n")


def cmd_intel(args):
    run_config = _run_config(args)
    with open(args.envs) as handle:
        specs = json.load(handle)
    estimate = estimate_intelligence(
        _agent(args, run_config, "intel"),
        specs,
        args.tasks_per_env,
        _difficulty(args),
        run_config.limits,
    )
    sys.stdout.write(json.dumps(estimate._asdict(), sort_keys=True) + "\n")


def _add_difficulty(parser):
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--geom-p", type=float, default=0.5, help="geometric law parameter")
    group.add_argument("--hist", help="explicit histogram, e.g. 2:0.7,8:0.3")
    group.add_argument("--bimodal", action="store_true", help="70%% short, 30%% long tasks")


def _add_run_options(parser, env=True, tasks=True):
    if env:
        parser.add_argument("--env", required=True)
    if tasks:
        parser.add_argument("--tasks", required=True)
    parser.add_argument("--config", help="JSON run config; flags override it")
    parser.add_argument("--s1", help="System 1 parameters (.npz)")
    parser.add_argument("--gate", help="switch gate parameters (.npz)")
    parser.add_argument("--no-s2", action="store_true", help="run without System 2")
    parser.add_argument("--no-memory", action="store_true", help="disable reflect/recall")
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--selection", choices=("hard", "mixture"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualnav", description="Dual-process web navigation experiments."
    )
    parser.add_argument("--log-level", default="INFO", help="logging level (default: INFO)")
    sub = parser.add_subparsers(dest="command")
    sub.required = True

    p = sub.add_parser("gen-env", help="generate a synthetic environment")
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--degree", type=float, required=True)
    p.add_argument("--vocab", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("gen-tasks", help="sample tasks on an environment")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, required=True)
    _add_difficulty(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("render", help="print a page as an HTML fragment")
    p.add_argument("--env", required=True)
    p.add_argument("--page", type=int, required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("gen-demos", help="oracle demonstrations for System 1")
    p.add_argument("--env", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--negatives", type=int, default=3)
    p.add_argument("--strategy", choices=("random", "semantic"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("train-s1", help="train System 1 offline")
    p.add_argument("--env", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--objective", choices=("sft", "wepo"), default="sft")
    p.add_argument("--arch", choices=("bi-encoder", "cross-encoder"), default="cross-encoder")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_s1)

    p = sub.add_parser("label-switch", help="label switch data with the oracle")
    p.add_argument("--env", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--s1", required=True)
    p.add_argument("--config")
    p.add_argument("--budget", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label_switch)

    p = sub.add_parser("train-switch", help="train the switch gate")
    p.add_argument("--data", required=True)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_switch)

    p = sub.add_parser("train-s2", help="KL-constrained online training")
    p.add_argument("--env", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_s2)

    for name, report_only in (("run", False), ("eval", True)):
        p = sub.add_parser(name, help="evaluate an agent on a task suite")
        _add_run_options(p)
        p.add_argument("--online", help="online policy parameters (.npz)")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=cmd_run, report_only=report_only)

    p = sub.add_parser("ablate", help="evaluate the ablation matrix")
    _add_run_options(p)
    p.add_argument("--matrix", help="JSON list of {label, s1, s2, memory}")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("anchor", help="select fast and slow anchor configurations")
    p.add_argument(
        "--points", required=True, help="CSV: label,cost,capability[,easy_capability,hard_capability]"
    )
    p.add_argument("--easy-share", type=float, default=0.7)
    p.add_argument("--out", help="anchors.json")
    p.set_defaults(func=cmd_anchor)

    p = sub.add_parser("intel", help="complexity weighted intelligence estimate")
    _add_run_options(p, env=False, tasks=False)
    p.add_argument("--envs", required=True, help="JSON list of environment specs")
    p.add_argument("--tasks-per-env", type=int, default=10)
    _add_difficulty(p)
    p.set_defaults(func=cmd_intel)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except DualNavError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
