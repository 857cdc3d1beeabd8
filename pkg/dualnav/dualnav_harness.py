# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""Episode loop, evaluation and the experiments built on top of it."""
import csv
import json
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dualnav
from .dualnav import (
    ContractViolation,
    InvalidConfigError,
    contained,
    logged_run,
    message,
)
from .dualnav_agentcore import (
    Action,
    CostModel,
    StepRecord,
    Trajectory,
    initial_state,
    trajectory_cost,
)
from .dualnav_switch import EpisodeContext, GateParams, decide, label_switch_data, train_gate
from .dualnav_system1 import build_demos, greedy_action, init_scorer, train_offline
from .dualnav_system2 import Plan, PlannerConfig, WorkingMemory, plan, recall, reflect
from .dualnav_tools import stable_hash, write_jsonl
from .dualnav_webenv import (
    drift,
    generate_environment,
    kolmogorov_estimate,
    sample_tasks,
    step,
)

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

SELECTIONS = ("hard", "mixture")
REPORT_FIELDS = (
    "config",
    "task",
    "epoch",
    "seed",
    "score",
    "tokens",
    "s2_fraction",
    "steps",
    "nominal_steps",
)

EpisodeResult = namedtuple("EpisodeResult", ["trajectory", "score", "experience"])
IntelligenceEstimate = namedtuple("IntelligenceEstimate", ["value", "environments", "discount"])


@dataclass(frozen=True)
class RunLimits:
    max_steps: int = 30
    stuck_threshold: int = 3
    epochs: int = 1
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.max_steps < 1:
            raise InvalidConfigError("max_steps must be >= 1")
        if self.epochs < 1 or self.jobs < 1:
            raise InvalidConfigError("epochs and jobs must be >= 1")

    def to_dict(self):
        return {
            "max_steps": self.max_steps,
            "stuck_threshold": self.stuck_threshold,
            "epochs": self.epochs,
            "seed": self.seed,
            "jobs": self.jobs,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: int(data[key]) for key in cls().to_dict() if key in data})


@dataclass(frozen=True)
class AgentConfig:
    """What an agent is made of. Leaving out ``s1`` or ``planner`` gives
    the single-system rows of an ablation."""

    label: str
    s1: object = None
    planner: object = None
    gate: object = None
    memory: bool = True
    cost_model: CostModel = field(default_factory=CostModel)
    recall_m: int = 3
    online: object = None
    selection: str = "hard"

    def __post_init__(self):
        if self.s1 is None and self.planner is None:
            raise InvalidConfigError("agent %r has neither System 1 nor System 2" % self.label)
        if self.selection not in SELECTIONS:
            raise InvalidConfigError("unknown selection %r" % self.selection)

    @property
    def uses_memory(self):
        return self.memory and self.planner is not None


@dataclass(frozen=True)
class ReportRow:
    config: str
    task: str
    epoch: int
    seed: int
    score: int
    tokens: float
    s2_fraction: float
    steps: int
    nominal_steps: int

    def to_dict(self):
        return {name: getattr(self, name) for name in REPORT_FIELDS}


class EvalReport(object):
    def __init__(self, config, rows, trajectories=(), pool=()):
        self.config = config
        self.rows = list(rows)
        self.trajectories = list(trajectories)
        self.pool = list(pool)

    @property
    def success_rate(self):
        return float(np.mean([row.score for row in self.rows])) if self.rows else 0.0

    @property
    def mean_tokens(self):
        return float(np.mean([row.tokens for row in self.rows])) if self.rows else 0.0

    @property
    def s2_fraction(self):
        return float(np.mean([row.s2_fraction for row in self.rows])) if self.rows else 0.0

    def summary(self):
        return {
            "config": self.config,
            "episodes": len(self.rows),
            "success_rate": self.success_rate,
            "mean_tokens": self.mean_tokens,
            "s2_fraction": self.s2_fraction,
        }

    def __repr__(self):
        return "<EvalReport %s success=%.3f tokens=%.1f>" % (
            self.config,
            self.success_rate,
            self.mean_tokens,
        )


def early_stop(trajectory, limits):
    """Reason to end the episode now, or ``""``."""
    records = trajectory.records
    if len(records) >= limits.max_steps:
        return "max steps"
    tail = records[-limits.stuck_threshold :]
    if (
        limits.stuck_threshold > 0
        and len(tail) == limits.stuck_threshold
        and all(record.failed for record in tail)
        and len({record.action for record in tail}) == 1
    ):
        return "repeating action"
    return ""


@contained("S1")
def _fast_step(params, env, state, goal):
    return greedy_action(params, env, state, goal)


@contained("S2")
def _slow_step(config, env, state, working, recalled, goal, policy):
    result = plan(config.planner, env, state, working, recalled, goal, config.cost_model, policy)
    return result, result.reasoning_tokens


def _choose(config, env, state, task, context, working, recalled, limits, rng, reason):
    """Pick the acting system and its action.

    With both systems, System 1 proposes the next move of a route System 2
    committed to, when the episode is still on it, and its greedy action
    otherwise.

    :return tuple: ``(system, action, reasoning tokens, plan or None)``.
    """
    fast = None
    if reason:
        # repeating actions: System 2 gets the last word
        system = "S2"
    elif config.planner is None:
        if context.stuck >= limits.stuck_threshold or context.invalid:
            reason = "stuck" if context.stuck >= limits.stuck_threshold else "invalid action"
            return "S1", Action.stop(ua=True, reason=reason), 0, None
        system = "S1"
    elif config.s1 is None:
        system = "S2"
    else:
        fast, confidence = context.route_action(state), 1.0
        if fast is None:
            fast, confidence = _fast_step(config.s1, env, state, task)
        gate = config.gate if config.gate is not None else GateParams()
        decision = decide(gate, context.features(state, confidence), limits.stuck_threshold)
        system = decision.system
        if config.selection == "mixture" and decision.reason == "gate":
            # sampling a system with probability lambda samples the mixture
            system = "S1" if rng.random() < decision.lam else "S2"
    if system == "S1":
        if fast is None:
            fast, _confidence = _fast_step(config.s1, env, state, task)
        return "S1", fast, 0, None
    result, tokens = _slow_step(config, env, state, working, recalled, task, config.online)
    if isinstance(result, Plan):
        return "S2", result.action, tokens, result
    return "S2", result, tokens, None


def run_episode(config, env, task, limits=RunLimits(), pool=(), seed=0):
    """One episode: early-stop check, switch, act, apply, until a stop.

    Errors raised while choosing an action end the episode with a stop
    carrying an ``ERROR:`` reason. Stops created by the loop itself are
    attributed to System 1 when the agent has one.
    """
    rng = np.random.default_rng(stable_hash(seed, task.id) % 2**32)
    recalled = recall(pool, task, config.recall_m) if config.uses_memory else []
    max_depth = config.planner.max_depth if config.planner is not None else 4
    context = EpisodeContext(task, max_depth)
    working = WorkingMemory()
    trajectory = Trajectory(task=task)
    state = initial_state(env)
    fallback = "S1" if config.s1 is not None else "S2"
    while True:
        reason = early_stop(trajectory, limits)
        if reason == "max steps" or (reason and config.planner is None):
            action = Action.stop(ua=True, reason="Early stop: %s" % reason)
            trajectory = trajectory.appended(StepRecord(state, action, fallback))
            message("harness", task.id, len(trajectory) - 1, "early stop: %s", reason)
            break
        system, action, tokens, chosen = _choose(
            config, env, state, task, context, working, recalled, limits, rng, reason
        )
        if action.kind == "stop":
            trajectory = trajectory.appended(StepRecord(state, action, system, tokens))
            if action.ua:
                message("harness", task.id, len(trajectory) - 1, "stopped: %s", action.reason)
            break
        outcome = step(env, state, action)
        unchanged = outcome.state == state
        trajectory = trajectory.appended(
            StepRecord(state, action, system, tokens, outcome.invalid, unchanged)
        )
        context.observe(state, action, system, outcome, chosen)
        working = working.push(state, action, outcome.invalid)
        state = outcome.state
    score = task.evaluate(trajectory)
    trajectory = trajectory.completed(score)
    experience = reflect(trajectory, score) if config.uses_memory else None
    return EpisodeResult(trajectory, score, experience)


def _row(config, task, epoch, seed, result):
    records = result.trajectory.records
    s2_steps = sum(1 for record in records if record.system == "S2")
    return ReportRow(
        config=config.label,
        task=task.id,
        epoch=epoch,
        seed=seed,
        score=result.score,
        tokens=trajectory_cost(result.trajectory, config.cost_model),
        s2_fraction=s2_steps / float(len(records)),
        steps=len(records),
        nominal_steps=task.steps,
    )


def _describe(result):
    return "score %d in %d steps" % (result.score, len(result.trajectory))


@dualnav.logging()
def evaluate(config, env, tasks, limits=RunLimits(), seeds=None, pool=None):
    """Run every task for every seed and epoch.

    Experiences are appended to ``pool`` after each episode (after each
    epoch's join when ``limits.jobs > 1``, the episodes of an epoch then
    recalling from the pool as it was when the epoch started). With a
    non-zero drift rate every epoch sees a freshly drifted environment.
    """
    if not tasks:
        raise ContractViolation("evaluation needs at least one task")
    seeds = [limits.seed] if seeds is None else list(seeds)
    pool = [] if pool is None else pool
    rows, trajectories = [], []
    for seed in seeds:
        for epoch in range(limits.epochs):
            episode_seed = stable_hash(seed, epoch) % 2**32
            world = drift(env, episode_seed) if env.drift_rate > 0 else env

            def run(task, snapshot):
                return logged_run(
                    "%s/%s" % (config.label, task.id),
                    run_episode,
                    config,
                    world,
                    task,
                    limits,
                    snapshot,
                    episode_seed,
                    describe=_describe,
                )

            if limits.jobs > 1:
                snapshot = tuple(pool)
                with ThreadPoolExecutor(max_workers=limits.jobs) as executor:
                    results = list(executor.map(lambda task: run(task, snapshot), tasks))
            else:
                results = []
                for task in tasks:
                    results.append(run(task, tuple(pool)))
                    if results[-1].experience is not None:
                        pool.append(results[-1].experience)
            for task, result in zip(tasks, results):
                rows.append(_row(config, task, epoch, seed, result))
                trajectories.append(result.trajectory)
                if limits.jobs > 1 and result.experience is not None:
                    pool.append(result.experience)
    report = EvalReport(config.label, rows, trajectories, pool)
    logger.info("%r", report)
    return report


@dataclass(frozen=True)
class ConfigPoint:
    label: str
    cost: float
    capability: float
    easy_capability: object = None
    hard_capability: object = None

    def __post_init__(self):
        if self.cost <= 0:
            raise ContractViolation("config %s: cost must be > 0" % self.label)
        for value in (self.capability, self.easy_capability, self.hard_capability):
            if value is not None and not 0.0 <= value <= 1.0:
                raise ContractViolation("config %s: capability outside [0, 1]" % self.label)

    @property
    def easy(self):
        return self.capability if self.easy_capability is None else self.easy_capability

    @property
    def hard(self):
        return self.capability if self.hard_capability is None else self.hard_capability


AnchorResult = namedtuple(
    "AnchorResult",
    ["fast", "slow", "split", "threshold_index", "success_per_token", "ordered"],
)

SPLITS = ("all-fast", "easy-fast/hard-slow", "all-slow")


def _mix(fast, slow, split, easy_share):
    if split == "all-fast":
        return fast.easy * easy_share + fast.hard * (1 - easy_share), fast.cost
    if split == "all-slow":
        return slow.easy * easy_share + slow.hard * (1 - easy_share), slow.cost
    success = fast.easy * easy_share + slow.hard * (1 - easy_share)
    return success, fast.cost * easy_share + slow.cost * (1 - easy_share)


def anchor_configs(points, easy_share=0.7):
    """Pick a fast and a slow anchor among configurations.

    Points are sorted by cost; every pair (i < j) is scored under a task mix
    where ``easy_share`` of the tasks are easy, with the cheap anchor, the
    expensive one, or the cheap one on easy tasks and the expensive one on
    hard tasks serving them. The pair and split with the best success per
    token wins.
    """
    if not points:
        raise ContractViolation("anchoring needs at least one configuration")
    ordered = sorted(points, key=lambda p: (p.cost, p.capability, p.label))
    if len(ordered) == 1:
        point = ordered[0]
        success, cost = _mix(point, point, "all-fast", easy_share)
        return AnchorResult(point, point, "all-fast", 0, success / cost, ordered)
    best = None
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            for split in SPLITS:
                success, cost = _mix(ordered[i], ordered[j], split, easy_share)
                ratio = success / cost
                if best is None or ratio > best[0]:
                    best = (ratio, i, j, split)
    ratio, i, j, split = best
    return AnchorResult(ordered[i], ordered[j], split, i, ratio, ordered)


def read_points(path):
    """ConfigPoints from a CSV with ``label,cost,capability`` and optional
    ``easy_capability,hard_capability`` columns."""
    points = []
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):

            def optional(name, row=row):
                value = row.get(name)
                return float(value) if value not in (None, "") else None

            points.append(
                ConfigPoint(
                    row["label"],
                    float(row["cost"]),
                    float(row["capability"]),
                    optional("easy_capability"),
                    optional("hard_capability"),
                )
            )
    return points


def weighted_intelligence(kolmogorov, values):
    """Sum of V * 2^(-K / Z), Z being the largest K, with the weights
    normalized to 1."""
    if not kolmogorov or len(kolmogorov) != len(values):
        raise ContractViolation("one complexity per value, at least one")
    scale = max(kolmogorov)
    scale = scale if scale > 0 else 1.0
    weights = np.array([2.0 ** (-k / scale) for k in kolmogorov])
    weights = weights / weights.sum()
    return float(weights @ np.asarray(values, dtype=np.float64))


def discounted_return(trajectory, discount):
    if not trajectory.score:
        return 0.0
    return discount ** (len(trajectory.records) - 1)


@dualnav.logging()
def estimate_intelligence(config, env_specs, tasks_per_env, difficulty, limits=RunLimits(), seeds=None):
    """Complexity weighted mean discounted return over generated
    environments.

    :param env_specs: dicts with ``pages``, ``degree``, ``vocab``, ``seed``
        and optionally ``drift``.
    """
    if not env_specs:
        raise ContractViolation("at least one environment spec is needed")
    discount = config.cost_model.discount
    kolmogorov, values = [], []
    for spec in env_specs:
        env = generate_environment(
            spec["pages"], spec["degree"], spec["vocab"], spec["seed"], spec.get("drift", 0.0)
        )
        tasks = sample_tasks(env, tasks_per_env, difficulty, spec["seed"])
        report = evaluate(config, env, tasks, limits, seeds)
        kolmogorov.append(kolmogorov_estimate(env))
        values.append(
            float(np.mean([discounted_return(t, discount) for t in report.trajectories]))
        )
    return IntelligenceEstimate(
        weighted_intelligence(kolmogorov, values), len(env_specs), discount
    )


def default_matrix(s1, planner, gate, cost_model=None):
    """The ablation rows: both systems, System 2 with and without memory,
    System 1 alone."""
    cost_model = CostModel() if cost_model is None else cost_model
    return [
        AgentConfig("dual", s1, planner, gate, True, cost_model),
        AgentConfig("s2-memory", None, planner, None, True, cost_model),
        AgentConfig("s2-no-memory", None, planner, None, False, cost_model),
        AgentConfig("s1-only", s1, None, None, False, cost_model),
    ]


def ablate(rows, env, tasks, limits=RunLimits(), seeds=None):
    """One report per agent configuration, each with its own memory."""
    return [evaluate(config, env, tasks, limits, seeds, pool=[]) for config in rows]


@dualnav.logging()
def prepare_agent(
    env,
    tasks,
    planner=None,
    cost_model=None,
    architecture="cross-encoder",
    objective="sft",
    epochs=20,
    negatives=3,
    seed=0,
    dimension=None,
    label="dual",
):
    """Train System 1 on oracle demonstrations and the gate on labelled
    switch data for ``tasks``."""
    planner = PlannerConfig() if planner is None else planner
    cost_model = CostModel() if cost_model is None else cost_model
    demos = build_demos(env, tasks, negatives, "random", seed)
    params = init_scorer(architecture, dimension, seed)
    params = train_offline(params, env, demos, objective, epochs=epochs, seed=seed).params
    rows = label_switch_data(env, tasks, params, planner, None, cost_model)
    gate = train_gate(GateParams(), rows, seed=seed).gate
    return AgentConfig(label, params, planner, gate, True, cost_model)


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for report in reports:
            for row in report.rows:
                writer.writerow(row.to_dict())


def write_summary_csv(reports, path):
    fields = ("config", "episodes", "success_rate", "mean_tokens", "s2_fraction")
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.summary())


def write_trajectories(reports, path):
    rows = []
    for report in reports:
        for trajectory in report.trajectories:
            for row in trajectory.to_rows():
                row["config"] = report.config
                rows.append(row)
    return write_jsonl(path, rows)


@dataclass(frozen=True)
class RunConfig:
    """Every run parameter, as read from a JSON run-config file."""

    limits: RunLimits = field(default_factory=RunLimits)
    cost_model: CostModel = field(default_factory=CostModel)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    selection: str = "hard"
    recall_m: int = 3

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"limits", "cost_model", "planner", "switch", "seed", "jobs", "epochs"}
        if unknown:
            raise InvalidConfigError("unknown run config keys: %s" % ", ".join(sorted(unknown)))
        limits = dict(data.get("limits", {}))
        for key in ("seed", "jobs", "epochs"):
            if key in data:
                limits[key] = data[key]
        switch = data.get("switch", {})
        selection = switch.get("selection", "hard")
        if selection not in SELECTIONS:
            raise InvalidConfigError("unknown selection %r" % selection)
        if "stuck_threshold" in switch:
            limits["stuck_threshold"] = switch["stuck_threshold"]
        return cls(
            RunLimits.from_dict(limits),
            CostModel.from_dict(data.get("cost_model", {})),
            PlannerConfig.from_dict(data.get("planner", {})),
            selection,
            int(switch.get("recall_m", 3)),
        )

    @classmethod
    def from_file(cls, path):
        with open(path) as handle:
            try:
                data = json.load(handle)
            except ValueError as exc:
                raise InvalidConfigError("%s is not valid JSON: %s" % (path, exc))
        return cls.from_dict(data)

    def merged(self, **overrides):
        """Apply command line overrides; ``None`` values are ignored.
        Limit fields go to ``limits``."""
        overrides = {key: value for key, value in overrides.items() if value is not None}
        limit_keys = set(RunLimits().to_dict())
        limits = {key: overrides.pop(key) for key in list(overrides) if key in limit_keys}
        merged = replace(self, **overrides)
        if limits:
            merged = replace(merged, limits=replace(self.limits, **limits))
        return merged


def agent_from_run_config(run_config, label, s1=None, gate=None, use_planner=True, memory=True, online=None):
    return AgentConfig(
        label,
        s1,
        run_config.planner if use_planner else None,
        gate,
        memory,
        run_config.cost_model,
        run_config.recall_m,
        online,
        run_config.selection,
    )

