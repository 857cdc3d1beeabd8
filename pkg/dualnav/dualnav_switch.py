# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""Choose, step by step, between the fast and the slow system."""
import logging
from collections import namedtuple
from dataclasses import dataclass, replace

import numpy as np

from . import dualnav
from .dualnav import ContractViolation, DataError, check_finite, chunked
from .dualnav_agentcore import distances_to_goal, initial_state, optimal_actions
from .dualnav_system1 import greedy_action
from .dualnav_system2 import WorkingMemory, plan
from .dualnav_tools import load_tensors, read_jsonl, save_tensors, write_jsonl
from .dualnav_webenv import step

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

FEATURES = (
    "remaining",
    "novelty",
    "stuck",
    "invalid",
    "intent_len",
    "last_system",
    "steps",
    "s1_confidence",
)
STUCK_THRESHOLD = 3

SwitchDecision = namedtuple("SwitchDecision", ["lam", "system", "reason"])
GateResult = namedtuple("GateResult", ["gate", "curve"])


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


class GateParams(object):
    def __init__(self, weights=None, bias=0.0):
        weights = np.zeros(len(FEATURES)) if weights is None else weights
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (len(FEATURES),):
            raise ContractViolation("the gate needs %d weights" % len(FEATURES))
        self.bias = float(bias)

    def probability(self, vector):
        """lambda: probability of handing the step to System 1."""
        return float(_sigmoid(self.weights @ vector + self.bias))

    def save(self, path):
        save_tensors(
            path,
            {"kind": "gate", "features": list(FEATURES)},
            weights=self.weights,
            bias=np.array([self.bias]),
        )

    @classmethod
    def load(cls, path):
        header, arrays = load_tensors(path)
        if header.get("kind") != "gate" or tuple(header.get("features", ())) != FEATURES:
            raise DataError("%s does not hold gate parameters" % path)
        return cls(arrays["weights"], float(arrays["bias"][0]))


@dataclass(frozen=True)
class SwitchFeatures:
    remaining: float
    novelty: float
    stuck: int
    invalid: bool
    intent_len: int
    last_system: object
    steps: int
    s1_confidence: float = 0.0

    def vector(self):
        return np.array(
            [
                self.remaining,
                self.novelty,
                self.stuck,
                float(self.invalid),
                self.intent_len,
                1.0 if self.last_system == "S2" else 0.0,
                self.steps,
                self.s1_confidence,
            ],
            dtype=np.float64,
        )

    def to_dict(self):
        return {name: getattr(self, name) for name in FEATURES}

    @classmethod
    def from_dict(cls, data):
        return cls(**{name: data[name] for name in FEATURES})


def decide(gate, features, stuck_threshold=STUCK_THRESHOLD):
    """Rules first: being stuck, an invalid last action and the first step
    of an episode go to System 2. Otherwise the gate decides."""
    if features.stuck >= stuck_threshold:
        return SwitchDecision(0.0, "S2", "rule-stuck")
    if features.invalid:
        return SwitchDecision(0.0, "S2", "rule-invalid")
    if features.steps == 0:
        return SwitchDecision(0.0, "S2", "rule-first-step")
    lam = gate.probability(features.vector())
    return SwitchDecision(lam, "S1" if lam >= 0.5 else "S2", "gate")


class EpisodeContext(object):
    """Tracks what the switch needs to know during one episode.

    When System 2 finds a route to the goal the context commits to it;
    :meth:`route_action` hands its next move to System 1 as long as the
    episode stays on it.
    """

    def __init__(self, goal, max_depth=4):
        self.intent_len = len(goal.intent)
        self.unknown = max_depth + 1
        self.seen = set()
        self.stuck = 0
        self.failed_key = None
        self.invalid = False
        self.last_system = None
        self.steps = 0
        self.remaining = None
        self.route = ()
        self.route_state = None

    def features(self, state, s1_confidence=0.0):
        return SwitchFeatures(
            remaining=float(self.unknown if self.remaining is None else self.remaining),
            novelty=0.0 if state.digest() in self.seen else 1.0,
            stuck=self.stuck,
            invalid=self.invalid,
            intent_len=self.intent_len,
            last_system=self.last_system,
            steps=self.steps,
            s1_confidence=s1_confidence,
        )

    def route_action(self, state):
        """Next move of the committed route, or ``None`` off the route."""
        if self.route and state == self.route_state:
            return self.route[0]
        return None

    def observe(self, state, action, system, outcome=None, plan=None):
        """Record ``action`` taken from ``state``.

        :param outcome: the :class:`StepResult` of the action.
        :param plan: the :class:`Plan` that chose it, on System 2 steps.
        """
        self.seen.add(state.digest())
        invalid = bool(outcome is not None and outcome.invalid)
        failed = invalid or (outcome is not None and outcome.state == state)
        if failed:
            # only the same action failing again counts
            self.stuck = self.stuck + 1 if action.key == self.failed_key else 1
            self.failed_key = action.key
        else:
            self.stuck = 0
            self.failed_key = None
        self.invalid = invalid
        self.last_system = system
        self.steps += 1
        if plan is not None and plan.path and plan.path[0] == action:
            self.route = plan.path[1:]
        elif self.route and self.route[0] == action:
            self.route = self.route[1:]
        else:
            self.route = ()
        if failed or outcome is None:
            self.route = ()
        self.route_state = outcome.state if self.route else None
        if plan is not None:
            self.remaining = None if plan.depth is None else max(plan.depth - 1, 0)
        elif self.route:
            self.remaining = len(self.route) - 1
        elif self.remaining is not None:
            self.remaining = max(self.remaining - 1, 0)


@dualnav.logging()
def train_gate(gate, labeled, iterations=200, learning_rate=0.1, batch_size=32, seed=0):
    """Logistic regression of the S1 label by mini-batch gradient descent.

    Features are standardized while training; the returned gate works on
    raw features.

    :param labeled: ``(SwitchFeatures, "S1" | "S2")`` pairs, or rows of
        :func:`label_switch_data`.
    :return GateResult: the trained gate and its accuracy on ``labeled``
        after every iteration.
    """
    if not labeled:
        raise ContractViolation("no labelled switch data")
    pairs = [(row[-2], row[-1]) for row in labeled]
    raw = np.array([features.vector() for features, _label in pairs])
    targets = np.array([1.0 if label == "S1" else 0.0 for _features, label in pairs])
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale[scale == 0.0] = 1.0
    inputs = (raw - mean) / scale
    weights = gate.weights * scale
    bias = gate.bias + float(gate.weights @ mean)
    rng = np.random.default_rng(seed)
    curve = []
    for iteration in range(iterations):
        order = rng.permutation(len(labeled))
        for batch_index, chunk in enumerate(chunked(order, batch_size)):
            logits = inputs[chunk] @ weights + bias
            loss = float(np.mean(np.logaddexp(0.0, logits) - targets[chunk] * logits))
            check_finite(loss, "gate", iteration, batch_index)
            error = (_sigmoid(logits) - targets[chunk]) / len(chunk)
            weights = weights - learning_rate * (inputs[chunk].T @ error)
            bias = bias - learning_rate * float(error.sum())
        predictions = _sigmoid(inputs @ weights + bias) >= 0.5
        curve.append(float(np.mean(predictions == (targets == 1.0))))
    raw_weights = weights / scale
    return GateResult(GateParams(raw_weights, bias - float(raw_weights @ mean)), curve)


@dualnav.logging()
def label_switch_data(env, tasks, s1_params, planner, budget, cost_model, max_steps=30):
    """Walk every task and label each step S1 when the fast proposal is
    optimal according to the exhaustive oracle, S2 otherwise.

    The walk is an episode of the dual agent: the planner acts on S2 steps
    and wherever a switch rule fires, and the routes it finds are committed
    to. On a committed route the fast proposal is the route's next move,
    with confidence 1.

    :param int budget: planner expansions; ``None`` keeps the planner's.
    :return list: ``(task id, step, SwitchFeatures, label)`` rows.
    """
    if budget is not None:
        planner = replace(planner, max_expansions=budget)
    neutral = GateParams()
    rows = []
    for task in tasks:
        distances = distances_to_goal(env, task)
        context = EpisodeContext(task, planner.max_depth)
        working = WorkingMemory()
        state = initial_state(env)
        for index in range(max_steps):
            fast = context.route_action(state)
            if fast is not None:
                confidence = 1.0
            else:
                fast, confidence = greedy_action(s1_params, env, state, task)
            features = context.features(state, confidence)
            optimal = optimal_actions(env, state, task, distances)
            label = "S1" if fast in optimal else "S2"
            rows.append((task.id, index, features, label))
            result = None
            if label == "S2" or decide(neutral, features).reason != "gate":
                result = plan(planner, env, state, working, [], task, cost_model)
                action = result.action
            else:
                action = fast
            if action.kind == "stop":
                break
            outcome = step(env, state, action)
            context.observe(state, action, "S1" if result is None else "S2", outcome, result)
            working = working.push(state, action, outcome.invalid)
            state = outcome.state
    logger.debug(
        "labelled %d switch steps, %d for S1",
        len(rows),
        sum(1 for row in rows if row[3] == "S1"),
    )
    return rows


def save_switch_data(rows, path):
    return write_jsonl(
        path,
        (
            {"task": task, "step": index, "features": features.to_dict(), "label": label}
            for task, index, features, label in rows
        ),
    )


def load_switch_data(path):
    return [
        (row["task"], row["step"], SwitchFeatures.from_dict(row["features"]), row["label"])
        for row in read_jsonl(path)
    ]
