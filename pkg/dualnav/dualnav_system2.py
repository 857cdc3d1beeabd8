# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""System 2: deliberate by searching a cloned environment, condition on
working memory and recalled experiences, reflect on finished episodes and
improve an online policy under a KL constraint."""
import heapq
import logging
from collections import Counter, namedtuple
from dataclasses import dataclass

import numpy as np

from . import dualnav
from .dualnav import (
    ContractViolation,
    DataError,
    InvalidConfigError,
    MethodUnavailable,
    check_finite,
    message,
)
from .dualnav_agentcore import (
    MAX_STATES,
    Action,
    Distribution,
    enumerate_candidates,
    featurize,
    goal_reached,
    initial_state,
    reachable_states,
)
from .dualnav_tools import load_tensors, read_jsonl, save_tensors, stable_hash, write_jsonl
from .dualnav_webenv import step

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

WORKING_MEMORY_SIZE = 10
RECALL_SIZE = 3
REPEAT_THRESHOLD = 3
RESIDUAL = 1e-10
ADVANTAGE_METHODS = ("value-iteration", "monte-carlo")

Plan = namedtuple(
    "Plan", ["action", "reasoning_tokens", "trace", "value", "depth", "path"], defaults=((),)
)
AdvantageEstimate = namedtuple("AdvantageEstimate", ["value", "method"])
LossResult = namedtuple("LossResult", ["loss", "gradient"])
OnlineResult = namedtuple("OnlineResult", ["params", "curve"])


@dataclass(frozen=True)
class PlannerConfig:
    max_depth: int = 4
    max_expansions: int = 200
    breadth: int = 5
    penalty_weight: float = 1.0
    repetition_weight: float = 0.5

    def __post_init__(self):
        if self.max_depth < 1 or self.breadth < 1 or self.max_expansions < 0:
            raise InvalidConfigError("planner needs depth >= 1, breadth >= 1, budget >= 0")

    def to_dict(self):
        return {
            "max_depth": self.max_depth,
            "max_expansions": self.max_expansions,
            "breadth": self.breadth,
            "penalty_weight": self.penalty_weight,
            "repetition_weight": self.repetition_weight,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: data[key] for key in cls().to_dict() if key in data})


@dataclass(frozen=True)
class MemoryEntry:
    digest: int
    key: tuple
    invalid: bool = False


@dataclass(frozen=True)
class WorkingMemory:
    """The last ``capacity`` (state, action) pairs of the episode."""

    entries: tuple = ()
    capacity: int = WORKING_MEMORY_SIZE

    def push(self, state, action, invalid=False):
        entry = MemoryEntry(state.digest(), action.key, invalid)
        return WorkingMemory((self.entries + (entry,))[-self.capacity :], self.capacity)

    def count(self, digest, key):
        return sum(1 for e in self.entries if e.digest == digest and e.key == key)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class Penalty:
    digest: int
    key: tuple
    weight: float


@dataclass(frozen=True)
class Experience:
    """What was learned from one episode: the action kinds that solved it,
    or the state/action pairs to avoid next time and the pages it went
    through."""

    signature: int
    intent: tuple
    outcome: int
    penalties: tuple = ()
    summary: tuple = ()

    def to_dict(self):
        return {
            "signature": "%016x" % self.signature,
            "intent": list(self.intent),
            "outcome": self.outcome,
            "penalties": [
                {"digest": "%016x" % p.digest, "action": list(p.key), "weight": p.weight}
                for p in self.penalties
            ],
            "summary": list(self.summary),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            int(data["signature"], 16),
            tuple(int(t) for t in data["intent"]),
            int(data["outcome"]),
            tuple(
                Penalty(int(p["digest"], 16), tuple(p["action"]), float(p["weight"]))
                for p in data.get("penalties", ())
            ),
            tuple(data.get("summary", ())),
        )


def save_experiences(pool, path):
    return write_jsonl(path, (experience.to_dict() for experience in pool))


def load_experiences(path):
    return [Experience.from_dict(row) for row in read_jsonl(path)]


def reflect(trajectory, score):
    """Summarize a finished episode.

    A success keeps the sequence of action kinds that solved the task and
    no penalty. On failure, invalid actions and (state, action) pairs
    repeated at least three times are penalized with their number of
    occurrences; when the episode was given up as unachievable, the move
    that entered the page where it was abandoned is penalized too.
    """
    intent = tuple(trajectory.task.intent) if trajectory.task is not None else ()
    signature = stable_hash(sorted(intent))
    if score:
        summary = tuple(record.action.kind for record in trajectory.records)
        return Experience(signature, intent, 1, (), summary)
    records = [r for r in trajectory.records if r.action.kind != "stop"]
    counts = Counter((r.state.digest(), r.action.key) for r in records)
    penalties, seen = [], set()
    for record in records:
        pair = (record.state.digest(), record.action.key)
        if pair in seen:
            continue
        if record.invalid or counts[pair] >= REPEAT_THRESHOLD:
            seen.add(pair)
            penalties.append(Penalty(pair[0], pair[1], float(counts[pair])))
    last = trajectory.records[-1] if trajectory.records else None
    if last is not None and last.action.ua:
        final_page = last.state.page
        for record in reversed(records):
            if record.state.page != final_page:
                pair = (record.state.digest(), record.action.key)
                if pair not in seen:
                    penalties.append(Penalty(pair[0], pair[1], 1.0))
                break
    summary = []
    for record in trajectory.records:
        if not summary or summary[-1] != record.state.page:
            summary.append(record.state.page)
    return Experience(signature, intent, 0, tuple(penalties), tuple(summary))


def recall(pool, goal, m=RECALL_SIZE):
    """The ``m`` experiences whose intents are closest to the goal's by
    Jaccard similarity; ties go to the newest."""
    intent = set(goal.intent)
    scored = []
    for index, experience in enumerate(pool):
        other = set(experience.intent)
        union = intent | other
        similarity = len(intent & other) / float(len(union)) if union else 0.0
        scored.append((-similarity, -index, experience))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [experience for _s, _i, experience in scored[:m]]


class _Node(object):
    __slots__ = ("state", "action", "depth", "acc", "seq", "goal", "children", "value")

    def __init__(self, state, action, depth, acc, seq, goal=False):
        self.state = state
        self.action = action
        self.depth = depth
        self.acc = acc
        self.seq = seq
        self.goal = goal
        self.children = []
        self.value = None


def _penalty_table(recalled):
    table = Counter()
    for experience in recalled:
        for penalty in experience.penalties:
            table[(penalty.digest, tuple(penalty.key))] += penalty.weight
    return table


def _backup(node, gamma):
    if node.children:
        node.value = max(_backup(child, gamma) for child in node.children)
    elif node.goal:
        node.value = node.acc + gamma**node.depth
    else:
        node.value = node.acc
    return node.value


def _best_child(node):
    best = node.children[0]
    for child in node.children[1:]:
        if child.value > best.value:
            best = child
    return best


def _route(env, root):
    """Actions from ``root`` to the goal node of its best path, closed by the
    stop that completes the task; empty when the best path misses the goal."""
    actions, node = [], root
    while not node.goal:
        if not node.children:
            return ()
        node = _best_child(node)
        actions.append(node.action)
    actions.append(Action.stop(answer=env.pages[node.state.page].answer))
    return tuple(actions)


def plan(config, env, state, working, recalled, goal, cost_model, policy=None):
    """Best-first lookahead from ``state`` over cloned states.

    Nodes are expanded by decreasing accumulated value, shallowest first,
    until the depth limit or the expansion budget stops the search.
    Reaching a state where stopping completes the task is worth
    ``discount ** depth``; recalled penalties and actions repeated in
    working memory lower the value of a move.

    :param policy: optional :class:`OnlinePolicyParams` ordering siblings
        before the breadth cut.
    :return Plan: the first action of the best path, the tokens spent and,
        when the best path reaches the goal, the whole route.
    """
    gamma = cost_model.discount
    penalties = _penalty_table(recalled)

    def children_of(node):
        digest = node.state.digest()
        candidates = [
            c for c in enumerate_candidates(env, node.state, goal) if c.kind != "stop"
        ]
        probs = None
        if policy is not None and candidates:
            probs = policy_distribution(policy, env, node.state, goal, candidates=candidates).probs
        children, reached = [], set()
        for index, action in enumerate(candidates):
            following = step(env, node.state, action).state
            if following in reached:
                continue
            reached.add(following)
            acc = node.acc - config.penalty_weight * penalties.get((digest, action.key), 0.0)
            if working.count(digest, action.key) >= 2:
                acc -= config.repetition_weight
            child = _Node(following, action, node.depth + 1, acc, 0, goal_reached(env, following, goal))
            order = -probs[index] if probs is not None else 0.0
            children.append((not child.goal, -child.acc, order, index, child))
        children.sort(key=lambda item: item[:4])
        return [item[-1] for item in children[: config.breadth]]

    root = _Node(state, None, 0, 0.0, 0, goal_reached(env, state, goal))
    if config.max_expansions == 0:
        if root.goal:
            stop = Action.stop(answer=env.pages[state.page].answer)
            return Plan(stop, 0, ("greedy",), 1.0, 0, (stop,))
        root.children = children_of(root)
        if not root.children:
            return Plan(Action.stop(ua=True, reason="no move"), 0, ("greedy",), 0.0, None)
        for child in root.children:
            _backup(child, gamma)
        best = _best_child(root)
        root.value = best.value
        return Plan(best.action, 0, ("greedy",), best.value, 1 if best.goal else None, _route(env, root))

    seq = 0
    best_acc = {state: 0.0}
    heap = [(0.0, 0, 0, root)]
    expansions = 0
    frontier = False
    trace = []
    while heap:
        _priority, _depth, _seq, node = heapq.heappop(heap)
        if node.depth >= config.max_depth or expansions >= config.max_expansions:
            frontier = True
            continue
        expansions += 1
        trace.append(
            "d%d p%d %s acc=%.2f"
            % (node.depth, node.state.page, node.action.key if node.action else "root", node.acc)
        )
        for child in children_of(node):
            seq += 1
            child.seq = seq
            node.children.append(child)
            if child.goal:
                continue
            known = best_acc.get(child.state)
            if known is not None and child.acc <= known:
                continue
            best_acc[child.state] = child.acc
            heapq.heappush(heap, (-child.acc, child.depth, seq, child))
    tokens = int(round(expansions * cost_model.s2_cost_per_expansion))
    if root.goal:
        # stopping here beats every longer route
        for child in root.children:
            _backup(child, gamma)
        root.value = 1.0
        root.children = []
        return Plan(
            Action.stop(answer=env.pages[state.page].answer), tokens, tuple(trace), 1.0, 0, _route(env, root)
        )
    value = _backup(root, gamma)
    if value <= 0.0 and not frontier:
        message("S2", goal.id, False, "no path to the goal, giving up")
        action = Action.stop(ua=True, reason="unachievable")
        return Plan(action, tokens, tuple(trace), value, None)
    best = _best_child(root)
    route = _route(env, root)
    depth = len(route) - 1 if route else None
    return Plan(best.action, tokens, tuple(trace), value, depth, route)


def solve_values(env, goal, discount=0.9, source=None, limit=MAX_STATES):
    """Optimal values V*(s) for a binary reward on stopping, by value
    iteration over every reachable state.

    :raise MethodUnavailable: above ``limit`` reachable states.
    """
    edges = reachable_states(env, goal, source, limit)
    states = list(edges)
    index = {state: i for i, state in enumerate(states)}
    stop_reward = np.array([1.0 if goal_reached(env, s, goal) else 0.0 for s in states])
    successors = [np.array([index[f] for _a, f in edges[s]], dtype=np.int64) for s in states]
    values = stop_reward.copy()
    for _iteration in range(100000):
        updated = stop_reward.copy()
        for i, following in enumerate(successors):
            if len(following):
                updated[i] = max(updated[i], discount * values[following].max())
        residual = float(np.abs(updated - values).max())
        values = updated
        if residual <= RESIDUAL:
            break
    return {state: float(values[index[state]]) for state in states}


def _q_value(env, state, action, goal, discount, values):
    if action.kind == "stop":
        return 1.0 if goal_reached(env, state, goal) else 0.0
    return discount * values[step(env, state, action).state]


def advantage_oracle(
    env,
    state,
    action,
    goal,
    method="value-iteration",
    discount=0.9,
    rollouts=10000,
    seed=0,
    values=None,
    horizon=30,
):
    """A*(s, a) = Q*(s, a) - V*(s).

    ``value-iteration`` is exact. ``monte-carlo`` shoots ``rollouts``
    uniformly random continuations after every candidate and keeps the best
    discounted return, a lower bound of Q* that reaches it on deterministic
    dynamics once a shortest continuation has been drawn.
    """
    if method not in ADVANTAGE_METHODS:
        raise InvalidConfigError("unknown advantage method %r" % method)
    if method == "value-iteration":
        if values is None:
            values = solve_values(env, goal, discount, source=state)
        q_value = _q_value(env, state, action, goal, discount, values)
        return AdvantageEstimate(q_value - values[state], method)
    rng = np.random.default_rng(seed)
    memo = {}

    def options(current):
        if current not in memo:
            memo[current] = enumerate_candidates(env, current, goal)
        return memo[current]

    def shoot(first):
        best = 0.0
        for _rollout in range(rollouts):
            current, chosen = state, first
            for t in range(horizon):
                if chosen.kind == "stop":
                    if goal_reached(env, current, goal):
                        best = max(best, discount**t)
                    break
                current = step(env, current, chosen).state
                candidates = options(current)
                chosen = candidates[int(rng.integers(0, len(candidates)))]
        return best

    q_values = {candidate: shoot(candidate) for candidate in options(state)}
    if action not in q_values:
        q_values[action] = shoot(action)
    return AdvantageEstimate(q_values[action] - max(q_values.values()), method)


class OnlinePolicyParams(object):
    """Linear logits over joint features, with the frozen reference the KL
    term is measured against and the constraint strength ``theta``."""

    def __init__(self, weights, reference, theta=1.0):
        if theta <= 0:
            raise InvalidConfigError("theta must be > 0")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.reference = np.asarray(reference, dtype=np.float64)
        self.theta = float(theta)

    @property
    def dimension(self):
        return len(self.weights)

    def refreshed(self):
        return OnlinePolicyParams(self.weights.copy(), self.weights.copy(), self.theta)

    def save(self, path):
        header = {"kind": "online-policy", "dimension": self.dimension, "theta": self.theta}
        save_tensors(path, header, weights=self.weights, reference=self.reference)

    @classmethod
    def load(cls, path):
        header, arrays = load_tensors(path)
        if header.get("kind") != "online-policy":
            raise DataError("%s does not hold an online policy" % path)
        return cls(arrays["weights"], arrays["reference"], header["theta"])


def init_online_policy(dimension=None, theta=1.0):
    dimension = dualnav.feature_dimension if dimension is None else dimension
    return OnlinePolicyParams(np.zeros(dimension), np.zeros(dimension), theta)


def _logits(weights, vectors):
    return np.array([float(v.values @ weights[v.indices]) for v in vectors])


def _softmax(logits):
    exps = np.exp(logits - logits.max())
    return exps / exps.sum()


def policy_distribution(params, env, state, goal, reference=False, candidates=None):
    candidates = enumerate_candidates(env, state, goal) if candidates is None else candidates
    if not candidates:
        raise ContractViolation("no candidate action on page %s" % state.page)
    vectors = [featurize(env, state, c, goal, params.dimension) for c in candidates]
    weights = params.reference if reference else params.weights
    return Distribution(candidates, _softmax(_logits(weights, vectors)))


def policy_kl(params, env, state, goal):
    """KL(pi || pi_ref) at one state."""
    current = policy_distribution(params, env, state, goal).probs
    reference = policy_distribution(params, env, state, goal, reference=True).probs
    mask = current > 0
    return float(np.sum(current[mask] * (np.log(current[mask]) - np.log(reference[mask]))))


@dataclass(frozen=True)
class OnlineItem:
    state: object
    goal: object
    action: Action
    advantage: float


def kl_update_loss(params, env, batch):
    """Mean of (theta * log(pi(a) / pi_ref(a)) - A)^2 with its gradient
    with respect to the policy weights.

    :raise DataError: for actions outside the candidates or with zero
        reference probability.
    """
    if not batch:
        raise ContractViolation("empty batch")
    gradient = np.zeros(params.dimension)
    total = 0.0
    theta = params.theta
    for index, item in enumerate(batch):
        candidates = enumerate_candidates(env, item.state, item.goal)
        try:
            chosen = candidates.index(item.action)
        except ValueError:
            raise DataError("item %d: action %r is not a candidate" % (index, item.action))
        vectors = [featurize(env, item.state, c, item.goal, params.dimension) for c in candidates]
        probs = _softmax(_logits(params.weights, vectors))
        reference = _softmax(_logits(params.reference, vectors))
        if reference[chosen] <= 0.0 or probs[chosen] <= 0.0:
            raise DataError("item %d: zero probability for %r" % (index, item.action))
        residual = theta * (np.log(probs[chosen]) - np.log(reference[chosen])) - item.advantage
        total += residual**2
        # d log pi(a) / dw = phi_a - E_pi[phi]
        scale = 2.0 * residual * theta / len(batch)
        np.add.at(gradient, vectors[chosen].indices, scale * vectors[chosen].values)
        for vector, prob in zip(vectors, probs):
            np.add.at(gradient, vector.indices, -scale * prob * vector.values)
    return LossResult(float(total / len(batch)), gradient)


def _rollout(params, env, task, rng, max_steps):
    state = initial_state(env)
    visited = []
    for _step in range(max_steps):
        action = policy_distribution(params, env, state, task).sample(rng)
        visited.append((state, action))
        if action.kind == "stop":
            return visited, int(goal_reached(env, state, task))
        state = step(env, state, action).state
    return visited, 0


@dualnav.logging()
def train_online(
    params,
    env,
    tasks,
    rounds=5,
    episodes_per_round=None,
    learning_rate=0.1,
    theta=None,
    discount=0.9,
    seed=0,
    max_steps=30,
    updates_per_round=10,
):
    """Roll out the policy, score every visited (state, action) with the
    advantage oracle and regress the KL-constrained objective; the
    reference is refreshed at the start of every round.

    :return OnlineResult: trained parameters and the success rate of the
        rollouts of every round.
    """
    if not tasks:
        raise ContractViolation("online training needs tasks")
    theta = params.theta if theta is None else theta
    current = OnlinePolicyParams(params.weights.copy(), params.reference.copy(), theta)
    episodes = len(tasks) if episodes_per_round is None else episodes_per_round
    rng = np.random.default_rng(seed)
    values = {}
    curve = []
    for round_index in range(rounds):
        current = current.refreshed()
        batch, successes = [], 0
        for episode in range(episodes):
            task = tasks[episode % len(tasks)]
            visited, success = _rollout(current, env, task, rng, max_steps)
            successes += success
            for state, action in visited:
                advantage = _online_advantage(env, state, action, task, discount, values, seed)
                batch.append(OnlineItem(state, task, action, advantage))
        curve.append(successes / float(episodes))
        for update in range(updates_per_round):
            result = kl_update_loss(current, env, batch)
            check_finite(result.loss, "kl update", round_index, update)
            current.weights -= learning_rate / theta**2 * result.gradient
        logger.debug("online round %d: success %.3f", round_index, curve[-1])
    return OnlineResult(current, curve)


def _online_advantage(env, state, action, task, discount, values, seed):
    if task.id not in values:
        try:
            values[task.id] = solve_values(env, task, discount)
        except MethodUnavailable:
            message("S2", task.id, False, "state space too large, using monte-carlo")
            values[task.id] = None
    if values[task.id] is None or state not in values[task.id]:
        return advantage_oracle(
            env, state, action, task, "monte-carlo", discount, rollouts=200, seed=seed
        ).value
    return advantage_oracle(env, state, action, task, discount=discount, values=values[task.id]).value

