# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""Shared agent substrate: page states, actions, trajectories, candidate
enumeration and featurization, the mixture policy and the token-cost model.
"""
import logging
from collections import deque
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import dualnav
from .dualnav import ContractViolation, InvalidConfigError, MethodUnavailable
from .dualnav_tools import element_depths, render_page, stable_hash, write_jsonl
from .dualnav_webenv import Element, step

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

ACTION_KINDS = ("click", "type-text", "scroll", "open-tab", "stop")
SYSTEMS = ("S1", "S2")
MAX_STATES = 10000

# Named dense features occupy the first DENSE_SLOTS indices
DENSE_SLOTS = 24
BIAS = 0
ACTION_SLOTS = {"click": 1, "type-text": 2, "scroll": 3, "open-tab": 4, "stop": 5}
ELEMENT_SLOTS = {"link": 6, "button": 7, "textbox": 8, "scroll-region": 9}
GOAL_OVERLAP = 10
PAGE_OVERLAP = 11
DEPTH = 12
POSITION = 13
ATTRIBUTE_COUNT = 14
ANSWER_OVERLAP = 15
ACTIVATED_OVERLAP = 16
TYPED_OVERLAP = 17
SELF_LINK = 18
INVALID = 19
TITLE_OVERLAP = 20


@dataclass(frozen=True)
class PageState:
    """Observation s_t: the page, the first visible element index, typed
    buffers as sorted ``(element id, tokens)`` pairs and the sorted ids of
    activated buttons."""

    page: int
    window: int = 0
    buffers: tuple = ()
    activated: tuple = ()
    invalid: bool = False

    def digest(self):
        return stable_hash(
            self.page,
            self.window,
            [[eid, list(tokens)] for eid, tokens in self.buffers],
            list(self.activated),
            self.invalid,
        )

    def navigate(self, target):
        return PageState(target)

    def activate(self, element_id):
        activated = tuple(sorted(set(self.activated) | {element_id}))
        return replace(self, activated=activated, invalid=False)

    def fill(self, element_id, tokens):
        buffers = dict(self.buffers)
        buffers[element_id] = tuple(tokens)
        return replace(self, buffers=tuple(sorted(buffers.items())), invalid=False)

    def buffer(self, element_id):
        return dict(self.buffers).get(element_id, ())

    def to_dict(self):
        return {
            "page": self.page,
            "window": self.window,
            "buffers": [[eid, list(tokens)] for eid, tokens in self.buffers],
            "activated": list(self.activated),
            "invalid": self.invalid,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            page=int(data["page"]),
            window=int(data.get("window", 0)),
            buffers=tuple(
                (int(eid), tuple(int(t) for t in tokens))
                for eid, tokens in data.get("buffers", ())
            ),
            activated=tuple(int(eid) for eid in data.get("activated", ())),
            invalid=bool(data.get("invalid", False)),
        )


@dataclass(frozen=True)
class Action:
    kind: str
    element: object = None
    text: tuple = ()
    answer: tuple = ()
    ua: bool = False
    reason: str = ""

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ContractViolation("unknown action kind %r" % self.kind)
        if self.kind in ("click", "type-text", "open-tab") and self.element is None:
            raise ContractViolation("%s needs an element" % self.kind)

    @classmethod
    def click(cls, element):
        return cls("click", element)

    @classmethod
    def type_text(cls, element, text):
        return cls("type-text", element, text=tuple(text))

    @classmethod
    def scroll(cls):
        return cls("scroll")

    @classmethod
    def open_tab(cls, element):
        return cls("open-tab", element)

    @classmethod
    def stop(cls, answer=(), ua=False, reason=""):
        return cls("stop", answer=tuple(answer), ua=ua, reason=reason)

    @property
    def emitted_length(self):
        return (
            1 + (self.element is not None) + len(self.text) + len(self.answer)
        )

    @property
    def key(self):
        """Identity used to match memory entries: open-tab and click on
        the same element count as the same action."""
        return ("click" if self.kind == "open-tab" else self.kind, self.element)

    def to_dict(self):
        data = {"kind": self.kind}
        if self.element is not None:
            data["element"] = self.element
        if self.text:
            data["text"] = list(self.text)
        if self.answer:
            data["answer"] = list(self.answer)
        if self.ua:
            data["ua"] = True
        if self.reason:
            data["reason"] = self.reason
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["kind"],
            data.get("element"),
            text=tuple(data.get("text", ())),
            answer=tuple(data.get("answer", ())),
            ua=bool(data.get("ua", False)),
            reason=data.get("reason", ""),
        )


def _candidate_order(action):
    # element actions by element id, then page-level scroll and stop
    return (
        action.element is None,
        action.element or 0,
        ACTION_KINDS.index(action.kind),
    )


def enumerate_candidates(env, state, goal):
    """All actions available in ``state``: every visible element with the
    kinds applicable to it, a scroll when the page overflows the window and
    a stop answering with the page's first content tokens."""
    page = env.pages[state.page]
    candidates = []
    for element in page.visible(state.window):
        if element.kind == "link":
            candidates += [Action.click(element.id), Action.open_tab(element.id)]
        elif element.kind == "textbox":
            candidates.append(Action.type_text(element.id, goal.intent[:2]))
        else:
            candidates.append(Action.click(element.id))
    if page.overflows():
        candidates.append(Action.scroll())
    candidates.append(Action.stop(answer=page.answer))
    return sorted(candidates, key=_candidate_order)


class FeatureVector(object):
    """Sparse vector: sorted ``indices`` with their ``values``."""

    __slots__ = ("dimension", "indices", "values")

    def __init__(self, dimension, entries):
        self.dimension = dimension
        items = sorted((i, v) for i, v in entries.items() if v != 0.0)
        for index, value in items:
            if not 0 <= index < dimension:
                raise ContractViolation("feature index %s out of range" % index)
            if not np.isfinite(value):
                raise ContractViolation("feature %s is not finite" % index)
        self.indices = np.array([i for i, _v in items], dtype=np.int64)
        self.values = np.array([v for _i, v in items], dtype=np.float64)

    def get(self, index):
        position = np.searchsorted(self.indices, index)
        if position < len(self.indices) and self.indices[position] == index:
            return float(self.values[position])
        return 0.0

    def to_dense(self):
        dense = np.zeros(self.dimension)
        dense[self.indices] = self.values
        return dense

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        return (
            isinstance(other, FeatureVector)
            and self.dimension == other.dimension
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<FeatureVector dim=%d nnz=%d>" % (self.dimension, len(self))


def _dimension(dimension):
    dimension = dualnav.feature_dimension if dimension is None else dimension
    if dimension <= DENSE_SLOTS:
        raise InvalidConfigError(
            "feature dimension must exceed %d, got %s" % (DENSE_SLOTS, dimension)
        )
    return dimension


@lru_cache(maxsize=65536)
def _hashed(name, dimension):
    value = stable_hash(name)
    sign = 1.0 if value >> 63 else -1.0
    return DENSE_SLOTS + value % (dimension - DENSE_SLOTS), sign


@lru_cache(maxsize=4096)
def dom_depths(page):
    """Nesting depth of every element in the rendered DOM of ``page``."""
    return element_depths(render_page(page, pretty_print=False))


def _add_hashed(entries, name, dimension, value=1.0):
    index, sign = _hashed(name, dimension)
    entries[index] = entries.get(index, 0.0) + sign * value


def _resolve(env, state, candidate):
    if isinstance(candidate, Element):
        candidate = Action.click(candidate.id)
    page = env.pages[state.page]
    element = page.element(candidate.element) if candidate.element is not None else None
    return page, candidate, element


def featurize(env, state, candidate, goal, dimension=None):
    """Joint feature vector psi([a; s; g]) of a candidate action.

    :param candidate: an :class:`Action` or an element (read as a click).
    :param int dimension: defaults to ``dualnav.feature_dimension``.
    """
    dimension = _dimension(dimension)
    page, action, element = _resolve(env, state, candidate)
    intent = set(goal.intent)
    entries = {BIAS: 1.0, ACTION_SLOTS[action.kind]: 1.0}
    entries[PAGE_OVERLAP] = float(len(set(page.tokens) & intent))
    if state.invalid:
        entries[INVALID] = 1.0
    if element is not None:
        attributes = element.tokens
        entries[ELEMENT_SLOTS[element.kind]] = 1.0
        entries[GOAL_OVERLAP] = float(len(set(attributes) & intent))
        entries[DEPTH] = float(dom_depths(page).get(element.id, element.depth))
        entries[POSITION] = page.position(element.id) / float(dualnav.window_size)
        entries[ATTRIBUTE_COUNT] = float(len(attributes))
        if element.target == state.page:
            entries[SELF_LINK] = 1.0
        for token in attributes:
            _add_hashed(entries, "a:%d" % token, dimension)
            _add_hashed(entries, "k:%s:%d" % (action.kind, token), dimension)
            if token in intent:
                _add_hashed(entries, "m:%d" % token, dimension)
        for first, second in zip(attributes, attributes[1:]):
            _add_hashed(entries, "b:%d:%d" % (first, second), dimension)
    if action.kind == "type-text":
        entries[TYPED_OVERLAP] = float(len(set(action.text) & intent))
    if action.kind == "stop":
        entries[ANSWER_OVERLAP] = float(len(set(action.answer) & intent))
        entries[TITLE_OVERLAP] = float(len(set(page.title) & intent))
        activated = set()
        for eid in state.activated:
            activated.update(page.element(eid).tokens)
        entries[ACTIVATED_OVERLAP] = float(len(activated & intent))
        for token in set(action.answer) & intent:
            _add_hashed(entries, "m:%d" % token, dimension)
    return FeatureVector(dimension, entries)


def featurize_pair(env, state, candidate, goal, dimension=None):
    """Separate encodings for the bi-encoder.

    :return tuple: ``(candidate_vector, context_vector)``. Token features of
        the candidate and of the goal share hash buckets, so that their dot
        product through a shared embedding table can learn matches.
    """
    dimension = _dimension(dimension)
    page, action, element = _resolve(env, state, candidate)
    left = {BIAS: 1.0, ACTION_SLOTS[action.kind]: 1.0}
    if element is not None:
        left[ELEMENT_SLOTS[element.kind]] = 1.0
        left[DEPTH] = float(dom_depths(page).get(element.id, element.depth))
        left[POSITION] = page.position(element.id) / float(dualnav.window_size)
        for token in element.tokens:
            _add_hashed(left, "t:%d" % token, dimension)
    for token in action.text + action.answer:
        _add_hashed(left, "t:%d" % token, dimension)
    right = {BIAS: 1.0}
    if state.invalid:
        right[INVALID] = 1.0
    for token in goal.intent:
        _add_hashed(right, "t:%d" % token, dimension)
    for token in page.tokens:
        _add_hashed(right, "p:%d" % token, dimension)
    return FeatureVector(dimension, left), FeatureVector(dimension, right)


class Distribution(object):
    """Probabilities over an ordered candidate tuple."""

    def __init__(self, candidates, probs):
        self.candidates = tuple(candidates)
        self.probs = np.asarray(probs, dtype=np.float64)
        if len(self.candidates) != len(self.probs):
            raise ContractViolation("candidates and probabilities differ in length")

    def prob(self, action):
        for candidate, prob in zip(self.candidates, self.probs):
            if candidate == action:
                return float(prob)
        return 0.0

    def argmax(self):
        index = int(np.argmax(self.probs))
        return self.candidates[index], float(self.probs[index])

    def sample(self, rng):
        return self.candidates[int(rng.choice(len(self.candidates), p=self.probs))]

    def is_valid(self, tolerance=1e-9):
        return (
            len(self.probs) > 0
            and bool(np.all(self.probs >= 0.0))
            and abs(float(self.probs.sum()) - 1.0) <= tolerance
        )


def mixture_action_distribution(p1, p2, lam):
    """lambda * p1 + (1 - lambda) * p2 over a shared candidate set."""
    if p1.candidates != p2.candidates:
        raise ContractViolation("mixture of distributions over different candidates")
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation("lambda %s outside [0, 1]" % lam)
    if not (p1.is_valid() and p2.is_valid()):
        raise ContractViolation("mixture inputs must be probability distributions")
    return Distribution(p1.candidates, lam * p1.probs + (1.0 - lam) * p2.probs)


@dataclass(frozen=True)
class CostModel:
    s1_cost_per_action: object = None
    s2_cost_per_expansion: float = 10.0
    discount: float = 0.9

    def __post_init__(self):
        if self.s1_cost_per_action is not None and self.s1_cost_per_action < 0:
            raise InvalidConfigError("s1 cost must be >= 0")
        if self.s2_cost_per_expansion < 0:
            raise InvalidConfigError("s2 cost must be >= 0")
        if not 0.0 < self.discount <= 1.0:
            raise InvalidConfigError("discount must lie in (0, 1]")

    def action_cost(self, action):
        if self.s1_cost_per_action is None:
            return action.emitted_length
        return self.s1_cost_per_action

    def to_dict(self):
        return {
            "s1_cost_per_action": self.s1_cost_per_action,
            "s2_cost_per_expansion": self.s2_cost_per_expansion,
            "discount": self.discount,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{key: data[key] for key in cls().to_dict() if key in data})


@dataclass(frozen=True)
class StepRecord:
    state: PageState
    action: Action
    system: str
    reasoning_tokens: int = 0
    invalid: bool = False
    unchanged: bool = False

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ContractViolation("unknown system %r" % self.system)

    @property
    def failed(self):
        return self.invalid or self.unchanged


@dataclass(frozen=True)
class Trajectory:
    records: tuple = ()
    task: object = None
    score: object = None

    def appended(self, record):
        return replace(self, records=self.records + (record,))

    def completed(self, score):
        return replace(self, score=int(score))

    def concat(self, other):
        return Trajectory(self.records + other.records, self.task)

    def __len__(self):
        return len(self.records)

    def to_rows(self):
        return [
            {
                "task": self.task.id if self.task is not None else None,
                "step": index,
                "state_digest": "%016x" % record.state.digest(),
                "page": record.state.page,
                "action": record.action.to_dict(),
                "system": record.system,
                "reasoning_tokens": record.reasoning_tokens,
                "invalid": record.invalid,
            }
            for index, record in enumerate(self.records)
        ]

    def to_jsonl(self, path):
        return write_jsonl(path, self.to_rows())


def trajectory_cost(trajectory, model):
    """Tokens spent: the emitted length of every action (or the fixed r1),
    plus the reasoning tokens of System 2 steps."""
    total = 0
    for record in trajectory.records:
        total += model.action_cost(record.action)
        if record.system == "S2":
            total += record.reasoning_tokens
    return total


# Exhaustive oracles over the reachable state graph


def initial_state(env):
    return PageState(env.start)


def goal_reached(env, state, goal):
    """Whether the stop candidate of ``state`` completes the task."""
    if not goal.is_satisfied(state):
        return False
    return goal.kind != "answer" or env.pages[state.page].answer == tuple(goal.answer)


def successors(env, state, goal):
    """``(action, next_state)`` for every non-stop candidate."""
    return [
        (action, step(env, state, action).state)
        for action in enumerate_candidates(env, state, goal)
        if action.kind != "stop"
    ]


def reachable_states(env, goal, source=None, limit=MAX_STATES):
    """BFS over the states reachable through candidate actions.

    :return dict: state -> list of ``(action, next_state)``.
    :raise MethodUnavailable: beyond ``limit`` states.
    """
    source = initial_state(env) if source is None else source
    edges = {}
    queue = deque([source])
    seen = {source}
    while queue:
        state = queue.popleft()
        edges[state] = successors(env, state, goal)
        for _action, following in edges[state]:
            if following not in seen:
                seen.add(following)
                if len(seen) > limit:
                    raise MethodUnavailable(
                        "more than %d reachable states; use monte-carlo" % limit
                    )
                queue.append(following)
    return edges


def distances_to_goal(env, goal, source=None, limit=MAX_STATES):
    """Fewest non-stop actions from each reachable state to a state where
    stopping completes the task. States that cannot reach one are absent."""
    edges = reachable_states(env, goal, source, limit)
    reverse = {}
    for state, pairs in edges.items():
        for _action, following in pairs:
            reverse.setdefault(following, set()).add(state)
    distances = {state: 0 for state in edges if goal_reached(env, state, goal)}
    queue = deque(distances)
    while queue:
        state = queue.popleft()
        for previous in reverse.get(state, ()):
            if previous not in distances:
                distances[previous] = distances[state] + 1
                queue.append(previous)
    return distances


def optimal_actions(env, state, goal, distances=None):
    """Actions on a shortest path to completion; the stop when stopping
    already completes the task, empty when the goal is unreachable."""
    if distances is None:
        distances = distances_to_goal(env, goal, source=state)
    candidates = enumerate_candidates(env, state, goal)
    if goal_reached(env, state, goal):
        return [action for action in candidates if action.kind == "stop"]
    distance = distances.get(state)
    if distance is None:
        return []
    return [
        action
        for action, following in successors(env, state, goal)
        if distances.get(following) == distance - 1
    ]
