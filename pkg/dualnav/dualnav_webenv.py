# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""Synthetic web environments: a directed graph of pages holding
interactive elements, its information measures, drift between episodes and
task sampling.
"""
import json
import logging
import math
from collections import namedtuple
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from . import dualnav
from .dualnav import (
    ContractViolation,
    DivisionByZeroError,
    InvalidSpecError,
    UnsatisfiableDifficultyError,
)
from .dualnav_tools import read_jsonl, write_jsonl

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

ELEMENT_KINDS = ("link", "button", "textbox", "scroll-region")
TASK_KINDS = ("page", "element", "answer")
TELEPORT = 0.15
TITLE_LENGTH = 2
CONTENT_LENGTH = 8
ANSWER_LENGTH = 3
NOISE_TOKENS = 2
MAX_REDRAWS = 1000

StepResult = namedtuple("StepResult", ["state", "terminated", "invalid"])


@dataclass(frozen=True)
class Element:
    id: int
    kind: str
    tokens: tuple = ()
    target: object = None
    accepts_text: bool = False
    depth: int = 1

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise InvalidSpecError("unknown element kind %r" % self.kind)
        if self.kind == "link" and self.target is None:
            raise InvalidSpecError("link %s has no target" % self.id)
        if self.kind == "textbox" and not self.accepts_text:
            raise InvalidSpecError("textbox %s must accept text" % self.id)


@dataclass(frozen=True)
class Page:
    id: int
    elements: tuple = ()
    tokens: tuple = ()

    def __post_init__(self):
        ids = [element.id for element in self.elements]
        if len(set(ids)) != len(ids):
            raise InvalidSpecError("duplicate element ids on page %s" % self.id)

    @property
    def title(self):
        return self.tokens[:TITLE_LENGTH]

    @property
    def answer(self):
        return self.tokens[:ANSWER_LENGTH]

    @property
    def out_links(self):
        return tuple(e.target for e in self.elements if e.target is not None)

    def element(self, element_id):
        for element in self.elements:
            if element.id == element_id:
                return element
        return None

    def position(self, element_id):
        for index, element in enumerate(self.elements):
            if element.id == element_id:
                return index
        return -1

    def visible(self, window):
        return self.elements[window : window + dualnav.window_size]

    def overflows(self):
        return len(self.elements) > dualnav.window_size


class Environment(object):
    """A web graph G=(V, E). Values are never mutated after construction;
    :func:`drift` builds a new environment.

    :param dict pages: page id -> :class:`Page`.
    :param int start: id of the page every episode starts on.
    """

    def __init__(self, pages, start, drift_rate=0.0, seed=0, vocab=1):
        if not pages:
            raise InvalidSpecError("an environment needs at least one page")
        if start not in pages:
            raise InvalidSpecError("start page %s does not exist" % start)
        if not 0.0 <= drift_rate <= 1.0:
            raise InvalidSpecError("drift rate %s outside [0, 1]" % drift_rate)
        for page in pages.values():
            for target in page.out_links:
                if target not in pages:
                    raise InvalidSpecError(
                        "page %s links to missing page %s" % (page.id, target)
                    )
        self.pages = {pid: pages[pid] for pid in sorted(pages)}
        self.start = start
        self.drift_rate = float(drift_rate)
        self.seed = int(seed)
        self.vocab = int(vocab)
        self.visit = stationary_distribution(self.pages)
        self._graph = None

    @property
    def page_count(self):
        return len(self.pages)

    @property
    def edge_count(self):
        return sum(len(page.out_links) for page in self.pages.values())

    def graph(self):
        """The link structure as a networkx multigraph (cached)."""
        if self._graph is None:
            graph = nx.MultiDiGraph()
            graph.add_nodes_from(self.pages)
            for page in self.pages.values():
                graph.add_edges_from((page.id, target) for target in page.out_links)
            self._graph = graph
        return self._graph

    def distances(self, source=None):
        """BFS link distance from source (default: start) to every
        reachable page."""
        return nx.single_source_shortest_path_length(
            self.graph(), self.start if source is None else source
        )

    def to_dict(self):
        return {
            "pages": [
                {
                    "id": page.id,
                    "elements": [
                        {
                            "id": element.id,
                            "kind": element.kind,
                            "tokens": list(element.tokens),
                            "target": element.target,
                            "depth": element.depth,
                        }
                        for element in page.elements
                    ],
                    "tokens": list(page.tokens),
                }
                for page in self.pages.values()
            ],
            "start": self.start,
            "drift_rate": self.drift_rate,
            "seed": self.seed,
            "vocab": self.vocab,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        pages = {}
        for raw in data["pages"]:
            elements = tuple(
                Element(
                    id=int(item["id"]),
                    kind=item["kind"],
                    tokens=tuple(int(t) for t in item.get("tokens", ())),
                    target=None if item.get("target") is None else int(item["target"]),
                    accepts_text=item["kind"] == "textbox",
                    depth=int(item.get("depth", 1)),
                )
                for item in raw["elements"]
            )
            pages[int(raw["id"])] = Page(
                int(raw["id"]), elements, tuple(int(t) for t in raw.get("tokens", ()))
            )
        return cls(
            pages,
            int(data["start"]),
            drift_rate=float(data.get("drift_rate", 0.0)),
            seed=int(data.get("seed", 0)),
            vocab=int(data.get("vocab", 1)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, Environment) and self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<Environment pages=%d edges=%d start=%s seed=%s>" % (
            self.page_count,
            self.edge_count,
            self.start,
            self.seed,
        )


def save_environment(env, path):
    with open(path, "w") as handle:
        handle.write(env.to_json())


def load_environment(path):
    with open(path) as handle:
        return Environment.from_json(handle.read())


def stationary_distribution(pages, teleport=TELEPORT):
    """Visiting probabilities of a random surfer that follows a uniformly
    chosen out-link, or jumps to a uniformly chosen page with probability
    ``teleport`` (always, on dead ends).

    :return dict: page id -> probability, summing to 1.
    """
    ids = list(pages)
    index = {pid: i for i, pid in enumerate(ids)}
    size = len(ids)
    transition = np.zeros((size, size))
    for pid in ids:
        targets = pages[pid].out_links
        if targets:
            for target in targets:
                transition[index[pid], index[target]] += 1.0 / len(targets)
        else:
            transition[index[pid], :] = 1.0 / size
    system = np.eye(size) - (1.0 - teleport) * transition.T
    visit = np.linalg.solve(system, np.full(size, teleport / size))
    visit = visit / visit.sum()
    return {pid: float(visit[index[pid]]) for pid in ids}


def generate_environment(page_count, mean_out_degree, vocab_size, seed, drift_rate=0.0):
    """Build a random environment.

    A random tree from the start page (page 0) guarantees reachability; the
    remaining links, up to ``round(page_count * mean_out_degree)``, join
    uniformly drawn pages. Pages that end up unreachable from the start are
    pruned. Links carry the title of their target page as anchor text.

    :param int page_count: pages before pruning, >= 1.
    :param float mean_out_degree: average links per page, >= 0.
    :param int vocab_size: token vocabulary, >= 1.
    :param int seed: the environment is a pure function of the arguments.
    """
    if page_count < 1:
        raise InvalidSpecError("page count must be >= 1, got %s" % page_count)
    if vocab_size < 1:
        raise InvalidSpecError("vocab size must be >= 1, got %s" % vocab_size)
    if mean_out_degree < 0:
        raise InvalidSpecError("mean out-degree must be >= 0")
    rng = np.random.default_rng(seed)
    edge_total = int(round(mean_out_degree * page_count))
    tree = min(page_count - 1, edge_total)
    edges = [(int(rng.integers(0, child)), child) for child in range(1, tree + 1)]
    edges += [
        (int(rng.integers(0, page_count)), int(rng.integers(0, page_count)))
        for _edge in range(edge_total - tree)
    ]
    titles = [_tokens(rng, vocab_size, TITLE_LENGTH) for _page in range(page_count)]
    out_links = {pid: [] for pid in range(page_count)}
    for source, target in edges:
        out_links[source].append(target)
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(range(page_count))
    graph.add_edges_from(edges)
    keep = {0} | nx.descendants(graph, 0)
    pages = {}
    for pid in range(page_count):
        tokens = titles[pid] + _tokens(rng, vocab_size, CONTENT_LENGTH - TITLE_LENGTH)
        specs = []
        for target in out_links[pid]:
            kind = "button" if rng.random() < 0.2 else "link"
            specs.append((kind, titles[target] + _tokens(rng, vocab_size, 1), target))
        if rng.random() < 0.3:
            specs.append(("textbox", _tokens(rng, vocab_size, 2), None))
        if rng.random() < 0.3:
            specs.append(("button", _tokens(rng, vocab_size, 2), None))
        if rng.random() < 0.15:
            specs.append(("scroll-region", _tokens(rng, vocab_size, 1), None))
        depths = rng.integers(1, 5, len(specs))
        order = rng.permutation(len(specs))
        elements = tuple(
            Element(
                id=int(i),
                kind=specs[i][0],
                tokens=specs[i][1],
                target=specs[i][2],
                accepts_text=specs[i][0] == "textbox",
                depth=int(depths[i]),
            )
            for i in order
        )
        if pid in keep:
            pages[pid] = Page(pid, elements, tokens)
    env = Environment(pages, 0, drift_rate=drift_rate, seed=seed, vocab=vocab_size)
    logger.debug(
        "generated %r (%d pages pruned)", env, page_count - env.page_count
    )
    return env


def generate_trap_environment(corridor=5, vocab_size=64, seed=0):
    """Build an environment whose tempting first link leads into a sink.

    The start page holds a lure link (element 0, anchored with the goal's
    title) into a page that only links to itself, and a plain link
    (element 1) into a corridor of ``corridor`` pages; the last corridor
    page is the natural goal, ``corridor`` clicks away from the start.
    """
    if corridor < 1:
        raise InvalidSpecError("the corridor needs at least one page")
    rng = np.random.default_rng(seed)
    sink, first, goal = 1, 2, corridor + 1
    titles = {pid: _tokens(rng, vocab_size, TITLE_LENGTH) for pid in range(goal + 1)}

    def content(pid):
        return titles[pid] + _tokens(rng, vocab_size, CONTENT_LENGTH - TITLE_LENGTH)

    def link(eid, target, anchor):
        return Element(eid, "link", anchor + _tokens(rng, vocab_size, 1), target)

    pages = {
        0: Page(0, (link(0, sink, titles[goal]), link(1, first, titles[first])), content(0)),
        sink: Page(sink, (link(0, sink, titles[sink]),), content(sink)),
    }
    for pid in range(first, goal):
        pages[pid] = Page(pid, (link(0, pid + 1, titles[pid + 1]),), content(pid))
    pages[goal] = Page(goal, (), content(goal))
    return Environment(pages, 0, seed=seed, vocab=vocab_size)


def _tokens(rng, vocab_size, count):
    return tuple(int(token) for token in rng.integers(0, vocab_size, count))


def step(env, state, action):
    """Apply an action. Pure: the state is never modified in place.

    Invalid actions are reported through ``StepResult.invalid``; the page,
    window and buffers stay as they were and the state's invalid flag is
    raised so that the agent can observe it.
    """
    page = env.pages.get(state.page)
    if page is None:
        raise ContractViolation("state references missing page %s" % state.page)
    kind = action.kind
    if kind == "stop":
        return StepResult(state, True, False)
    if kind == "scroll":
        return StepResult(_scrolled(page, state), False, False)
    element = None
    for candidate in page.visible(state.window):
        if candidate.id == action.element:
            element = candidate
            break
    if element is None:
        return StepResult(replace(state, invalid=True), False, True)
    if kind in ("click", "open-tab"):
        if kind == "open-tab" and element.kind != "link":
            return StepResult(replace(state, invalid=True), False, True)
        if element.target is not None:
            return StepResult(state.navigate(element.target), False, False)
        if element.kind == "button":
            return StepResult(state.activate(element.id), False, False)
        if element.kind == "scroll-region":
            return StepResult(_scrolled(page, state), False, False)
        return StepResult(replace(state, invalid=False), False, False)
    if kind == "type-text":
        if not element.accepts_text:
            return StepResult(replace(state, invalid=True), False, True)
        return StepResult(state.fill(element.id, action.text), False, False)
    return StepResult(replace(state, invalid=True), False, True)


def _scrolled(page, state):
    window = state.window + dualnav.window_size
    if window >= len(page.elements):
        window = 0
    return replace(state, window=window, invalid=False)


def drift(env, rng_seed, return_events=False):
    """Mutate an environment between episodes.

    Every link target is resampled uniformly with probability
    ``env.drift_rate`` and every page's content is redrawn with the same
    probability. Anchor texts are left stale on purpose: that is what
    drift looks like from the agent's side.

    :param bool return_events: also return the number of link resampling
        events.
    """
    rate = env.drift_rate
    if not 0.0 <= rate <= 1.0:
        raise ContractViolation("drift rate %s outside [0, 1]" % rate)
    rng = np.random.default_rng(rng_seed)
    ids = list(env.pages)
    events = 0
    pages = {}
    for pid in ids:
        page = env.pages[pid]
        elements = []
        for element in page.elements:
            if element.target is not None and rng.random() < rate:
                events += 1
                element = replace(element, target=ids[int(rng.integers(0, len(ids)))])
            elements.append(element)
        tokens = page.tokens
        if rng.random() < rate:
            tokens = _tokens(rng, env.vocab, len(page.tokens))
        pages[pid] = Page(pid, tuple(elements), tokens)
    drifted = Environment(pages, env.start, rate, env.seed, env.vocab)
    logger.debug("drifted %r: %d link events", env, events)
    if return_events:
        return drifted, events
    return drifted


def _link_entropies(env):
    """H(E|v_i) for every page: entropy of a uniform choice among its
    out-links, 0 for dead ends."""
    return {
        pid: math.log2(len(page.out_links)) if page.out_links else 0.0
        for pid, page in env.pages.items()
    }


def conditional_link_entropy(env):
    """H(E|V) = sum_i P(v_i) H(E|v_i)."""
    entropies = _link_entropies(env)
    return sum(env.visit[pid] * entropies[pid] for pid in env.pages)


def web_entropy(env):
    """Entropy of the web: visiting entropy plus expected link entropy,
    in bits."""
    visit_entropy = -sum(p * math.log2(p) for p in env.visit.values() if p > 0.0)
    return max(0.0, visit_entropy) + conditional_link_entropy(env)


def kolmogorov_estimate(env):
    """K(mu) ~ log2|V| + |V| * H(E|V), in bits."""
    return math.log2(env.page_count) + env.page_count * conditional_link_entropy(env)


@dataclass(frozen=True)
class ComplexityProfile:
    page_count: int
    edge_count: int
    conditional_link_entropy: float
    web_entropy: float
    kolmogorov_estimate: float

    @classmethod
    def from_counts(cls, pages, edges):
        """Profile of a graph known only by its size, assuming every page
        has the average out-degree ``edges / pages``."""
        conditional = math.log2(edges / pages) if edges > pages else 0.0
        return cls(
            pages,
            edges,
            conditional,
            math.log2(pages) + conditional,
            math.log2(pages) + pages * conditional,
        )


def complexity_profile(env):
    conditional = conditional_link_entropy(env)
    return ComplexityProfile(
        env.page_count,
        env.edge_count,
        conditional,
        web_entropy(env),
        math.log2(env.page_count) + env.page_count * conditional,
    )


def entropy_ratio(a, b):
    """Compare two graphs by |V| log2(|E|/|V|).

    :raise DivisionByZeroError: when ``b`` has as many edges as pages.
    """
    for profile in (a, b):
        if profile.page_count < 1 or profile.edge_count < profile.page_count:
            raise ContractViolation("profiles need |V| >= 1 and |E| >= |V|")

    def size(profile):
        return profile.page_count * math.log2(profile.edge_count / profile.page_count)

    denominator = size(b)
    if denominator == 0.0:
        raise DivisionByZeroError("denominator profile has |E| = |V|")
    return size(a) / denominator


class Difficulty(object):
    """Law of the nominal step count of sampled tasks: a geometric law on
    {1, 2, ...} or an explicit histogram."""

    def __init__(self, geometric_p=None, histogram=None):
        if (geometric_p is None) == (histogram is None):
            raise InvalidSpecError("give either geometric_p or histogram")
        if geometric_p is not None and not 0.0 < geometric_p <= 1.0:
            raise InvalidSpecError("geometric p must lie in (0, 1]")
        if histogram is not None:
            if not histogram or min(histogram) < 1 or min(histogram.values()) < 0:
                raise InvalidSpecError("histogram needs steps >= 1 and weights >= 0")
            total = float(sum(histogram.values()))
            if total <= 0:
                raise InvalidSpecError("histogram weights sum to zero")
            histogram = {int(k): v / total for k, v in sorted(histogram.items())}
        self.geometric_p = geometric_p
        self.histogram = histogram

    @classmethod
    def geometric(cls, p):
        return cls(geometric_p=p)

    @classmethod
    def from_histogram(cls, histogram):
        return cls(histogram=histogram)

    def draw(self, rng, size):
        if self.geometric_p is not None:
            return rng.geometric(self.geometric_p, size)
        steps = np.array(list(self.histogram))
        return rng.choice(steps, size=size, p=list(self.histogram.values()))

    def to_dict(self):
        if self.geometric_p is not None:
            return {"geometric_p": self.geometric_p}
        return {"histogram": {str(k): v for k, v in self.histogram.items()}}

    @classmethod
    def from_dict(cls, data):
        if "geometric_p" in data:
            return cls.geometric(float(data["geometric_p"]))
        return cls.from_histogram({int(k): float(v) for k, v in data["histogram"].items()})


def bimodal_difficulty(short=2, long=8, short_share=0.7):
    """Mostly short tasks with a tail of long ones."""
    return Difficulty.from_histogram({short: short_share, long: 1.0 - short_share})


def draw_steps(difficulty, rng, n):
    """Draw n nominal step counts, before any reachability check."""
    return [int(steps) for steps in difficulty.draw(rng, n)]


@dataclass(frozen=True)
class Task:
    """An intent g: goal predicate, intent tokens and nominal difficulty."""

    id: str
    kind: str
    page: int
    intent: tuple
    steps: int
    element: object = None
    answer: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvalidSpecError("unknown task kind %r" % self.kind)
        if self.steps < 1:
            raise InvalidSpecError("nominal steps must be >= 1")

    def is_satisfied(self, state):
        """Whether stopping in ``state`` would complete the task (the
        answer itself is checked by :meth:`evaluate`)."""
        if state.page != self.page:
            return False
        if self.kind == "element":
            return self.element in state.activated
        return True

    def evaluate(self, trajectory):
        """Score 1 when the trajectory ends with a stop issued on a
        satisfying state (with the right answer for answer tasks). Stops
        standing for a contained error never score."""
        if not trajectory.records:
            return 0
        last = trajectory.records[-1]
        action = last.action
        if action.kind != "stop" or action.ua or action.reason.startswith("ERROR:"):
            return 0
        if not self.is_satisfied(last.state):
            return 0
        if self.kind == "answer" and tuple(action.answer) != tuple(self.answer):
            return 0
        return 1

    def to_dict(self):
        return {
            "id": self.id,
            "kind": self.kind,
            "page": self.page,
            "element": self.element,
            "answer": list(self.answer),
            "intent": list(self.intent),
            "steps": self.steps,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            id=str(data["id"]),
            kind=data["kind"],
            page=int(data["page"]),
            intent=tuple(int(t) for t in data["intent"]),
            steps=int(data["steps"]),
            element=None if data.get("element") is None else int(data["element"]),
            answer=tuple(int(t) for t in data.get("answer", ())),
        )


def save_tasks(tasks, path):
    return write_jsonl(path, (task.to_dict() for task in tasks))


def load_tasks(path):
    return [Task.from_dict(row) for row in read_jsonl(path)]


def _goals_by_distance(env):
    goals = {}
    for pid, distance in env.distances().items():
        page = env.pages[pid]
        if distance >= 1:
            goals.setdefault(distance, []).append(("page", pid, None))
            goals.setdefault(distance, []).append(("answer", pid, None))
        for element in page.elements:
            if element.kind == "button" and element.target is None:
                goals.setdefault(distance + 1, []).append(("element", pid, element.id))
    return goals


def sample_tasks(env, n, difficulty, rng_seed, prefix="t"):
    """Sample tasks whose nominal step counts follow ``difficulty``.

    For every task a step count is drawn, then a goal lying at exactly that
    BFS distance from the start is picked; draws without such a goal are
    repeated.

    :raise UnsatisfiableDifficultyError: after 1,000 fruitless draws.
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    goals = _goals_by_distance(env)
    tasks = []
    for index in range(n):
        for _attempt in range(MAX_REDRAWS):
            steps = draw_steps(difficulty, rng, 1)[0]
            options = goals.get(steps)
            if options:
                break
        else:
            raise UnsatisfiableDifficultyError(
                "no goal at any drawn distance after %d draws (reachable "
                "distances: %s)" % (MAX_REDRAWS, sorted(goals))
            )
        kind, pid, element_id = options[int(rng.integers(0, len(options)))]
        page = env.pages[pid]
        intent = page.title
        if kind == "element":
            intent = page.element(element_id).tokens + intent
        intent = intent + _tokens(rng, env.vocab, NOISE_TOKENS)
        tasks.append(
            Task(
                id="%s%d" % (prefix, index),
                kind=kind,
                page=pid,
                intent=intent,
                steps=steps,
                element=element_id,
                answer=page.answer if kind == "answer" else (),
            )
        )
    logger.debug("sampled %d tasks on %r", n, env)
    return tasks
