# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

"""System 1: a fast reranker scoring candidate actions against the page
state and the intent, trained offline by imitation or by contrastive
preference learning."""
import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from . import dualnav
from .dualnav import (
    ContractViolation,
    DataError,
    InvalidConfigError,
    check_finite,
    chunked,
    message,
)
from .dualnav_agentcore import (
    Action,
    Distribution,
    PageState,
    distances_to_goal,
    enumerate_candidates,
    featurize,
    featurize_pair,
    initial_state,
    optimal_actions,
)
from .dualnav_tools import load_tensors, read_jsonl, save_tensors, stable_hash, write_jsonl
from .dualnav_webenv import Task, step

logger = logging.getLogger("DualNav")
logger.setLevel(logging.DEBUG)

ARCHITECTURES = ("bi-encoder", "cross-encoder")
OBJECTIVES = ("sft", "wepo")
STRATEGIES = ("random", "semantic")
EMBEDDING = 32
HIDDEN = 64
INIT_SCALE = 0.1

LossResult = namedtuple("LossResult", ["loss", "gradient"])
TrainResult = namedtuple("TrainResult", ["params", "curve"])
NegativeSample = namedtuple("NegativeSample", ["negatives", "short"])


class ScorerParams(object):
    """Weights of the scoring function f(a, s, g).

    A bi-encoder holds one embedding ``table`` [dimension x width] shared by
    candidates and contexts; a cross-encoder holds ``w1`` [dimension x
    width], ``b1``, ``w2`` and ``b2`` of a one hidden layer tanh network.
    """

    def __init__(self, architecture, dimension, arrays):
        if architecture not in ARCHITECTURES:
            raise InvalidConfigError("unknown architecture %r" % architecture)
        self.architecture = architecture
        self.dimension = int(dimension)
        self.arrays = {
            name: np.asarray(arrays[name], dtype=np.float64) for name in self.names()
        }

    def names(self):
        if self.architecture == "bi-encoder":
            return ("table",)
        return ("w1", "b1", "w2", "b2")

    @property
    def width(self):
        return self.arrays["table" if self.architecture == "bi-encoder" else "w1"].shape[1]

    def flat(self):
        return np.concatenate([self.arrays[name].ravel() for name in self.names()])

    def from_flat(self, vector):
        arrays, offset = {}, 0
        for name in self.names():
            shape = self.arrays[name].shape
            size = int(np.prod(shape))
            arrays[name] = np.array(vector[offset : offset + size]).reshape(shape)
            offset += size
        return ScorerParams(self.architecture, self.dimension, arrays)

    def copy(self):
        return ScorerParams(
            self.architecture,
            self.dimension,
            {name: value.copy() for name, value in self.arrays.items()},
        )

    def zeros_like(self):
        return ScorerParams(
            self.architecture,
            self.dimension,
            {name: np.zeros_like(value) for name, value in self.arrays.items()},
        )

    def add_scaled(self, other, factor):
        """In place ``self += factor * other``; returns self."""
        for name in self.names():
            self.arrays[name] += factor * other.arrays[name]
        return self

    def header(self):
        return {
            "kind": "scorer",
            "architecture": self.architecture,
            "dimension": self.dimension,
            "width": int(self.width),
        }

    def save(self, path):
        save_tensors(path, self.header(), **self.arrays)

    @classmethod
    def load(cls, path):
        header, arrays = load_tensors(path)
        if header.get("kind") != "scorer":
            raise DataError("%s does not hold scorer parameters" % path)
        return cls(header["architecture"], header["dimension"], arrays)

    def __repr__(self):
        return "<ScorerParams %s dim=%d width=%d>" % (
            self.architecture,
            self.dimension,
            self.width,
        )


def init_scorer(architecture="cross-encoder", dimension=None, seed=0, scale=INIT_SCALE, width=None):
    """Gaussian initialization with standard deviation ``scale``; ``scale=0``
    yields all-zero parameters."""
    dimension = dualnav.feature_dimension if dimension is None else dimension
    rng = np.random.default_rng(seed)
    if architecture == "bi-encoder":
        width = EMBEDDING if width is None else width
        arrays = {"table": rng.normal(0.0, 1.0, (dimension, width)) * scale}
    elif architecture == "cross-encoder":
        width = HIDDEN if width is None else width
        arrays = {
            "w1": rng.normal(0.0, 1.0, (dimension, width)) * scale,
            "b1": np.zeros(width),
            "w2": rng.normal(0.0, 1.0, width) * scale,
            "b2": np.zeros(1),
        }
    else:
        raise InvalidConfigError("unknown architecture %r" % architecture)
    return ScorerParams(architecture, dimension, arrays)


@dataclass(frozen=True)
class DemoItem:
    """A demonstration step: the optimal ``positive`` action in ``state``
    for ``goal``, with sampled ``negatives``."""

    state: PageState
    goal: Task
    positive: Action
    negatives: tuple = ()

    def to_dict(self):
        return {
            "state": self.state.to_dict(),
            "goal": self.goal.to_dict(),
            "positive": self.positive.to_dict(),
            "negatives": [action.to_dict() for action in self.negatives],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            PageState.from_dict(data["state"]),
            Task.from_dict(data["goal"]),
            Action.from_dict(data["positive"]),
            tuple(Action.from_dict(item) for item in data.get("negatives", ())),
        )


class DemoBatch(tuple):
    """A sequence of :class:`DemoItem`."""


def save_demos(items, path):
    return write_jsonl(path, (item.to_dict() for item in items))


def load_demos(path):
    return DemoBatch(DemoItem.from_dict(row) for row in read_jsonl(path))


def encode(params, env, state, goal, candidate):
    """Feature input of the scorer: a (candidate, context) pair for the
    bi-encoder, the joint vector for the cross-encoder."""
    if params.architecture == "bi-encoder":
        return featurize_pair(env, state, candidate, goal, params.dimension)
    return featurize(env, state, candidate, goal, params.dimension)


def _forward(params, encoded):
    if params.architecture == "bi-encoder":
        table = params.arrays["table"]
        left, right = encoded
        left_embedding = left.values @ table[left.indices]
        right_embedding = right.values @ table[right.indices]
        return float(left_embedding @ right_embedding), (left_embedding, right_embedding)
    arrays = params.arrays
    hidden = np.tanh(encoded.values @ arrays["w1"][encoded.indices] + arrays["b1"])
    return float(arrays["w2"] @ hidden + arrays["b2"][0]), hidden


def _backward(params, encoded, cache, upstream, gradient):
    """Accumulate ``upstream * d score / d params`` into ``gradient``."""
    if upstream == 0.0:
        return
    grads = gradient.arrays
    if params.architecture == "bi-encoder":
        left, right = encoded
        left_embedding, right_embedding = cache
        np.add.at(grads["table"], left.indices, upstream * np.outer(left.values, right_embedding))
        np.add.at(grads["table"], right.indices, upstream * np.outer(right.values, left_embedding))
        return
    hidden = cache
    pre = upstream * params.arrays["w2"] * (1.0 - hidden**2)
    grads["w2"] += upstream * hidden
    grads["b2"][0] += upstream
    grads["b1"] += pre
    np.add.at(grads["w1"], encoded.indices, np.outer(encoded.values, pre))


def score_encoded(params, encoded):
    return _forward(params, encoded)[0]


def score(params, env, state, goal, candidate):
    """f(a, s, g): E(a).E(s, g) for the bi-encoder, the perceptron output
    over the joint features for the cross-encoder."""
    return score_encoded(params, encode(params, env, state, goal, candidate))


def softmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ContractViolation("softmax over zero candidates")
    exps = np.exp(scores - scores.max())
    return exps / exps.sum()


def action_distribution(params, env, state, goal, candidates=None):
    candidates = enumerate_candidates(env, state, goal) if candidates is None else candidates
    if not candidates:
        raise ContractViolation("no candidate action on page %s" % state.page)
    scores = [score(params, env, state, goal, candidate) for candidate in candidates]
    return Distribution(candidates, softmax(scores))


def greedy_action(params, env, state, goal):
    """The most probable action and its probability."""
    return action_distribution(params, env, state, goal).argmax()


def _encoded_candidates(params, env, item, cache):
    key = id(item)
    if cache is not None and key in cache:
        return cache[key]
    candidates = enumerate_candidates(env, item.state, item.goal)
    encoded = [encode(params, env, item.state, item.goal, c) for c in candidates]
    if cache is not None:
        cache[key] = (candidates, encoded)
    return candidates, encoded


def sft_loss(params, env, batch, cache=None):
    """Mean -log p(positive) under :func:`action_distribution`.

    :raise DataError: when a positive is not among its item's candidates.
    """
    if not batch:
        raise ContractViolation("empty batch")
    gradient = params.zeros_like()
    total = 0.0
    for index, item in enumerate(batch):
        candidates, encoded = _encoded_candidates(params, env, item, cache)
        try:
            positive = candidates.index(item.positive)
        except ValueError:
            raise DataError(
                "item %d: positive %r is not a candidate on page %s"
                % (index, item.positive, item.state.page)
            )
        forward = [_forward(params, vector) for vector in encoded]
        probs = softmax([value for value, _cache in forward])
        total += -np.log(probs[positive])
        upstream = probs.copy()
        upstream[positive] -= 1.0
        upstream /= len(batch)
        for vector, (_value, state_cache), grad in zip(encoded, forward, upstream):
            _backward(params, vector, state_cache, float(grad), gradient)
    return LossResult(float(total / len(batch)), gradient)


def wepo_loss(params, env, batch, cache=None):
    """Mean over every (positive, negative) pair of -log sigmoid(f+ - f-).

    :raise DataError: when an item has no negative.
    """
    if not batch:
        raise ContractViolation("empty batch")
    for index, item in enumerate(batch):
        if not item.negatives:
            raise DataError("item %d has no negative" % index)
    pairs = sum(len(item.negatives) for item in batch)
    gradient = params.zeros_like()
    total = 0.0
    for item in batch:
        if cache is not None and ("wepo", id(item)) in cache:
            encoded = cache[("wepo", id(item))]
        else:
            encoded = [
                encode(params, env, item.state, item.goal, action)
                for action in (item.positive,) + tuple(item.negatives)
            ]
            if cache is not None:
                cache[("wepo", id(item))] = encoded
        positive_score, positive_cache = _forward(params, encoded[0])
        for vector in encoded[1:]:
            negative_score, negative_cache = _forward(params, vector)
            margin = positive_score - negative_score
            total += np.logaddexp(0.0, -margin)
            # d/dmargin of log(1 + exp(-margin)) is -1 / (1 + exp(margin))
            weight = float(np.exp(-np.logaddexp(0.0, margin))) / pairs
            _backward(params, encoded[0], positive_cache, -weight, gradient)
            _backward(params, vector, negative_cache, weight, gradient)
    return LossResult(float(total / pairs), gradient)


def _cosine_distance(a, b):
    common, left, right = np.intersect1d(a.indices, b.indices, return_indices=True)
    dot = float(a.values[left] @ b.values[right]) if len(common) else 0.0
    norms = float(np.linalg.norm(a.values) * np.linalg.norm(b.values))
    if norms == 0.0:
        return 1.0
    return 1.0 - dot / norms


def sample_negatives(env, state, goal, positive, k, strategy="random", seed=0, dimension=None):
    """Pick ``k`` candidates other than ``positive``.

    ``random`` draws uniformly without replacement; ``semantic`` takes the
    candidates closest to the positive by cosine distance of their joint
    feature vectors (ties by candidate order).
    """
    if strategy not in STRATEGIES:
        raise InvalidConfigError("unknown negative strategy %r" % strategy)
    if k < 0:
        raise ContractViolation("k must be >= 0")
    alternatives = [c for c in enumerate_candidates(env, state, goal) if c != positive]
    if k == 0:
        return NegativeSample((), False)
    if k >= len(alternatives):
        short = k > len(alternatives)
        if short:
            message(
                "S1",
                goal.id,
                False,
                "only %d negatives available, %d requested",
                len(alternatives),
                k,
            )
        return NegativeSample(tuple(alternatives), short)
    if strategy == "random":
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(alternatives), size=k, replace=False)
        return NegativeSample(tuple(alternatives[int(i)] for i in picked), False)
    anchor = featurize(env, state, positive, goal, dimension)
    distances = [
        _cosine_distance(anchor, featurize(env, state, c, goal, dimension))
        for c in alternatives
    ]
    order = sorted(range(len(alternatives)), key=lambda i: (distances[i], i))
    return NegativeSample(tuple(alternatives[i] for i in order[:k]), False)


def build_demos(env, tasks, negatives=3, strategy="random", seed=0):
    """Follow the shortest-path oracle on every task and record each step,
    the final stop included, as a demonstration."""
    items = []
    for task in tasks:
        distances = distances_to_goal(env, task)
        state = initial_state(env)
        for index in range(len(distances) + 1):
            optimal = optimal_actions(env, state, task, distances)
            if not optimal:
                message("S1", task.id, index, "goal unreachable, demonstration cut")
                break
            positive = optimal[0]
            sample = sample_negatives(
                env,
                state,
                task,
                positive,
                negatives,
                strategy,
                seed=stable_hash(seed, task.id, index) % 2**32,
            )
            items.append(DemoItem(state, task, positive, sample.negatives))
            if positive.kind == "stop":
                break
            state = step(env, state, positive).state
    logger.debug("built %d demonstrations from %d tasks", len(items), len(tasks))
    return DemoBatch(items)


@dualnav.logging()
def train_offline(
    params,
    env,
    dataset,
    objective="sft",
    learning_rate=0.1,
    epochs=1,
    batch_size=32,
    seed=0,
):
    """Plain mini-batch gradient descent. The shuffling of every epoch is
    drawn from ``seed``; ``epochs=0`` returns ``params`` itself.

    :return TrainResult: final parameters and the mean batch loss of every
        epoch.
    """
    if not dataset:
        raise ContractViolation("empty training set")
    if objective not in OBJECTIVES:
        raise InvalidConfigError("unknown objective %r" % objective)
    if epochs == 0:
        return TrainResult(params, [])
    loss_function = sft_loss if objective == "sft" else wepo_loss
    current = params.copy()
    rng = np.random.default_rng(seed)
    cache = {}
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for batch_index, chunk in enumerate(chunked(order, batch_size)):
            batch = [dataset[int(i)] for i in chunk]
            result = loss_function(current, env, batch, cache)
            check_finite(result.loss, objective, epoch, batch_index)
            losses.append(result.loss)
            current.add_scaled(result.gradient, -learning_rate)
        curve.append(float(np.mean(losses)))
        logger.debug("%s epoch %d: loss %.6f", objective, epoch, curve[-1])
    return TrainResult(current, curve)
