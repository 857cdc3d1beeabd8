#!/usr/bin/env python

"""
test_dualnav_system1
----------------------------------

Tests for `dualnav_system1`: the reranker, its losses, negative sampling
and offline training.
"""
import math
import os
import shutil
import tempfile
import unittest

import mock
import numpy as np

from dualnav import dualnav_system1
from dualnav.dualnav import ContractViolation, DataError
from dualnav.dualnav_agentcore import (
    Action,
    FeatureVector,
    PageState,
    enumerate_candidates,
    featurize,
)
from dualnav.dualnav_system1 import DemoItem, ScorerParams
from dualnav.dualnav_webenv import Element, Environment, Page, Task

from .fixtures import page_task, shop_environment

EPSILON = 1e-6


def toy_environment():
    page = Page(0, (Element(0, "button", (5, 6)),), (1, 2, 3))
    return Environment({0: page}, 0, vocab=10)


class TestScoring(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.goal = page_task(1)

    def test_zero_parameters(self):
        for architecture in dualnav_system1.ARCHITECTURES:
            params = dualnav_system1.init_scorer(architecture, dimension=64, scale=0.0)
            for candidate in enumerate_candidates(self.env, PageState(0), self.goal):
                self.assertEqual(
                    dualnav_system1.score(params, self.env, PageState(0), self.goal, candidate), 0.0
                )

    def test_bi_encoder_dot_product(self):
        table = np.zeros((32, 2))
        table[25] = (1.0, 0.0)
        table[26] = (3.0, 5.0)
        params = ScorerParams("bi-encoder", 32, {"table": table})
        encoded = (FeatureVector(32, {25: 1.0}), FeatureVector(32, {26: 1.0}))
        self.assertEqual(dualnav_system1.score_encoded(params, encoded), 3.0)

    def test_cross_encoder_by_hand(self):
        w1 = np.zeros((30, 2))
        w1[0] = (0.1, 0.2)
        w1[1] = (-0.3, 0.4)
        w1[2] = (0.5, -0.6)
        params = ScorerParams(
            "cross-encoder",
            30,
            {"w1": w1, "b1": np.array([0.01, -0.02]), "w2": np.array([1.5, -2.0]), "b2": np.array([0.3])},
        )
        encoded = FeatureVector(30, {0: 1.0, 1: 2.0, 2: -1.0})
        expected = 1.5 * math.tanh(-0.99) - 2.0 * math.tanh(1.58) + 0.3
        self.assertAlmostEqual(dualnav_system1.score_encoded(params, encoded), expected, places=12)

    def test_softmax(self):
        np.testing.assert_array_equal(dualnav_system1.softmax([4.2]), [1.0])
        np.testing.assert_allclose(dualnav_system1.softmax([0.0, 0.0]), [0.5, 0.5])
        np.testing.assert_allclose(
            dualnav_system1.softmax([math.log(2.0), 0.0]), [2.0 / 3.0, 1.0 / 3.0], atol=1e-12
        )
        np.testing.assert_allclose(
            dualnav_system1.softmax([1.0, 2.0, 3.0]), dualnav_system1.softmax([101.0, 102.0, 103.0])
        )
        with self.assertRaises(ContractViolation):
            dualnav_system1.softmax([])

    def test_action_distribution(self):
        params = dualnav_system1.init_scorer(dimension=128, seed=3)
        distribution = dualnav_system1.action_distribution(params, self.env, PageState(0), self.goal)
        self.assertTrue(distribution.is_valid())
        action, prob = dualnav_system1.greedy_action(params, self.env, PageState(0), self.goal)
        self.assertEqual(prob, float(distribution.probs.max()))
        self.assertIn(action, distribution.candidates)

    def test_parameter_file(self):
        params = dualnav_system1.init_scorer("bi-encoder", dimension=40, seed=1, width=3)
        directory = tempfile.mkdtemp()
        try:
            path = os.path.join(directory, "s1.npz")
            params.save(path)
            loaded = ScorerParams.load(path)
        finally:
            shutil.rmtree(directory)
        self.assertEqual(loaded.architecture, "bi-encoder")
        np.testing.assert_array_equal(loaded.flat(), params.flat())


class TestLosses(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.tasks = [page_task(1, task_id="p"), Task("e", "element", 0, (3, 9), 1, element=1)]
        self.demos = dualnav_system1.build_demos(self.env, self.tasks, negatives=3, seed=2)

    def test_build_demos(self):
        self.assertEqual(
            [item.positive for item in self.demos],
            [
                Action.click(0),
                Action.stop(answer=(21, 22, 23)),
                Action.click(1),
                Action.stop(answer=(11, 12, 13)),
            ],
        )
        for item in self.demos:
            self.assertNotIn(item.positive, item.negatives)
            self.assertTrue(item.negatives)

    def test_single_candidate(self):
        env = Environment({0: Page(0, (), (1, 2, 3))}, 0)
        item = DemoItem(PageState(0), page_task(0), Action.stop(answer=(1, 2, 3)))
        params = dualnav_system1.init_scorer(dimension=64, seed=0)
        self.assertAlmostEqual(dualnav_system1.sft_loss(params, env, [item]).loss, 0.0, places=12)

    def test_uniform_sft(self):
        env = Environment(
            {0: Page(0, (Element(0, "link", (1,), target=0), Element(1, "button", (2,))), (1, 2, 3))}, 0
        )
        item = DemoItem(PageState(0), page_task(0), Action.click(1))
        params = dualnav_system1.init_scorer(dimension=64, scale=0.0)
        self.assertAlmostEqual(dualnav_system1.sft_loss(params, env, [item]).loss, math.log(4.0), places=12)

    def test_positive_not_a_candidate(self):
        batch = [self.demos[0], DemoItem(PageState(0), self.tasks[0], Action.click(9))]
        params = dualnav_system1.init_scorer(dimension=64)
        with self.assertRaises(DataError) as context:
            dualnav_system1.sft_loss(params, self.env, batch)
        self.assertIn("item 1", str(context.exception))

    def test_wepo_equal_scores(self):
        params = dualnav_system1.init_scorer(dimension=64, scale=0.0)
        self.assertAlmostEqual(
            dualnav_system1.wepo_loss(params, self.env, self.demos).loss, math.log(2.0), places=12
        )

    def test_wepo_margin(self):
        item = self.demos[0]

        def encode(params, env, state, goal, action):
            return 10.0 if action == item.positive else 0.0

        params = dualnav_system1.init_scorer(dimension=64)
        with mock.patch.object(dualnav_system1, "encode", side_effect=encode), mock.patch.object(
            dualnav_system1, "_forward", side_effect=lambda params, encoded: (encoded, None)
        ), mock.patch.object(dualnav_system1, "_backward"):
            loss = dualnav_system1.wepo_loss(params, self.env, [item]).loss
        self.assertAlmostEqual(loss, 4.54e-5, delta=1e-7)

    def test_wepo_needs_negatives(self):
        item = DemoItem(PageState(0), self.tasks[0], Action.click(0))
        params = dualnav_system1.init_scorer(dimension=64)
        with self.assertRaises(DataError):
            dualnav_system1.wepo_loss(params, self.env, [self.demos[0], item])

    def _numeric_gradient(self, loss, params):
        flat = params.flat()
        numeric = np.zeros_like(flat)
        for index in range(len(flat)):
            plus, minus = flat.copy(), flat.copy()
            plus[index] += EPSILON
            minus[index] -= EPSILON
            numeric[index] = (loss(params.from_flat(plus)) - loss(params.from_flat(minus))) / (
                2.0 * EPSILON
            )
        return numeric

    def test_gradients(self):
        for loss_function in (dualnav_system1.sft_loss, dualnav_system1.wepo_loss):
            for architecture in dualnav_system1.ARCHITECTURES:
                for seed in range(10):
                    params = dualnav_system1.init_scorer(
                        architecture, dimension=32, seed=seed, scale=0.5, width=4
                    )
                    cache = {}
                    analytic = loss_function(params, self.env, self.demos, cache).gradient.flat()
                    numeric = self._numeric_gradient(
                        lambda p: loss_function(p, self.env, self.demos, cache).loss, params
                    )
                    error = np.linalg.norm(analytic - numeric) / max(
                        np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12
                    )
                    self.assertLessEqual(error, 1e-5, (loss_function.__name__, architecture, seed))


class TestNegatives(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.goal = page_task(1)
        self.state = PageState(0)
        self.positive = Action.click(0)

    def test_counts(self):
        sample = dualnav_system1.sample_negatives(self.env, self.state, self.goal, self.positive, 0)
        self.assertEqual(sample, ((), False))
        sample = dualnav_system1.sample_negatives(self.env, self.state, self.goal, self.positive, 5)
        self.assertEqual(len(sample.negatives), 5)
        self.assertFalse(sample.short)
        self.assertNotIn(self.positive, sample.negatives)
        with mock.patch.object(dualnav_system1, "message") as message:
            sample = dualnav_system1.sample_negatives(self.env, self.state, self.goal, self.positive, 9)
        self.assertTrue(sample.short)
        self.assertEqual(len(sample.negatives), 5)
        message.assert_called_once()

    def test_random(self):
        first = dualnav_system1.sample_negatives(self.env, self.state, self.goal, self.positive, 3, seed=4)
        again = dualnav_system1.sample_negatives(self.env, self.state, self.goal, self.positive, 3, seed=4)
        self.assertEqual(first, again)
        self.assertEqual(len(set(first.negatives)), 3)
        self.assertNotIn(self.positive, first.negatives)

    def test_semantic(self):
        sample = dualnav_system1.sample_negatives(
            self.env, self.state, self.goal, self.positive, 2, strategy="semantic", dimension=256
        )
        anchor = featurize(self.env, self.state, self.positive, self.goal, 256).to_dense()
        alternatives = [
            c for c in enumerate_candidates(self.env, self.state, self.goal) if c != self.positive
        ]
        distances = []
        for index, candidate in enumerate(alternatives):
            dense = featurize(self.env, self.state, candidate, self.goal, 256).to_dense()
            cosine = anchor @ dense / (np.linalg.norm(anchor) * np.linalg.norm(dense))
            distances.append((round(1.0 - cosine, 12), index))
        expected = tuple(alternatives[index] for _distance, index in sorted(distances)[:2])
        self.assertEqual(sample.negatives, expected)


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.demos = dualnav_system1.build_demos(self.env, [page_task(1)], negatives=2, seed=0)

    def test_zero_epochs(self):
        params = dualnav_system1.init_scorer(dimension=64)
        result = dualnav_system1.train_offline(params, self.env, self.demos, epochs=0)
        self.assertIs(result.params, params)
        self.assertEqual(result.curve, [])

    def test_reproducible(self):
        params = dualnav_system1.init_scorer("bi-encoder", dimension=64, width=4)
        first = dualnav_system1.train_offline(
            params, self.env, self.demos, objective="wepo", epochs=3, batch_size=1, seed=5
        )
        second = dualnav_system1.train_offline(
            params, self.env, self.demos, objective="wepo", epochs=3, batch_size=1, seed=5
        )
        np.testing.assert_array_equal(first.params.flat(), second.params.flat())
        self.assertEqual(first.curve, second.curve)
        self.assertFalse(np.array_equal(first.params.flat(), params.flat()))

    def test_toy_convergence(self):
        env = toy_environment()
        task = Task("toy", "element", 0, (5, 6, 9), 1, element=0)
        press = DemoItem(PageState(0), task, Action.click(0))
        finish = DemoItem(PageState(0, activated=(0,)), task, Action.stop(answer=(1, 2, 3)))
        params = dualnav_system1.init_scorer("cross-encoder", dimension=2**10, seed=0)
        result = dualnav_system1.train_offline(
            params, env, [press, finish] * 16, learning_rate=0.1, epochs=200, batch_size=4
        )
        self.assertLess(result.curve[-1], 0.05)
        upticks = sum(1 for a, b in zip(result.curve, result.curve[1:]) if b > a)
        self.assertLessEqual(upticks, 0.05 * (len(result.curve) - 1))


if __name__ == "__main__":
    unittest.main()
