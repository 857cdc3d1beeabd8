#!/usr/bin/env python

"""
test_dualnav_agentcore
----------------------------------

Tests for `dualnav_agentcore`: candidates, featurization, the mixture
policy, token costs and the exhaustive oracles.
"""
import unittest

import mock
import numpy as np

from dualnav import dualnav, dualnav_agentcore
from dualnav.dualnav import ContractViolation, InvalidConfigError, MethodUnavailable
from dualnav.dualnav_agentcore import (
    ACTION_SLOTS,
    DEPTH,
    ELEMENT_SLOTS,
    GOAL_OVERLAP,
    POSITION,
    Action,
    CostModel,
    Distribution,
    PageState,
    StepRecord,
    Trajectory,
)
from dualnav.dualnav_webenv import Element, Environment, Page

from .fixtures import chain_environment, page_task, shop_environment


class TestActions(unittest.TestCase):
    def test_element_required(self):
        with self.assertRaises(ContractViolation):
            Action("click")
        with self.assertRaises(ContractViolation):
            Action("jump", 1)

    def test_emitted_length(self):
        self.assertEqual(Action.click(3).emitted_length, 2)
        self.assertEqual(Action.stop().emitted_length, 1)
        self.assertEqual(Action.type_text(2, (8, 9)).emitted_length, 4)
        self.assertEqual(Action.stop(answer=(1, 2, 3)).emitted_length, 4)

    def test_key(self):
        self.assertEqual(Action.open_tab(3).key, Action.click(3).key)
        self.assertNotEqual(Action.click(3).key, Action.click(4).key)

    def test_serialization(self):
        action = Action.stop(answer=(1, 2), ua=True, reason="stuck")
        self.assertEqual(Action.from_dict(action.to_dict()), action)
        state = PageState(3, 8, ((2, (5, 6)),), (1, 4), True)
        self.assertEqual(PageState.from_dict(state.to_dict()), state)

    def test_state_digest(self):
        self.assertEqual(PageState(1).digest(), PageState(1).digest())
        self.assertNotEqual(PageState(1).digest(), PageState(1, invalid=True).digest())
        self.assertNotEqual(PageState(1).digest(), PageState(1).activate(2).digest())


class TestCandidates(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.goal = page_task(1)

    def test_enumerate_candidates(self):
        candidates = dualnav_agentcore.enumerate_candidates(self.env, PageState(0), self.goal)
        self.assertEqual(
            candidates,
            [
                Action.click(0),
                Action.open_tab(0),
                Action.click(1),
                Action.type_text(2, (1, 2)),
                Action.click(3),
                Action.stop(answer=(11, 12, 13)),
            ],
        )

    def test_overflowing_page(self):
        with mock.patch.object(dualnav, "window_size", 2):
            candidates = dualnav_agentcore.enumerate_candidates(self.env, PageState(0), self.goal)
        self.assertEqual(
            candidates,
            [
                Action.click(0),
                Action.open_tab(0),
                Action.click(1),
                Action.scroll(),
                Action.stop(answer=(11, 12, 13)),
            ],
        )


class TestFeatures(unittest.TestCase):
    def setUp(self):
        self.env = shop_environment()
        self.goal = page_task(1, intent=(2, 4, 6, 2))

    def test_deterministic(self):
        state = PageState(0)
        for action in dualnav_agentcore.enumerate_candidates(self.env, state, self.goal):
            first = dualnav_agentcore.featurize(self.env, state, action, self.goal, dimension=1024)
            second = dualnav_agentcore.featurize(self.env, state, action, self.goal, dimension=1024)
            self.assertEqual(first, second)
            self.assertTrue(np.all(first.indices < 1024))

    def test_goal_overlap(self):
        env = Environment({0: Page(0, (Element(0, "button", (1, 2, 3, 4)),), (9,))}, 0)
        vector = dualnav_agentcore.featurize(env, PageState(0), Action.click(0), self.goal, 1024)
        self.assertEqual(vector.get(GOAL_OVERLAP), 2.0)

    def test_element_without_tokens(self):
        env = Environment(
            {0: Page(0, (Element(0, "button", (7,)), Element(1, "button", ())), (9,))}, 0
        )
        vector = dualnav_agentcore.featurize(env, PageState(0), env.pages[0].element(1), self.goal, 1024)
        self.assertEqual(vector.get(ACTION_SLOTS["click"]), 1.0)
        self.assertEqual(vector.get(ELEMENT_SLOTS["button"]), 1.0)
        self.assertGreater(vector.get(POSITION), 0.0)

    def test_depth_from_rendered_page(self):
        page = self.env.pages[0]
        self.assertEqual(dualnav_agentcore.dom_depths(page), {0: 2, 1: 1, 2: 1, 3: 1})
        vector = dualnav_agentcore.featurize(self.env, PageState(0), Action.click(0), self.goal, 1024)
        self.assertEqual(vector.get(DEPTH), 2.0)
        left, _right = dualnav_agentcore.featurize_pair(
            self.env, PageState(0), Action.click(0), self.goal, 1024
        )
        self.assertEqual(left.get(DEPTH), 2.0)

    def test_sibling_order(self):
        first = Element(0, "button", (5,))
        candidate = Element(1, "link", (2, 4), target=0)
        last = Element(2, "textbox", (6,), accepts_text=True)
        before = Environment({0: Page(0, (first, candidate, last), (9,))}, 0)
        after = Environment({0: Page(0, (last, candidate, first), (9,))}, 0)
        self.assertEqual(
            dualnav_agentcore.featurize(before, PageState(0), Action.click(1), self.goal, 1024),
            dualnav_agentcore.featurize(after, PageState(0), Action.click(1), self.goal, 1024),
        )

    def test_dimension(self):
        with self.assertRaises(InvalidConfigError):
            dualnav_agentcore.featurize(self.env, PageState(0), Action.click(0), self.goal, 24)

    def test_featurize_pair(self):
        left, right = dualnav_agentcore.featurize_pair(
            self.env, PageState(0), Action.click(0), self.goal, dimension=512
        )
        self.assertEqual(left.get(ELEMENT_SLOTS["link"]), 1.0)
        self.assertEqual(right.get(dualnav_agentcore.BIAS), 1.0)
        self.assertEqual(right.get(ELEMENT_SLOTS["link"]), 0.0)


class TestMixture(unittest.TestCase):
    def setUp(self):
        self.candidates = (Action.click(0), Action.click(1), Action.stop())
        self.p1 = Distribution(self.candidates, [0.7, 0.2, 0.1])
        self.p2 = Distribution(self.candidates, [0.1, 0.3, 0.6])

    def test_extremes(self):
        mixture = dualnav_agentcore.mixture_action_distribution
        np.testing.assert_array_equal(mixture(self.p1, self.p2, 1.0).probs, self.p1.probs)
        np.testing.assert_array_equal(mixture(self.p1, self.p2, 0.0).probs, self.p2.probs)

    def test_linear(self):
        half = Distribution(self.candidates[:2], [1.0, 0.0])
        other = Distribution(self.candidates[:2], [0.0, 1.0])
        mixed = dualnav_agentcore.mixture_action_distribution(half, other, 0.5)
        np.testing.assert_allclose(mixed.probs, [0.5, 0.5])
        mixed = dualnav_agentcore.mixture_action_distribution(self.p1, self.p2, 0.25)
        np.testing.assert_allclose(mixed.probs, 0.25 * self.p1.probs + 0.75 * self.p2.probs)
        self.assertTrue(mixed.is_valid())

    def test_contract(self):
        with self.assertRaises(ContractViolation):
            dualnav_agentcore.mixture_action_distribution(self.p1, self.p2, 1.5)
        with self.assertRaises(ContractViolation):
            dualnav_agentcore.mixture_action_distribution(
                self.p1, Distribution(self.candidates[:2], [0.5, 0.5]), 0.5
            )

    def test_distribution(self):
        self.assertEqual(self.p1.argmax(), (Action.click(0), 0.7))
        self.assertEqual(self.p2.prob(Action.stop()), 0.6)
        self.assertEqual(self.p2.prob(Action.scroll()), 0.0)


class TestCost(unittest.TestCase):
    def test_empty(self):
        self.assertEqual(dualnav_agentcore.trajectory_cost(Trajectory(), CostModel()), 0)

    def test_emitted_tokens(self):
        record = StepRecord(PageState(0), Action.type_text(2, (8, 9)), "S1")
        trajectory = Trajectory((record, record, record))
        self.assertEqual(dualnav_agentcore.trajectory_cost(trajectory, CostModel()), 12)
        self.assertEqual(
            dualnav_agentcore.trajectory_cost(trajectory, CostModel(s1_cost_per_action=1)), 3
        )

    def test_reasoning_tokens(self):
        fast = Trajectory((StepRecord(PageState(0), Action.click(0), "S1"),))
        slow = Trajectory((StepRecord(PageState(1), Action.stop(), "S2", reasoning_tokens=40),))
        model = CostModel()
        self.assertEqual(dualnav_agentcore.trajectory_cost(slow, model), 41)
        self.assertEqual(
            dualnav_agentcore.trajectory_cost(fast.concat(slow), model),
            dualnav_agentcore.trajectory_cost(fast, model)
            + dualnav_agentcore.trajectory_cost(slow, model),
        )

    def test_cost_model(self):
        with self.assertRaises(InvalidConfigError):
            CostModel(discount=0.0)
        model = CostModel(s1_cost_per_action=2, s2_cost_per_expansion=5.0)
        self.assertEqual(CostModel.from_dict(model.to_dict()), model)

    def test_rows(self):
        task = page_task(1)
        trajectory = Trajectory((StepRecord(PageState(0), Action.click(0), "S1"),), task)
        (row,) = trajectory.to_rows()
        self.assertEqual(row["task"], "g")
        self.assertEqual(row["action"], {"kind": "click", "element": 0})
        self.assertEqual(len(row["state_digest"]), 16)
        with self.assertRaises(ContractViolation):
            StepRecord(PageState(0), Action.stop(), "S3")


class TestOracle(unittest.TestCase):
    def setUp(self):
        self.env = chain_environment(3)
        self.goal = page_task(2)

    def test_distances(self):
        distances = dualnav_agentcore.distances_to_goal(self.env, self.goal)
        self.assertEqual(distances[PageState(0)], 2)
        self.assertEqual(distances[PageState(1)], 1)
        self.assertEqual(distances[PageState(2)], 0)

    def test_optimal_actions(self):
        self.assertEqual(
            dualnav_agentcore.optimal_actions(self.env, PageState(0), self.goal),
            [Action.click(0), Action.open_tab(0)],
        )
        self.assertEqual(
            dualnav_agentcore.optimal_actions(self.env, PageState(2), self.goal),
            [Action.stop(answer=(52, 62, 72))],
        )

    def test_unreachable(self):
        goal = page_task(0)
        env = Environment(
            {
                0: Page(0, (Element(0, "link", (1,), target=1),)),
                1: Page(1, (Element(0, "link", (1,), target=1),)),
            },
            0,
        )
        self.assertEqual(dualnav_agentcore.optimal_actions(env, PageState(1), goal), [])

    def test_state_limit(self):
        with self.assertRaises(MethodUnavailable):
            dualnav_agentcore.reachable_states(self.env, self.goal, limit=2)


if __name__ == "__main__":
    unittest.main()
