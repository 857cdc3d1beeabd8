#!/usr/bin/env python

"""
test_dualnav_tools
----------------------------------

Tests for the core `dualnav` module and `dualnav_tools`.
"""
import os
import shutil
import tempfile
import unittest

import mock
import numpy as np

from dualnav import dualnav, dualnav_tools
from dualnav.dualnav_agentcore import Action
from dualnav.dualnav_webenv import Element, Page


class TestDualnavCore(unittest.TestCase):
    def test_chunked(self):
        self.assertEqual(list(dualnav.chunked([1, 2, 3, 4, 5], 2)), [[1, 2], [3, 4], [5]])
        self.assertEqual(list(dualnav.chunked([1, 2, 3], 2, single=True)), [1, 2, 3])

    def test_check_finite(self):
        self.assertEqual(dualnav.check_finite(1.5, "loss"), 1.5)
        with self.assertRaises(dualnav.TrainingDiverged) as context:
            dualnav.check_finite(float("nan"), "loss", epoch=2, batch=7)
        self.assertEqual(context.exception.epoch, 2)
        self.assertEqual(context.exception.batch, 7)
        with self.assertRaises(dualnav.TrainingDiverged):
            dualnav.check_finite(float("inf"), "loss")

    def test_contained_turns_value_errors_into_stops(self):
        @dualnav.contained("S1")
        def failing():
            raise ValueError("boom")

        with mock.patch.object(dualnav.logger, "error"), mock.patch.object(
            dualnav.logger, "exception"
        ):
            action, tokens = failing()
        self.assertEqual(action.kind, "stop")
        self.assertEqual(action.reason, "ERROR: boom")
        self.assertEqual(tokens, 0)

    def test_contained_lets_other_results_through(self):
        @dualnav.contained("S2")
        def working():
            return Action.scroll(), 30

        self.assertEqual(working(), (Action.scroll(), 30))

    def test_logged_run(self):
        with mock.patch.object(dualnav.logger, "log") as log:
            self.assertEqual(dualnav.logged_run("t0", lambda x: x + 1, 1), 2)
            self.assertEqual(log.call_args[0][0], dualnav._logging_module.DEBUG)

            def broken():
                raise KeyError("x")

            with self.assertRaises(KeyError):
                dualnav.logged_run("t1", broken)
            self.assertEqual(log.call_args[0][0], dualnav._logging_module.ERROR)

    def test_message(self):
        with mock.patch.object(dualnav.logger, "warning") as warning:
            dualnav.message("S2", "t3", 4, "gave up after %d expansions", 12)
        warning.assert_called_once_with(
            "Component %s, task %s, step %s: gave up after %d expansions", "S2", "t3", 4, 12
        )

    def test_logging_decorator_step(self):
        @dualnav.logging(step=2)
        def counted():
            return True

        with mock.patch.object(dualnav.logger, "info") as info:
            for _call in range(4):
                counted()
        # first call, then every second call
        self.assertEqual(info.call_count, 3)


class TestDualnavTools(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_stable_hash(self):
        self.assertEqual(dualnav_tools.stable_hash(1, "a", [2]), dualnav_tools.stable_hash(1, "a", [2]))
        self.assertNotEqual(dualnav_tools.stable_hash(1, "a"), dualnav_tools.stable_hash(1, "b"))
        self.assertLess(dualnav_tools.stable_hash("x"), 2**64)

    def test_tensor_file(self):
        path = os.path.join(self.directory, "params.npz")
        dualnav_tools.save_tensors(path, {"kind": "gate"}, weights=np.arange(3.0))
        header, arrays = dualnav_tools.load_tensors(path)
        self.assertEqual(header, {"kind": "gate"})
        np.testing.assert_array_equal(arrays["weights"], np.arange(3.0))

    def test_jsonl(self):
        path = os.path.join(self.directory, "rows.jsonl")
        self.assertEqual(dualnav_tools.write_jsonl(path, iter([{"a": 1}, {"b": [2]}])), 2)
        self.assertEqual(dualnav_tools.read_jsonl(path), [{"a": 1}, {"b": [2]}])

    def test_render_page(self):
        page = Page(
            3,
            (
                Element(0, "link", (1, 2), target=4, depth=1),
                Element(1, "textbox", (5,), accepts_text=True, depth=3),
            ),
            (7, 8),
        )
        html = dualnav_tools.render_page(page)
        self.assertIn('data-page="3"', html)
        self.assertIn('data-target="4"', html)
        self.assertIn('placeholder="t5"', html)
        self.assertEqual(dualnav_tools.element_depths(html), {0: 1, 1: 3})


if __name__ == "__main__":
    unittest.main()
