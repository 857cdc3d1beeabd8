# -*- coding: utf-8 -*-
# Copyright 2026 DualNav contributors
# License AGPL-3.0 or later (https://www.gnu.org/licenses/agpl.html).

import logging as _logging_module
import os
from datetime import datetime
from functools import wraps

# Setting the feature dimension or the visible window as environment
# variables changes them for every scorer, policy and environment built
# afterwards. Export e.g. `DUALNAV_FEATURE_DIM=4096` for quick experiments.
feature_dimension = int(os.environ.get("DUALNAV_FEATURE_DIM", 2**16))
window_size = int(os.environ.get("DUALNAV_WINDOW_SIZE", 8))

# The host application decides which records to display through its
# handlers; DEBUG messages from this package are always emitted
logger = _logging_module.getLogger("DualNav")
logger.setLevel(_logging_module.DEBUG)

__all__ = [
    "DualNavError",
    "InvalidSpecError",
    "UnsatisfiableDifficultyError",
    "ContractViolation",
    "DataError",
    "TrainingDiverged",
    "MethodUnavailable",
    "InvalidConfigError",
    "DivisionByZeroError",
    "logging",
    "contained",
    "logged_run",
    "message",
    "chunked",
    "check_finite",
]


class DualNavError(Exception):
    """Base class of every error raised on purpose by this package."""


class InvalidSpecError(DualNavError):
    pass


class UnsatisfiableDifficultyError(DualNavError):
    pass


class ContractViolation(DualNavError):
    """A caller broke the precondition of an operation."""


class DataError(DualNavError, ValueError):
    """Training or evaluation data is inconsistent with the environment.

    It is a ``ValueError`` so that the episode loop turns it into an error
    stop instead of aborting a whole suite.
    """


class TrainingDiverged(DualNavError):
    def __init__(self, msg, epoch=None, batch=None):
        super(TrainingDiverged, self).__init__(msg)
        self.epoch = epoch
        self.batch = batch


class MethodUnavailable(DualNavError):
    pass


class InvalidConfigError(DualNavError):
    pass


class DivisionByZeroError(DualNavError, ZeroDivisionError):
    pass


# Global var to count call quantity to a decorated function
dualnav_call_logging = {}


def logging(args_details=False, step=False):
    """
    This is a decorator for long running functions (training loops, suites).

    If a function is decorated, a log will be written each time the function
    is called.

    :param args_details: if True, arguments details are given in the log
    :param step: The log will be done only every step times.

    Typical use::

        @dualnav.logging()
        def train_offline(params, env, dataset):
            # some custom code

        @dualnav.logging(step=100)
        def run_episode(config, env, task):
            # some custom code
    """

    def wrap(func):
        @wraps(func)
        def wrapped_function(*args, **kwargs):
            to_log = True
            msg = "Executing method %s" % func.__name__
            # Count calls
            if step:
                # Compute unique name
                unique_name = "%s.%s" % (func.__module__, func.__name__)
                if unique_name not in dualnav_call_logging:
                    dualnav_call_logging[unique_name] = 0
                dualnav_call_logging[unique_name] += 1
                current = dualnav_call_logging[unique_name]
                if current == 1 or current % step == 0:
                    msg += " ; Calls quantity : %d" % current
                    if current == 1:
                        msg += " ; Logging Step : %d" % step
                else:
                    to_log = False
            # Log Args
            if args_details and to_log:
                if args:
                    msg += " ; args : %s" % str(args)
                if kwargs:
                    msg += " ; kwargs : %s" % str(kwargs)
            if to_log:
                logger.info(msg)
            return func(*args, **kwargs)

        return wrapped_function

    return wrap


def contained(system):
    """
    This is the decorator for the next-action functions of both systems.

    A ``ValueError`` raised while choosing an action does not abort the
    episode: it is logged and converted into a stop action whose reason
    reads ``"ERROR: <message>"``. The decorated function must return a pair
    whose first item is the action; the error stop comes paired with 0.

    :param str system: ``"S1"`` or ``"S2"``, used in the log message.
    """

    def wrap(func):
        @wraps(func)
        def wrapped_function(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except ValueError as exc:
                # Imported here, agentcore depends on this module
                from .dualnav_agentcore import Action

                logger.error("%s: error choosing an action: %s", system, exc)
                logger.exception(exc)
                return Action.stop(reason="ERROR: %s" % exc), 0

        return wrapped_function

    return wrap


def logged_run(label, func, *args, **kwargs):
    """
    Runs func and logs its outcome and duration at level DEBUG.

    :param label: text identifying the run in the log, e.g. the task id.
    :param func: the callable to run with the remaining arguments.
    :param describe: optional keyword-only callable turning the result into
      a short text for the log.
    """
    describe = kwargs.pop("describe", None)
    log_level = _logging_module.DEBUG
    log_msg = False
    outcome = ""
    start = datetime.now()
    try:
        result = func(*args, **kwargs)
    except Exception:
        log_level = _logging_module.ERROR
        log_msg = "Error after %(duration)s running %(label)s"
        raise
    else:
        log_msg = "%(outcome)s after %(duration)s running %(label)s"
        outcome = describe(result) if describe else "done"
    finally:
        duration = datetime.now() - start
        if log_msg:
            logger.log(
                log_level,
                log_msg,
                {"label": label, "outcome": outcome, "duration": duration},
            )
    return result


def message(component, task, step, text, *args, **kwargs):
    """
    Log handler for non-critical notifications about a run.

    :param component: the component the message concerns (``"S1"``,
      ``"S2"``, ``"switch"``, ``"harness"``...)
    :param task: the task id this message concerns (may be False)
    :param step: the episode step this message concerns (may be False)
    """
    argslist = list(args or [])
    prefix = ": "
    if step is not False and step is not None:
        argslist.insert(0, step)
        prefix = ", step %s" + prefix
    if task:
        argslist.insert(0, task)
        prefix = ", task %s" + prefix
    argslist.insert(0, component)
    prefix = "Component %s" + prefix

    logger.warning(prefix + text, *argslist, **kwargs)


def chunked(items, size, single=False):
    """Iterate over a sequence in chunks of ``size`` items. Yields either
    a whole chunk or a single item at the time; the last chunk may be
    shorter."""
    for i in range(0, len(items), size):
        chunk = items[i : i + size]
        if single:
            for item in chunk:
                yield item
            continue
        yield chunk


def check_finite(value, what, epoch=None, batch=None):
    """Raise TrainingDiverged if value is NaN or infinite."""
    if value != value or value in (float("inf"), float("-inf")):
        raise TrainingDiverged(
            "%s diverged at epoch %s, batch %s: %r" % (what, epoch, batch, value),
            epoch=epoch,
            batch=batch,
        )
    return value
