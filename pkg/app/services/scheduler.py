"""
Dispatch state machine over a mission's plan and idle-time analytics.

Functions here mutate the MissionState they are given and record every
transition in its trace; the mission runner is their only caller while a
mission executes.
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Set, Tuple, Union

from app.config import settings
from app.exceptions import IncompleteTrace, StaleResult, UnknownTask
from app.services.dag import is_ready
from app.store.models import (
    EventKind, ExecutionTrace, IN_FLIGHT_STATUSES, MissionState, TERMINAL_EVENTS, Task, TaskStatus,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskOutcome:
    succeeded: bool
    detail: str = ""

    @classmethod
    def success(cls, detail: str = "") -> "TaskOutcome":
        return cls(True, detail)

    @classmethod
    def failure(cls, detail: str = "") -> "TaskOutcome":
        return cls(False, detail)


@dataclass(frozen=True)
class Completed:
    task_id: str


@dataclass(frozen=True)
class Redispatch:
    task_id: str
    robot: str
    attempt: int


@dataclass(frozen=True)
class TriggerReplan:
    task_id: str
    robot: str
    detail: str


Effect = Union[Completed, Redispatch, TriggerReplan]


def busy_robots(state: MissionState) -> Set[str]:
    """Robots with a dispatched or running task"""
    return {
        task.assigned_robot for task in state.plan.tasks.values()
        if task.status in IN_FLIGHT_STATUSES and task.assigned_robot
    }


def robot_for(state: MissionState, task: Task) -> Optional[str]:
    if state.allocation and task.id in state.allocation.assignments:
        return state.allocation.assignments[task.id]
    return task.assigned_robot


def refresh_ready(state: MissionState) -> List[str]:
    """Promote pending tasks whose dependencies all succeeded to ready"""
    promoted = []
    for task_id in sorted(state.plan.tasks):
        task = state.plan.tasks[task_id]
        if task.status == TaskStatus.PENDING and is_ready(state.plan, task):
            task.set_status(TaskStatus.READY)
            promoted.append(task_id)
    return promoted


def ready_set(state: MissionState) -> List[Tuple[Task, str]]:
    """
    Tasks that can be dispatched now, sorted by task id

    A task qualifies when all its dependencies succeeded and its robot has
    nothing in flight; a robot gets at most one task per call.
    """
    taken = busy_robots(state)
    ready: List[Tuple[Task, str]] = []
    for task_id in sorted(state.plan.tasks):
        task = state.plan.tasks[task_id]
        if not is_ready(state.plan, task):
            continue
        robot = robot_for(state, task)
        if robot is None or robot in taken:
            continue
        taken.add(robot)
        ready.append((task, robot))
    return ready


def dispatch_task(state: MissionState, task_id: str, robot: str, now: Fraction) -> Task:
    """First dispatch of a waiting task: attempts becomes 1"""
    task = _get_task(state, task_id)
    task.set_status(TaskStatus.DISPATCHED)
    task.attempts += 1
    task.assigned_robot = robot
    state.trace.record(now, EventKind.DISPATCHED, task_id, robot, f"attempt {task.attempts}")
    return task


def _get_task(state: MissionState, task_id: str) -> Task:
    task = state.plan.tasks.get(task_id)
    if task is not None:
        return task
    if task_id in state.completed or state.trace.for_task(task_id):
        raise StaleResult(f"task '{task_id}' is no longer part of mission {state.id}")
    raise UnknownTask(f"mission {state.id} has no task '{task_id}'")


def _check_in_flight(state: MissionState, task: Task, robot: Optional[str]) -> None:
    if task.status not in IN_FLIGHT_STATUSES:
        raise StaleResult(f"task '{task.id}' is {task.status.value}; result ignored")
    if robot is not None and robot != task.assigned_robot:
        raise StaleResult(f"task '{task.id}' runs on '{task.assigned_robot}', not '{robot}'")


def mark_started(state: MissionState, task_id: str, now: Fraction, robot: Optional[str] = None) -> None:
    task = _get_task(state, task_id)
    _check_in_flight(state, task, robot)
    if task.status == TaskStatus.DISPATCHED:
        task.set_status(TaskStatus.RUNNING)
        state.trace.record(now, EventKind.STARTED, task_id, task.assigned_robot)


def on_task_result(state: MissionState, task_id: str, outcome: TaskOutcome, now: Fraction,
                   robot: Optional[str] = None, retry_limit: Optional[int] = None) -> Effect:
    """
    Apply a terminal status reported for the task's current attempt

    Returns:
        Completed on success; Redispatch (state already updated, attempts
        incremented) while attempts < retry limit; TriggerReplan once the
        limit is reached

    Raises:
        UnknownTask: If the task was never part of this mission
        StaleResult: If the task is not in flight (e.g. cancelled) or the
            result comes from another robot
    """
    limit = retry_limit or settings.TASK_RETRY_LIMIT
    task = _get_task(state, task_id)
    _check_in_flight(state, task, robot)
    robot_name = task.assigned_robot

    if outcome.succeeded:
        task.set_status(TaskStatus.SUCCEEDED)
        state.trace.record(now, EventKind.SUCCEEDED, task_id, robot_name, outcome.detail)
        refresh_ready(state)
        return Completed(task_id)

    state.trace.record(now, EventKind.FAILED, task_id, robot_name, outcome.detail)
    if task.attempts < limit:
        task.set_status(TaskStatus.DISPATCHED)
        task.attempts += 1
        state.trace.record(now, EventKind.DISPATCHED, task_id, robot_name, f"attempt {task.attempts}")
        logger.info(f"Task {task_id} failed on {robot_name}, retrying (attempt {task.attempts}/{limit})")
        return Redispatch(task_id, robot_name, task.attempts)

    task.set_status(TaskStatus.FAILED)
    state.trace.record(now, EventKind.REPLAN_REQUESTED, task_id, robot_name,
                       f"{limit} attempts failed: {outcome.detail}")
    logger.warning(f"Task {task_id} failed {limit} times on {robot_name}; replan required")
    return TriggerReplan(task_id, robot_name, outcome.detail)


def cancel_in_flight(state: MissionState, now: Fraction, detail: str = "replan") -> List[Tuple[str, str]]:
    """Cancel every dispatched/running task; returns (task id, robot) pairs"""
    cancelled = []
    for task_id in sorted(state.plan.tasks):
        task = state.plan.tasks[task_id]
        if task.status in IN_FLIGHT_STATUSES:
            task.set_status(TaskStatus.CANCELLED)
            state.trace.record(now, EventKind.CANCELLED, task_id, task.assigned_robot, detail)
            cancelled.append((task_id, task.assigned_robot))
    return cancelled


def all_succeeded(state: MissionState) -> bool:
    return all(task.status == TaskStatus.SUCCEEDED for task in state.plan.tasks.values())


# ==================== ANALYTICS ====================

def busy_intervals(trace: ExecutionTrace) -> Dict[str, List[Tuple[Fraction, Fraction]]]:
    """
    Per-robot [begin, end] intervals of task activity

    An attempt begins at its started event, or at its dispatched event when
    no start was reported, and ends at the next terminal event for the task.

    Raises:
        IncompleteTrace: If some attempt never reached a terminal event
    """
    open_since: Dict[str, Tuple[Fraction, Optional[str]]] = {}
    intervals: Dict[str, List[Tuple[Fraction, Fraction]]] = {}
    for event in trace.events:
        if event.task_id is None:
            continue
        if event.kind == EventKind.DISPATCHED:
            open_since[event.task_id] = (event.time, event.robot)
        elif event.kind == EventKind.STARTED and event.task_id in open_since:
            open_since[event.task_id] = (event.time, event.robot)
        elif event.kind in TERMINAL_EVENTS and event.task_id in open_since:
            begin, robot = open_since.pop(event.task_id)
            intervals.setdefault(robot or event.robot or "?", []).append((begin, event.time))
    if open_since:
        raise IncompleteTrace(f"tasks without a terminal event: {', '.join(sorted(open_since))}")
    return intervals


def makespan(trace: ExecutionTrace) -> Fraction:
    ends = [event.time for event in trace.events if event.kind in TERMINAL_EVENTS]
    return max(ends) - trace.start if ends else Fraction(0)


def idle_percentage(trace: ExecutionTrace, robot_count: int) -> Fraction:
    """
    Share of robot-time not spent on tasks, relative to robot_count x makespan

    Returns:
        Exact percentage in [0, 100]; 0 for a zero makespan

    Raises:
        ValueError: If robot_count < 1
        IncompleteTrace: If some task never reached a terminal event
    """
    if robot_count < 1:
        raise ValueError("robot_count must be >= 1")
    intervals = busy_intervals(trace)
    span = makespan(trace)
    if span == 0:
        return Fraction(0)
    busy = sum((end - begin for spans in intervals.values() for begin, end in spans), Fraction(0))
    return Fraction(100) * (robot_count * span - busy) / (robot_count * span)
