"""
Task allocation: exact min-max load (MILP formulation solved by max flow),
LLM-proposed mappings and round-robin.

Pinned tasks (assigned_robot set before allocation) keep their robot under
every method. A pin naming an unregistered robot is dropped with a warning.
"""
import json
import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Type

import numpy as np

from app.config import settings
from app.exceptions import AllocationParseError, Infeasible, NoRobots
from app.services.llm_client import CompletionClient, Messages
from app.services.minmax_solver import solve_minmax
from app.services.prompt_builder import PromptBuilder
from app.services.structured_output import StructuredOutputError, extract_json
from app.store.models import Allocation, AllocationMethod, Plan, RobotSpec, Task, WorldState
from app.services.dag import topo_order
from app.utils.validators import normalize_task_id

logger = logging.getLogger(__name__)


def _require_robots(robots: Sequence[RobotSpec]) -> None:
    if not robots:
        raise NoRobots("at least one robot is required to allocate")


def _pins(tasks: Sequence[Task], robots: Sequence[RobotSpec], warnings: List[str]) -> Dict[str, str]:
    names = {robot.name for robot in robots}
    pins: Dict[str, str] = {}
    for task in tasks:
        if not task.assigned_robot:
            continue
        if task.assigned_robot not in names:
            warnings.append(f"task '{task.id}' is pinned to unregistered robot "
                            f"'{task.assigned_robot}'; pin ignored")
            continue
        robot = next(r for r in robots if r.name == task.assigned_robot)
        if not robot.can_run(task):
            warnings.append(f"task '{task.id}' is pinned to '{robot.name}', which lacks "
                            f"{sorted(set(task.required_capabilities) - set(robot.capabilities))}")
        pins[task.id] = task.assigned_robot
    return pins


def compatibility_matrix(tasks: Sequence[Task], robots: Sequence[RobotSpec],
                         pins: Optional[Dict[str, str]] = None) -> np.ndarray:
    """n x m boolean matrix; a pinned row is true only at its robot"""
    pins = pins or {}
    compat = np.zeros((len(tasks), len(robots)), dtype=bool)
    for i, task in enumerate(tasks):
        for j, robot in enumerate(robots):
            if task.id in pins:
                compat[i, j] = robot.name == pins[task.id]
            else:
                compat[i, j] = robot.can_run(task)
    return compat


def allocate_milp(tasks: Sequence[Task], robots: Sequence[RobotSpec]) -> Allocation:
    """
    Minimize the maximum number of tasks any robot receives

    Args:
        tasks: Tasks in the order rows are searched
        robots: Robots in registry order

    Returns:
        Allocation with method=milp and max_load set to the optimum

    Raises:
        Infeasible: Naming every task no robot can run
    """
    _require_robots(robots)
    warnings: List[str] = []
    pins = _pins(tasks, robots, warnings)
    compat = compatibility_matrix(tasks, robots, pins)
    try:
        solution = solve_minmax(compat)
    except Infeasible as e:
        raise Infeasible([tasks[i].id for i in e.rows], rows=e.rows)

    assignments = {
        task.id: robots[j].name for task, j in zip(tasks, solution.assignment())
    }
    return Allocation(assignments=assignments, method=AllocationMethod.MILP,
                      feasible=True, max_load=solution.M, warnings=warnings)


def _in_topological_order(tasks: Sequence[Task]) -> List[Task]:
    ids = {task.id for task in tasks}
    plan = Plan(id="allocation", tasks=[
        task.model_copy(update={"depends_on": [d for d in task.depends_on if d in ids]})
        for task in tasks
    ])
    return [plan.tasks[task_id] for task_id in topo_order(plan)]


def allocate_round_robin(tasks: Sequence[Task], robots: Sequence[RobotSpec]) -> Allocation:
    """
    Cycle through robots in registry order, ignoring capabilities

    Tasks are taken in topological order. Pinned tasks keep their robot and
    do not advance the cycle. The result is always flagged infeasible.
    """
    _require_robots(robots)
    warnings: List[str] = []
    pins = _pins(tasks, robots, warnings)
    assignments: Dict[str, str] = {}
    cursor = 0
    for task in _in_topological_order(tasks):
        if task.id in pins:
            assignments[task.id] = pins[task.id]
            continue
        assignments[task.id] = robots[cursor % len(robots)].name
        cursor += 1
    loads = list(Allocation(assignments=assignments, method=AllocationMethod.ROUND_ROBIN).loads().values())
    return Allocation(assignments=assignments, method=AllocationMethod.ROUND_ROBIN,
                      feasible=False, max_load=max(loads) if loads else 0, warnings=warnings)


def _check_mapping(document, tasks: Sequence[Task], robots: Sequence[RobotSpec],
                   pins: Dict[str, str]) -> Dict[str, str]:
    if not isinstance(document, dict):
        raise AllocationParseError("expected a JSON object mapping task id to robot name")
    names = {robot.name for robot in robots}
    wanted = {task.id for task in tasks}
    mapping: Dict[str, str] = {}
    problems: List[str] = []
    for raw_task, raw_robot in document.items():
        try:
            task_id = normalize_task_id(str(raw_task))
        except ValueError:
            problems.append("empty task id in mapping")
            continue
        if task_id not in wanted:
            problems.append(f"unknown task '{raw_task}'")
            continue
        if not isinstance(raw_robot, str) or raw_robot not in names:
            problems.append(f"task '{task_id}' mapped to unknown robot '{raw_robot}'")
            continue
        mapping[task_id] = raw_robot
    for task in tasks:
        if task.id not in mapping and task.id not in pins:
            problems.append(f"missing assignment for task '{task.id}'")
    if problems:
        raise AllocationParseError("; ".join(problems))
    return mapping


async def allocate_llm(tasks: Sequence[Task], robots: Sequence[RobotSpec], world,
                       client: CompletionClient, prompts: Optional[PromptBuilder] = None,
                       max_repair_retries: Optional[int] = None) -> Allocation:
    """
    Ask a completion backend for a {task id: robot} JSON mapping

    Names are validated; capability mismatches are only reported as warnings.

    Raises:
        AllocationParseError: If the mapping is still incomplete or names an
            unknown task/robot after the repair re-prompts
        BackendUnavailable: From the client
    """
    _require_robots(robots)
    prompts = prompts or PromptBuilder()
    retries = settings.LLM_MAX_REPAIR_RETRIES if max_repair_retries is None else max_repair_retries
    world_texts = world.texts() if isinstance(world, WorldState) else list(world or [])

    warnings: List[str] = []
    pins = _pins(tasks, robots, warnings)
    messages: Messages = [{
        "role": "user",
        "content": prompts.build_allocation_prompt(list(tasks), list(robots), world_texts),
    }]

    repairs = 0
    while True:
        reply = await client.complete(messages)
        try:
            try:
                document = extract_json(reply)
            except StructuredOutputError as e:
                raise AllocationParseError(str(e))
            mapping = _check_mapping(document, tasks, robots, pins)
            break
        except AllocationParseError as e:
            if repairs >= retries:
                raise
            repairs += 1
            logger.warning(f"Allocation rejected, repair {repairs}/{retries}: {e.message}")
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": f"The mapping was rejected: {e.message}. "
                                            "Return the corrected JSON object only."},
            ]

    by_name = {robot.name: robot for robot in robots}
    assignments: Dict[str, str] = {}
    for task in tasks:
        if task.id in pins:
            if mapping.get(task.id, pins[task.id]) != pins[task.id]:
                warnings.append(f"task '{task.id}' kept on pinned robot '{pins[task.id]}'")
            assignments[task.id] = pins[task.id]
            continue
        robot = mapping[task.id]
        if not by_name[robot].can_run(task):
            warnings.append(f"task '{task.id}' needs {task.required_capabilities} "
                            f"but '{robot}' has {by_name[robot].capabilities}")
        assignments[task.id] = robot
    for warning in warnings:
        logger.warning(warning)

    loads = list(Allocation(assignments=assignments, method=AllocationMethod.LLM).loads().values())
    return Allocation(assignments=assignments, method=AllocationMethod.LLM, feasible=True,
                      max_load=max(loads) if loads else 0, warnings=warnings)


# ==================== ALLOCATOR INTERFACE ====================

class Allocator(ABC):
    method: AllocationMethod

    @abstractmethod
    async def allocate(self, tasks: Sequence[Task], robots: Sequence[RobotSpec], world) -> Allocation:
        ...


class MilpAllocator(Allocator):
    method = AllocationMethod.MILP

    async def allocate(self, tasks, robots, world) -> Allocation:
        return allocate_milp(tasks, robots)


class RoundRobinAllocator(Allocator):
    method = AllocationMethod.ROUND_ROBIN

    async def allocate(self, tasks, robots, world) -> Allocation:
        return allocate_round_robin(tasks, robots)


class LLMAllocator(Allocator):
    method = AllocationMethod.LLM

    def __init__(self, client: CompletionClient, prompts: Optional[PromptBuilder] = None,
                 max_repair_retries: Optional[int] = None):
        self.client = client
        self.prompts = prompts
        self.max_repair_retries = max_repair_retries

    async def allocate(self, tasks, robots, world) -> Allocation:
        return await allocate_llm(tasks, robots, world, self.client, self.prompts,
                                  self.max_repair_retries)


ALLOCATORS: Dict[AllocationMethod, Type[Allocator]] = {
    AllocationMethod.MILP: MilpAllocator,
    AllocationMethod.ROUND_ROBIN: RoundRobinAllocator,
    AllocationMethod.LLM: LLMAllocator,
}


def create_allocator(method: AllocationMethod, **kwargs) -> Allocator:
    """Instantiate a registered allocator; the llm allocator needs client=..."""
    return ALLOCATORS[method](**kwargs)


async def allocate_with_fallback(allocator: Allocator, tasks: Sequence[Task],
                                 robots: Sequence[RobotSpec], world) -> Allocation:
    """
    Run an allocator; on Infeasible fall back to round-robin

    The fallback allocation carries feasible=false and the infeasibility
    diagnostic as a warning. Other errors propagate.
    """
    try:
        return await allocator.allocate(tasks, robots, world)
    except Infeasible as e:
        logger.warning(f"{allocator.method.value} allocation infeasible ({e.message}); "
                       f"falling back to round-robin")
        allocation = allocate_round_robin(tasks, robots)
        allocation.warnings.insert(0, f"{allocator.method.value} infeasible: {e.message}")
        return allocation


def greedy_mapping(tasks: Sequence[Task], robots: Sequence[RobotSpec]) -> Dict[str, str]:
    """Least-loaded compatible robot per task, ties in registry order"""
    loads = {robot.name: 0 for robot in robots}
    mapping: Dict[str, str] = {}
    for task in tasks:
        candidates = [r for r in robots if r.can_run(task)] or list(robots)
        if task.assigned_robot and task.assigned_robot in loads:
            choice = task.assigned_robot
        else:
            choice = min(candidates, key=lambda r: loads[r.name]).name
        loads[choice] += 1
        mapping[task.id] = choice
    return mapping


def allocation_json(mapping: Dict[str, str]) -> str:
    return json.dumps(mapping, indent=2, sort_keys=True)
