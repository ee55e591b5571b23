from typing import List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.exceptions import (
    DuplicateRobot, InvalidTransition, NotFound, SchemaError, UnknownRobot,
)
from app.services.capabilities import CapabilityLexicon, annotate_capabilities
from app.services.dag import validate_dag
from app.utils.documents import load_yaml_text, pydantic_error_field, pydantic_error_reason
from app.utils.validators import normalize_task_id, sanitize_text

from .models import (
    FleetStore, Goal, MissionPhase, MissionState, RobotSpec, Statement, StatementSource, Task,
)


def _required_text(text: str, field: str = "text") -> str:
    """Sanitized operator text; blank input is a schema error, not a model error"""
    cleaned = sanitize_text(text or "")
    if not cleaned:
        raise SchemaError(field, "must not be empty")
    return cleaned


def _normalized_ids(raw_ids: Sequence[str], field: str) -> List[str]:
    try:
        return [normalize_task_id(raw) for raw in raw_ids]
    except ValueError as e:
        raise SchemaError(field, str(e))


# ==================== ROBOT OPERATIONS ====================

def parse_robot_document(document: str) -> RobotSpec:
    """
    Validate a robot spec document (YAML or JSON)

    Raises:
        SchemaError: Naming the first offending field
    """
    try:
        data = load_yaml_text(document)
    except ValueError as e:
        raise SchemaError("document", str(e))
    if not isinstance(data, dict):
        raise SchemaError("document", "expected a mapping of robot fields")
    try:
        return RobotSpec.model_validate(data)
    except ValidationError as e:
        raise SchemaError(pydantic_error_field(e), pydantic_error_reason(e))


def register_robot(store: FleetStore, document: str) -> RobotSpec:
    spec = parse_robot_document(document)
    if spec.name in store.robots:
        raise DuplicateRobot(f"robot '{spec.name}' is already registered")
    store.robots[spec.name] = spec
    return spec


def get_robot(store: FleetStore, name: str) -> RobotSpec:
    robot = store.robots.get(name)
    if robot is None:
        raise NotFound(f"no robot named '{name}'")
    return robot


def remove_robot(store: FleetStore, name: str) -> RobotSpec:
    get_robot(store, name)
    return store.robots.pop(name)


# ==================== GOAL OPERATIONS ====================

def add_goal(store: FleetStore, text: str) -> Goal:
    text = _required_text(text)
    goal = Goal(id=store.next_id("g"), text=text)
    store.goals.append(goal)
    return goal


def remove_goal(store: FleetStore, goal_id: str) -> Goal:
    goal = store.get_goal(goal_id)
    if goal is None:
        raise NotFound(f"no goal with id '{goal_id}'")
    store.goals.remove(goal)
    return goal


# ==================== WORLD OPERATIONS ====================

def add_statement(store: FleetStore, text: str,
                  source: StatementSource = StatementSource.OPERATOR) -> Statement:
    text = _required_text(text)
    statement = Statement(id=store.next_id("w"), text=text, source=source)
    store.world.statements.append(statement)
    return statement


def remove_statement(store: FleetStore, statement_id: str) -> Statement:
    statement = store.world.get(statement_id)
    if statement is None:
        raise NotFound(f"no world statement with id '{statement_id}'")
    store.world.statements.remove(statement)
    return statement


# ==================== PLAN OPERATIONS ====================

def get_mission(store: FleetStore, mission_id: str) -> MissionState:
    mission = store.missions.get(mission_id)
    if mission is None:
        raise NotFound(f"no plan or mission with id '{mission_id}'")
    return mission


def _free_task_id(store: FleetStore, mission: MissionState) -> Tuple[str, int]:
    """Next unused t<k> and its counter value; the counter itself is not touched"""
    value = store.counters.get("t", 0)
    while True:
        value += 1
        candidate = f"t{value}"
        if candidate not in mission.plan.tasks and candidate not in mission.completed:
            return candidate, value


def add_manual_task(store: FleetStore, plan_id: str, description: str, after: Sequence[str] = (),
                    before: Sequence[str] = (), robot: Optional[str] = None, task_id: Optional[str] = None,
                    lexicon: Optional[CapabilityLexicon] = None) -> Task:
    """
    Add an operator task to a plan that has not started executing

    The plan is edited on a copy and only swapped in once it is still a
    valid DAG, so a rejected task leaves the store unchanged. Tasks listed in
    ``before`` gain the new task as a dependency.

    Raises:
        NotFound: Unknown plan
        InvalidTransition: Plan already running or finished
        UnknownRobot: Pin to an unregistered robot
        SchemaError: Blank description or id, or explicit id already in use
        DanglingDependency / CycleError: From DAG validation
    """
    mission = get_mission(store, plan_id)
    if mission.phase not in (MissionPhase.PLANNING, MissionPhase.ALLOCATING):
        raise InvalidTransition(
            f"plan '{plan_id}' is {mission.phase.value}; tasks can only be added before it runs"
        )
    if robot is not None and robot not in store.robots:
        raise UnknownRobot(f"no robot named '{robot}'")

    description = _required_text(description, "desc")
    after = _normalized_ids(after, "after")
    successors = _normalized_ids(before, "before")

    counter = None
    if task_id is not None:
        new_id = _normalized_ids([task_id], "id")[0]
        if new_id in mission.plan.tasks:
            raise SchemaError("id", f"task '{new_id}' already exists in plan '{plan_id}'")
    else:
        new_id, counter = _free_task_id(store, mission)

    task = Task(id=new_id, description=description, depends_on=after, assigned_robot=robot)
    if lexicon is not None:
        annotate_capabilities([task], lexicon)

    plan = mission.plan.model_copy(deep=True)
    plan.add(task)
    for successor in successors:
        if successor not in plan.tasks:
            raise NotFound(f"plan '{plan_id}' has no task '{successor}'")
        plan.tasks[successor].depends_on = sorted(set(plan.tasks[successor].depends_on) | {new_id})
    validate_dag(plan)
    mission.plan = plan
    if counter is not None:
        store.counters["t"] = counter
    return task


def list_missions(store: FleetStore) -> List[MissionState]:
    return list(store.missions.values())
