from datetime import datetime, timezone
from enum import Enum
from fractions import Fraction
from typing import Annotated, Dict, List, Optional, Tuple

from pydantic import (
    BaseModel, ConfigDict, Field, PlainSerializer, PlainValidator,
    field_serializer, field_validator, model_validator,
)

from app.exceptions import InvalidTransition
from app.utils.validators import normalize_task_id, validate_port


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _to_fraction(value) -> Fraction:
    if isinstance(value, bool):
        raise ValueError("expected a rational number")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise ValueError(f"cannot read {value!r} as a rational number")


# Exact rational time, written as "3/2" in JSON
Rational = Annotated[
    Fraction,
    PlainValidator(_to_fraction),
    PlainSerializer(lambda value: str(value), return_type=str, when_used="json"),
]


def _sorted_unique(values) -> List[str]:
    return sorted({str(v).strip() for v in values if str(v).strip()})


# ==================== GOALS / WORLD ====================

class Goal(BaseModel):
    id: str
    text: str

    @field_validator("id", "text")
    @classmethod
    def _nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("must not be empty")
        return value


class StatementSource(str, Enum):
    OPERATOR = "operator"
    ROBOT = "robot"


class Statement(BaseModel):
    id: str
    text: str
    added_at: datetime = Field(default_factory=utcnow)
    source: StatementSource = StatementSource.OPERATOR

    @field_validator("text")
    @classmethod
    def _nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("statement text must not be empty")
        return value


class WorldState(BaseModel):
    statements: List[Statement] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> "WorldState":
        ids = [s.id for s in self.statements]
        if len(ids) != len(set(ids)):
            raise ValueError("statement ids must be unique")
        return self

    def texts(self) -> List[str]:
        return [s.text for s in self.statements]

    def get(self, statement_id: str) -> Optional[Statement]:
        return next((s for s in self.statements if s.id == statement_id), None)


# ==================== TASKS / PLANS ====================

class TaskStatus(str, Enum):
    PENDING = "pending"
    READY = "ready"
    DISPATCHED = "dispatched"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    CANCELLED = "cancelled"


TERMINAL_STATUSES = frozenset({TaskStatus.SUCCEEDED, TaskStatus.CANCELLED})
WAITING_STATUSES = frozenset({TaskStatus.PENDING, TaskStatus.READY})
IN_FLIGHT_STATUSES = frozenset({TaskStatus.DISPATCHED, TaskStatus.RUNNING})

_TASK_TRANSITIONS = {
    TaskStatus.PENDING: {TaskStatus.READY, TaskStatus.DISPATCHED, TaskStatus.CANCELLED},
    TaskStatus.READY: {TaskStatus.PENDING, TaskStatus.DISPATCHED, TaskStatus.CANCELLED},
    TaskStatus.DISPATCHED: {TaskStatus.DISPATCHED, TaskStatus.RUNNING, TaskStatus.SUCCEEDED,
                            TaskStatus.FAILED, TaskStatus.CANCELLED},
    TaskStatus.RUNNING: {TaskStatus.DISPATCHED, TaskStatus.SUCCEEDED, TaskStatus.FAILED,
                         TaskStatus.CANCELLED},
    TaskStatus.FAILED: {TaskStatus.CANCELLED},
    TaskStatus.SUCCEEDED: set(),
    TaskStatus.CANCELLED: set(),
}


class Task(BaseModel):
    id: str
    description: str
    depends_on: List[str] = Field(default_factory=list)
    required_capabilities: List[str] = Field(default_factory=list)
    goal_id: Optional[str] = None
    status: TaskStatus = TaskStatus.PENDING
    attempts: int = Field(default=0, ge=0)
    assigned_robot: Optional[str] = None

    @field_validator("id")
    @classmethod
    def _normalize_id(cls, value: str) -> str:
        return normalize_task_id(value)

    @field_validator("description")
    @classmethod
    def _nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("task description must not be empty")
        return value

    @field_validator("depends_on")
    @classmethod
    def _normalize_deps(cls, value: List[str]) -> List[str]:
        return sorted({normalize_task_id(v) for v in value})

    @field_validator("required_capabilities")
    @classmethod
    def _normalize_caps(cls, value: List[str]) -> List[str]:
        return _sorted_unique(v.lower() for v in value)

    def set_status(self, status: TaskStatus) -> None:
        """Move along the executor state machine; terminal states never regress"""
        if status not in _TASK_TRANSITIONS[self.status]:
            raise InvalidTransition(
                f"task '{self.id}' cannot go from {self.status.value} to {status.value}"
            )
        self.status = status


class PlanStrategy(str, Enum):
    PER_GOAL = "per_goal"
    BIG_DAG = "big_dag"
    MONOLITHIC = "monolithic"
    MANUAL = "manual"


class Plan(BaseModel):
    id: str
    strategy: PlanStrategy = PlanStrategy.MANUAL
    tasks: Dict[str, Task] = Field(default_factory=dict)

    @field_validator("tasks", mode="before")
    @classmethod
    def _tasks_from_list(cls, value):
        if not isinstance(value, list):
            return value
        tasks: Dict[str, Task] = {}
        for item in value:
            task = item if isinstance(item, Task) else Task.model_validate(item)
            if task.id in tasks:
                raise ValueError(f"duplicate task id '{task.id}'")
            tasks[task.id] = task
        return tasks

    @model_validator(mode="after")
    def _keys_match_ids(self) -> "Plan":
        for key, task in self.tasks.items():
            if key != task.id:
                raise ValueError(f"task key '{key}' does not match id '{task.id}'")
        return self

    @field_serializer("tasks")
    def _tasks_to_list(self, tasks: Dict[str, Task], _info) -> list:
        return [tasks[key].model_dump(mode=_info.mode) for key in sorted(tasks)]

    @property
    def edges(self) -> List[Tuple[str, str]]:
        """(t_i, t_j) pairs where t_i must precede t_j"""
        return sorted(
            (dep, task.id) for task in self.tasks.values() for dep in task.depends_on
        )

    def add(self, task: Task) -> None:
        self.tasks[task.id] = task

    def to_json(self) -> str:
        """Canonical textual form with stable key order"""
        return self.model_dump_json(indent=2)


# ==================== ROBOTS ====================

class DeploymentMode(str, Enum):
    CONTAINER = "container"
    NATIVE = "native"


class Endpoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    host: str
    port: int

    @field_validator("host")
    @classmethod
    def _host_nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value:
            raise ValueError("host must not be empty")
        return value

    @field_validator("port")
    @classmethod
    def _port_range(cls, value: int) -> int:
        if not validate_port(value):
            raise ValueError("port must be in [1, 65535]")
        return value

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"


class Deployment(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: DeploymentMode = DeploymentMode.NATIVE
    image: Optional[str] = None

    @model_validator(mode="after")
    def _image_iff_container(self) -> "Deployment":
        if self.mode == DeploymentMode.CONTAINER and not self.image:
            raise ValueError("image is required when mode is container")
        if self.mode == DeploymentMode.NATIVE and self.image:
            raise ValueError("image is only allowed when mode is container")
        return self


class RobotSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    capabilities: List[str]
    endpoint: Endpoint
    deployment: Deployment = Field(default_factory=Deployment)

    @field_validator("name")
    @classmethod
    def _name_nonempty(cls, value: str) -> str:
        value = value.strip()
        if not value or any(ch.isspace() for ch in value):
            raise ValueError("name must be a nonempty word")
        return value

    @field_validator("capabilities")
    @classmethod
    def _caps_nonempty(cls, value: List[str]) -> List[str]:
        caps = _sorted_unique(v.lower() for v in value)
        if not caps:
            raise ValueError("at least one capability is required")
        return caps

    def can_run(self, task: Task) -> bool:
        """Empty requirement sets are compatible with every robot"""
        return set(task.required_capabilities) <= set(self.capabilities)


# ==================== ALLOCATION ====================

class AllocationMethod(str, Enum):
    MILP = "milp"
    LLM = "llm"
    ROUND_ROBIN = "round_robin"


class Allocation(BaseModel):
    assignments: Dict[str, str] = Field(default_factory=dict)
    method: AllocationMethod
    feasible: bool = True
    max_load: Optional[int] = None
    warnings: List[str] = Field(default_factory=list)

    def loads(self) -> Dict[str, int]:
        loads: Dict[str, int] = {}
        for robot in self.assignments.values():
            loads[robot] = loads.get(robot, 0) + 1
        return loads


# ==================== EXECUTION ====================

class EventKind(str, Enum):
    DISPATCHED = "dispatched"
    STARTED = "started"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    REPLAN_REQUESTED = "replan_requested"
    CANCELLED = "cancelled"


TERMINAL_EVENTS = frozenset({EventKind.SUCCEEDED, EventKind.FAILED, EventKind.CANCELLED})


class TraceEvent(BaseModel):
    time: Rational
    task_id: Optional[str] = None
    robot: Optional[str] = None
    kind: EventKind
    detail: str = ""


class ExecutionTrace(BaseModel):
    start: Rational = Fraction(0)
    events: List[TraceEvent] = Field(default_factory=list)

    def record(self, time: Fraction, kind: EventKind, task_id: Optional[str] = None,
               robot: Optional[str] = None, detail: str = "") -> TraceEvent:
        # Times never go backwards, even if two clocks disagree slightly
        if self.events and time < self.events[-1].time:
            time = self.events[-1].time
        event = TraceEvent(time=time, task_id=task_id, robot=robot, kind=kind, detail=detail)
        self.events.append(event)
        return event

    def for_task(self, task_id: str) -> List[TraceEvent]:
        return [e for e in self.events if e.task_id == task_id]

    def to_lines(self) -> str:
        """One JSON object per line: time, task_id, robot, kind, detail"""
        return "".join(event.model_dump_json() + "\n" for event in self.events)


class MissionPhase(str, Enum):
    PLANNING = "planning"
    ALLOCATING = "allocating"
    EXECUTING = "executing"
    REPLANNING = "replanning"
    DONE = "done"
    ABORTED = "aborted"


FINAL_PHASES = frozenset({MissionPhase.DONE, MissionPhase.ABORTED})

_PHASE_TRANSITIONS = {
    MissionPhase.PLANNING: {MissionPhase.ALLOCATING, MissionPhase.DONE, MissionPhase.ABORTED},
    MissionPhase.ALLOCATING: {MissionPhase.EXECUTING, MissionPhase.ABORTED},
    MissionPhase.EXECUTING: {MissionPhase.REPLANNING, MissionPhase.DONE, MissionPhase.ABORTED},
    MissionPhase.REPLANNING: {MissionPhase.PLANNING, MissionPhase.DONE, MissionPhase.ABORTED},
    MissionPhase.DONE: set(),
    MissionPhase.ABORTED: set(),
}


class MissionState(BaseModel):
    id: str
    goal_ids: List[str] = Field(default_factory=list)
    strategy: PlanStrategy = PlanStrategy.PER_GOAL
    allocator: AllocationMethod = AllocationMethod.MILP
    plan: Plan
    allocation: Optional[Allocation] = None
    trace: ExecutionTrace = Field(default_factory=ExecutionTrace)
    phase: MissionPhase = MissionPhase.PLANNING
    completed: Dict[str, Task] = Field(default_factory=dict)
    replans: int = 0
    fruitless_replans: int = 0
    successes_at_last_replan: int = 0
    diagnostic: Optional[str] = None
    created_at: datetime = Field(default_factory=utcnow)

    def transition(self, phase: MissionPhase) -> None:
        if phase not in _PHASE_TRANSITIONS[self.phase]:
            raise InvalidTransition(
                f"mission '{self.id}' cannot go from {self.phase.value} to {phase.value}"
            )
        self.phase = phase

    def abort(self, diagnostic: str) -> None:
        if self.phase not in FINAL_PHASES:
            self.phase = MissionPhase.ABORTED
        self.diagnostic = diagnostic

    @property
    def feasible(self) -> bool:
        return self.allocation.feasible if self.allocation else True

    def succeeded_count(self) -> int:
        current = sum(1 for t in self.plan.tasks.values() if t.status == TaskStatus.SUCCEEDED)
        return len(self.completed) + current


# ==================== STORE ====================

class FleetStore(BaseModel):
    robots: Dict[str, RobotSpec] = Field(default_factory=dict)
    goals: List[Goal] = Field(default_factory=list)
    world: WorldState = Field(default_factory=WorldState)
    missions: Dict[str, MissionState] = Field(default_factory=dict)
    rules_dir: str = "fleet_rules"
    counters: Dict[str, int] = Field(default_factory=dict)

    def next_id(self, prefix: str) -> str:
        """Monotonic ids per prefix: g1, g2, ... (never reused after removal)"""
        value = self.counters.get(prefix, 0) + 1
        self.counters[prefix] = value
        return f"{prefix}{value}"

    def get_goal(self, goal_id: str) -> Optional[Goal]:
        return next((g for g in self.goals if g.id == goal_id), None)

    def active_mission(self) -> Optional[MissionState]:
        for mission in self.missions.values():
            if mission.phase in (MissionPhase.EXECUTING, MissionPhase.REPLANNING):
                return mission
        return None

    def latest_mission(self) -> Optional[MissionState]:
        if not self.missions:
            return None
        return list(self.missions.values())[-1]
