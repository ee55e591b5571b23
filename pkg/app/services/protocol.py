"""
Newline-delimited JSON wire protocol shared by fleetd, robot workers and
robotctl.

Each line is one object with a ``type`` discriminator. Worker messages keep
the field lists below exactly; operator requests are ``ctl_*`` messages
answered with ``ctl_result`` or ``error``.
"""
import json
from typing import Annotated, Any, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator

from app.exceptions import ProtocolError


class WireMessage(BaseModel):
    model_config = ConfigDict(extra="forbid")

    def encode(self) -> bytes:
        return (self.model_dump_json() + "\n").encode("utf-8")


# ==================== MANAGER -> WORKER ====================

class ExecuteTask(WireMessage):
    type: Literal["execute_task"] = "execute_task"
    task_id: str
    description: str
    attempt: int
    context: List[str] = Field(default_factory=list)


class CancelTask(WireMessage):
    type: Literal["cancel_task"] = "cancel_task"
    task_id: str


class Ping(WireMessage):
    type: Literal["ping"] = "ping"


# ==================== WORKER -> MANAGER ====================

class Hello(WireMessage):
    type: Literal["hello"] = "hello"
    robot: str


class TaskStatusMessage(WireMessage):
    type: Literal["task_status"] = "task_status"
    robot: str
    task_id: str
    status: Literal["started", "succeeded", "failed"]
    detail: str = ""


class ReplanRequest(WireMessage):
    type: Literal["replan_request"] = "replan_request"
    robot: str
    reason: str = ""
    statements: List[str] = Field(default_factory=list)

    @field_validator("statements")
    @classmethod
    def _drop_blank(cls, value: List[str]) -> List[str]:
        return [text.strip() for text in value if text.strip()]


class Pong(WireMessage):
    type: Literal["pong"] = "pong"


class ErrorReply(WireMessage):
    type: Literal["error"] = "error"
    code: str
    message: str


# ==================== OPERATOR (robotctl) ====================

class CtlRobotRegister(WireMessage):
    type: Literal["ctl_robot_register"] = "ctl_robot_register"
    document: str


class CtlRobotList(WireMessage):
    type: Literal["ctl_robot_list"] = "ctl_robot_list"


class CtlRobotRemove(WireMessage):
    type: Literal["ctl_robot_remove"] = "ctl_robot_remove"
    name: str


class CtlRobotDeploy(WireMessage):
    type: Literal["ctl_robot_deploy"] = "ctl_robot_deploy"
    name: str


class CtlWorldAdd(WireMessage):
    type: Literal["ctl_world_add"] = "ctl_world_add"
    text: str


class CtlWorldList(WireMessage):
    type: Literal["ctl_world_list"] = "ctl_world_list"


class CtlWorldRemove(WireMessage):
    type: Literal["ctl_world_remove"] = "ctl_world_remove"
    id: str


class CtlGoalAdd(WireMessage):
    type: Literal["ctl_goal_add"] = "ctl_goal_add"
    text: str


class CtlGoalList(WireMessage):
    type: Literal["ctl_goal_list"] = "ctl_goal_list"


class CtlGoalRemove(WireMessage):
    type: Literal["ctl_goal_remove"] = "ctl_goal_remove"
    id: str


class CtlPlanCreate(WireMessage):
    type: Literal["ctl_plan_create"] = "ctl_plan_create"
    planner: str
    allocator: str


class CtlPlanShow(WireMessage):
    type: Literal["ctl_plan_show"] = "ctl_plan_show"
    id: str
    format: Literal["text", "dot", "json", "trace"] = "text"


class CtlPlanList(WireMessage):
    type: Literal["ctl_plan_list"] = "ctl_plan_list"


class CtlTaskAdd(WireMessage):
    type: Literal["ctl_task_add"] = "ctl_task_add"
    plan: str
    desc: str
    after: List[str] = Field(default_factory=list)
    before: List[str] = Field(default_factory=list)
    robot: Optional[str] = None
    id: Optional[str] = None


class CtlRun(WireMessage):
    type: Literal["ctl_run"] = "ctl_run"
    plan: str


class CtlMissionStart(WireMessage):
    type: Literal["ctl_mission_start"] = "ctl_mission_start"
    planner: str
    allocator: str


class CtlStatus(WireMessage):
    type: Literal["ctl_status"] = "ctl_status"
    mission: Optional[str] = None


class CtlResult(WireMessage):
    type: Literal["ctl_result"] = "ctl_result"
    ok: bool = True
    data: Any = None


_MODELS = (
    ExecuteTask, CancelTask, Ping, Hello, TaskStatusMessage, ReplanRequest, Pong, ErrorReply,
    CtlRobotRegister, CtlRobotList, CtlRobotRemove, CtlRobotDeploy,
    CtlWorldAdd, CtlWorldList, CtlWorldRemove,
    CtlGoalAdd, CtlGoalList, CtlGoalRemove,
    CtlPlanCreate, CtlPlanShow, CtlPlanList, CtlTaskAdd, CtlRun, CtlMissionStart, CtlStatus,
    CtlResult,
)

Message = Annotated[Union[_MODELS], Field(discriminator="type")]

_ADAPTER: TypeAdapter = TypeAdapter(Message)

MESSAGE_TYPES = frozenset(model.model_fields["type"].default for model in _MODELS)


def parse_message(line: Union[str, bytes]) -> WireMessage:
    """
    Decode one protocol line

    Raises:
        ProtocolError: code "malformed" (not UTF-8 / not a JSON object),
            "unknown_type" or "invalid_message" (schema violation)
    """
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("line is not valid UTF-8")
    try:
        document = json.loads(line)
    except (ValueError, RecursionError) as e:
        raise ProtocolError(f"line is not JSON: {str(e)[:200]}")
    if not isinstance(document, dict):
        raise ProtocolError("message must be a JSON object")
    kind = document.get("type")
    if not isinstance(kind, str) or kind not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {str(kind)[:80]!r}", code="unknown_type")
    try:
        return _ADAPTER.validate_python(document)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())[1:]) or kind
        raise ProtocolError(f"{kind}: {where}: {first.get('msg')}", code="invalid_message")


def error_reply(code: str, message: str) -> ErrorReply:
    return ErrorReply(code=code, message=message)


def ok(data: Any = None) -> CtlResult:
    return CtlResult(ok=True, data=data)