"""
Exception hierarchy shared by fleetd, robotctl and the worker simulator.

Every error carries a stable ``code`` that is sent verbatim in wire
``error`` replies, so clients can branch on it without parsing messages.
"""
from typing import List, Optional, Sequence


class FleetError(Exception):
    """Base class for all domain errors"""
    code = "fleet_error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_reply(self) -> dict:
        return {"type": "error", "code": self.code, "message": self.message}


# ==================== PLAN / DAG ====================

class CycleError(FleetError):
    code = "cycle"

    def __init__(self, cycle: Sequence[str]):
        self.cycle: List[str] = list(cycle)
        super().__init__(f"dependency cycle: {' -> '.join(self.cycle + self.cycle[:1])}")


class DanglingDependency(FleetError):
    code = "dangling_dependency"

    def __init__(self, task_id: str, missing_id: str):
        self.task_id = task_id
        self.missing_id = missing_id
        super().__init__(f"task '{task_id}' depends on unknown task '{missing_id}'")


class InvalidTransition(FleetError):
    code = "invalid_transition"


# ==================== PLANNING ====================

class PlannerBackendError(FleetError):
    code = "planner_error"

    def __init__(self, goal_id: Optional[str], cause: str):
        self.goal_id = goal_id
        self.cause = cause
        target = f"goal '{goal_id}'" if goal_id else "goal set"
        super().__init__(f"planning failed for {target}: {cause}")


class PlanParseError(FleetError):
    code = "plan_parse_error"

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics: List[str] = list(diagnostics)
        super().__init__("; ".join(self.diagnostics) or "unparseable plan")


class DedupCycleError(FleetError):
    code = "dedup_cycle"

    def __init__(self, kept: str, dropped: str):
        self.kept = kept
        self.dropped = dropped
        super().__init__(f"merging '{dropped}' into '{kept}' would create a cycle")


class RulesError(FleetError):
    code = "rules_error"


# ==================== ALLOCATION ====================

class Infeasible(FleetError):
    code = "infeasible"

    def __init__(self, task_ids: Sequence[str], rows: Optional[Sequence[int]] = None):
        self.task_ids: List[str] = list(task_ids)
        self.rows: List[int] = list(rows or [])
        super().__init__(f"no robot can run: {', '.join(self.task_ids)}")


class AllocationParseError(FleetError):
    code = "allocation_parse_error"


class BackendUnavailable(FleetError):
    code = "backend_unavailable"


# ==================== SCHEDULING ====================

class UnknownTask(FleetError):
    code = "unknown_task"


class StaleResult(FleetError):
    code = "stale_result"


class DispatchError(FleetError):
    code = "dispatch_error"


class IncompleteTrace(FleetError):
    code = "incomplete_trace"


# ==================== FLEETD ====================

class NotFound(FleetError):
    code = "not_found"


class DuplicateRobot(FleetError):
    code = "duplicate_robot"


class SchemaError(FleetError):
    code = "schema_error"

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class UnknownRobot(FleetError):
    code = "unknown_robot"


class NoGoals(FleetError):
    code = "no_goals"


class NoRobots(FleetError):
    code = "no_robots"


class MissionActive(FleetError):
    code = "mission_active"


class CorruptSnapshot(FleetError):
    code = "corrupt_snapshot"


# ==================== WIRE PROTOCOL ====================

class ProtocolError(FleetError):
    code = "malformed"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        if code:
            self.code = code


class WorkerBusy(FleetError):
    code = "busy"


class WorkerUnreachable(FleetError):
    code = "unreachable"


# ==================== ROBOTCTL ====================

class FleetdUnreachable(FleetError):
    code = "fleetd_unreachable"


class RemoteError(FleetError):
    """An error reply from fleetd, carrying the remote code"""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
