"""
Simulated robot worker

A worker executes one task at a time for a fixed duration and answers with
task statuses. Failure and discovery scripts, keyed by substrings of task
descriptions, stage retries and replans deterministically.
"""
import asyncio
import logging
import math
import time
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.config import settings
from app.exceptions import ProtocolError, SchemaError, WorkerBusy, WorkerUnreachable
from app.services.protocol import (
    ExecuteTask, Hello, Ping, Pong, ReplanRequest, TaskStatusMessage, WireMessage, parse_message,
)
from app.utils.documents import load_yaml_file, pydantic_error_field, pydantic_error_reason
from app.utils.locks import ProcessingSlots

logger = logging.getLogger(__name__)

_INFINITE = ("inf", "infinity", "∞")
TASK_SLOT = "task"


def _failure_count(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in _INFINITE:
            return math.inf
        value = int(value)
    if isinstance(value, bool):
        raise ValueError("expected a count or 'inf'")
    if isinstance(value, float) and math.isinf(value) and value > 0:
        return math.inf
    if int(value) != value or value < 0:
        raise ValueError("failure counts must be non-negative integers or 'inf'")
    return float(int(value))


class WorkerProfile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    robot_name: str
    task_duration: float = Field(default=1.0, ge=0)
    failure_script: Dict[str, float] = Field(default_factory=dict)
    discovery_script: Dict[str, List[str]] = Field(default_factory=dict)

    @field_validator("failure_script", mode="before")
    @classmethod
    def _counts(cls, value):
        if not isinstance(value, dict):
            return value
        return {str(pattern): _failure_count(count) for pattern, count in value.items()}

    @field_validator("discovery_script", mode="before")
    @classmethod
    def _statements(cls, value):
        if not isinstance(value, dict):
            return value
        return {
            str(pattern): [statements] if isinstance(statements, str) else statements
            for pattern, statements in value.items()
        }

    @classmethod
    def load(cls, path: Union[str, Path], robot_name: Optional[str] = None) -> "WorkerProfile":
        """
        Read a profile document; robot_name overrides the document's name

        Raises:
            SchemaError: If the document does not match the profile schema
        """
        document = load_yaml_file(path) or {}
        if not isinstance(document, dict):
            raise SchemaError("profile", "expected a mapping")
        if robot_name:
            document["robot_name"] = robot_name
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise SchemaError(pydantic_error_field(e), pydantic_error_reason(e))

    @property
    def duration(self) -> Fraction:
        return Fraction(str(self.task_duration))


class WorkerBehavior:
    """Scripted outcomes; the first pattern contained in the description wins"""

    def __init__(self, profile: WorkerProfile):
        self.profile = profile
        self.failures_left: Dict[str, float] = dict(profile.failure_script)

    @staticmethod
    def _match(patterns, description: str) -> Optional[str]:
        lowered = description.lower()
        return next((p for p in patterns if p.lower() in lowered), None)

    def outcome(self, description: str) -> Tuple[bool, str, List[str]]:
        """
        Decide the result of one attempt

        Returns:
            (succeeded, detail, statements to report after success)
        """
        pattern = self._match(self.failures_left, description)
        if pattern is not None and self.failures_left[pattern] > 0:
            self.failures_left[pattern] -= 1
            return False, f"scripted failure ({pattern})", []
        discovered = self._match(self.profile.discovery_script, description)
        statements = list(self.profile.discovery_script[discovered]) if discovered else []
        return True, "done", statements


# ==================== MANAGER LINK ====================

class ManagerLink:
    """
    Outgoing connection to fleetd

    Messages are queued and written in order; while fleetd is unreachable
    they stay buffered and the link redials with exponential backoff.
    """

    def __init__(self, robot: str, host: str, port: int, backoff_cap: Optional[float] = None):
        self.robot = robot
        self.host = host
        self.port = port
        self.backoff_cap = backoff_cap or settings.WORKER_BACKOFF_CAP
        self.outbox: "asyncio.Queue[WireMessage]" = asyncio.Queue()
        self.connected = asyncio.Event()
        self._pending: Optional[WireMessage] = None

    def post(self, message: WireMessage) -> None:
        self.outbox.put_nowait(message)

    async def run(self) -> None:
        delay = 0.5
        while True:
            try:
                reader, writer = await asyncio.open_connection(self.host, self.port)
            except OSError as e:
                logger.warning(f"Manager {self.host}:{self.port} unreachable ({e}); retry in {delay:.1f}s")
                await asyncio.sleep(delay)
                delay = min(delay * 2, self.backoff_cap)
                continue
            delay = 0.5
            try:
                await self._session(reader, writer)
            except (ConnectionError, OSError) as e:
                logger.warning(f"Lost manager connection: {e}")
            finally:
                self.connected.clear()

    async def _session(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        writer.write(Hello(robot=self.robot).encode())
        await writer.drain()
        self.connected.set()
        logger.info(f"{self.robot} connected to manager {self.host}:{self.port}")
        watcher = asyncio.create_task(self._watch(reader))
        try:
            while True:
                if self._pending is None:
                    getter = asyncio.create_task(self.outbox.get())
                    done, _ = await asyncio.wait({getter, watcher}, return_when=asyncio.FIRST_COMPLETED)
                    if getter not in done:
                        getter.cancel()
                        raise ConnectionResetError("manager closed the connection")
                    self._pending = getter.result()
                writer.write(self._pending.encode())
                await writer.drain()
                self._pending = None
        finally:
            watcher.cancel()
            writer.close()

    async def _watch(self, reader: asyncio.StreamReader) -> None:
        while True:
            line = await reader.readline()
            if not line:
                return
            try:
                message = parse_message(line)
            except ProtocolError as e:
                logger.warning(f"Unreadable line from manager: {e.message}")
                continue
            if message.type == "error":
                logger.warning(f"Manager rejected a message: {message.code}: {message.message}")


# ==================== WORKER ====================

class SimulatedWorker:
    def __init__(self, profile: WorkerProfile, link: Optional[ManagerLink] = None):
        self.profile = profile
        self.behavior = WorkerBehavior(profile)
        self.link = link
        self.slots = ProcessingSlots(
            lambda key: WorkerBusy(f"{profile.robot_name} is already executing a task")
        )
        self.current: Optional[str] = None
        self._runner: Optional[asyncio.Task] = None

    @property
    def name(self) -> str:
        return self.profile.robot_name

    def _emit(self, message: WireMessage) -> None:
        if self.link is not None:
            self.link.post(message)

    def accept(self, message: ExecuteTask) -> None:
        """
        Start executing a task in the background

        Raises:
            WorkerBusy: If another task is still running
        """
        self.slots.claim(TASK_SLOT)
        self.current = message.task_id
        logger.info(f"{self.name}: executing {message.task_id} (attempt {message.attempt}): {message.description}")
        self._runner = asyncio.create_task(self._execute(message))

    def cancel(self, task_id: str) -> bool:
        if self.current != task_id or self._runner is None:
            return False
        self._runner.cancel()
        return True

    def _finish(self) -> None:
        self.current = None
        self._runner = None
        self.slots.release(TASK_SLOT)

    async def _execute(self, message: ExecuteTask) -> None:
        self._emit(TaskStatusMessage(robot=self.name, task_id=message.task_id, status="started"))
        try:
            if self.profile.task_duration:
                await asyncio.sleep(self.profile.task_duration)
            succeeded, detail, statements = self.behavior.outcome(message.description)
        except asyncio.CancelledError:
            self._finish()
            self._emit(TaskStatusMessage(robot=self.name, task_id=message.task_id,
                                         status="failed", detail="cancelled"))
            return
        # Free the slot before reporting so an immediate re-dispatch is accepted
        self._finish()
        status = "succeeded" if succeeded else "failed"
        self._emit(TaskStatusMessage(robot=self.name, task_id=message.task_id, status=status, detail=detail))
        logger.info(f"{self.name}: {message.task_id} {status}")
        if succeeded and statements:
            self._emit(ReplanRequest(robot=self.name, reason=f"discovered while '{message.description}'",
                                     statements=statements))


async def probe(host: str, port: int, timeout: Optional[float] = None) -> float:
    """
    Ping a worker

    Returns:
        Round-trip latency in seconds

    Raises:
        WorkerUnreachable: On connection failure, timeout or a non-pong answer
    """
    timeout = timeout or settings.PROBE_TIMEOUT
    started = time.monotonic()
    writer = None
    try:
        reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout)
        writer.write(Ping().encode())
        await writer.drain()
        line = await asyncio.wait_for(reader.readline(), timeout)
        reply = parse_message(line)
    except (OSError, asyncio.TimeoutError, ProtocolError) as e:
        raise WorkerUnreachable(f"{host}:{port} did not answer ping: {e.__class__.__name__} {e}")
    finally:
        if writer is not None:
            writer.close()
    if not isinstance(reply, Pong):
        raise WorkerUnreachable(f"{host}:{port} answered ping with '{reply.type}'")
    return time.monotonic() - started
