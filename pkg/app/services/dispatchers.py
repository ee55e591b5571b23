"""
Task delivery to robots.

A dispatcher sends tasks and produces a single ordered stream of execution
events for the mission runner: the TCP dispatcher over the wire protocol,
the simulated one on a virtual clock for tests and sweeps.
"""
import asyncio
import heapq
import itertools
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

from app.config import settings
from app.exceptions import DispatchError, ProtocolError
from app.services.protocol import CancelTask, ErrorReply, ExecuteTask, parse_message
from app.services.scheduler import TaskOutcome
from app.services.worker_sim import WorkerBehavior, WorkerProfile
from app.store.models import RobotSpec, Task

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskStarted:
    robot: str
    task_id: str


@dataclass(frozen=True)
class TaskFinished:
    robot: str
    task_id: str
    outcome: TaskOutcome


@dataclass(frozen=True)
class ReplanRequested:
    robot: str
    reason: str = ""
    statements: Tuple[str, ...] = ()


ExecutionEvent = Union[TaskStarted, TaskFinished, ReplanRequested]


class Dispatcher(ABC):
    @abstractmethod
    async def send_task(self, robot: RobotSpec, task: Task, attempt: int, context: List[str]) -> None:
        """
        Hand one attempt of a task to a robot

        Raises:
            DispatchError: If the robot cannot be reached
        """

    @abstractmethod
    async def cancel_task(self, robot: RobotSpec, task_id: str) -> None:
        ...

    @abstractmethod
    async def next_event(self) -> Optional[ExecutionEvent]:
        """Wait for the next event; None when no event can ever arrive"""

    @abstractmethod
    def now(self) -> Fraction:
        ...

    async def close(self) -> None:
        pass


# ==================== SIMULATED ====================

@dataclass(order=True)
class _Scheduled:
    time: Fraction
    seq: int
    event: ExecutionEvent = field(compare=False)
    token: Optional[int] = field(default=None, compare=False)


class SimulatedDispatcher(Dispatcher):
    """
    Discrete-event dispatcher on a virtual rational clock

    Each attempt starts immediately and finishes after its robot's task
    duration; outcomes come from per-robot worker profiles (always-successful
    unit tasks by default).
    """

    def __init__(self, profiles: Iterable[WorkerProfile] = (), default_duration: Fraction = Fraction(1),
                 unreachable: Iterable[str] = ()):
        self.clock = Fraction(0)
        self.default_duration = Fraction(default_duration)
        self.behaviors: Dict[str, WorkerBehavior] = {p.robot_name: WorkerBehavior(p) for p in profiles}
        self.unreachable: Set[str] = set(unreachable)
        self.sent: List[Tuple[Fraction, str, str, int]] = []
        self._queue: List[_Scheduled] = []
        self._seq = itertools.count()
        self._tokens: Dict[Tuple[str, str], int] = {}
        self._cancelled: Set[int] = set()

    def _push(self, at: Fraction, event: ExecutionEvent, token: Optional[int] = None) -> None:
        heapq.heappush(self._queue, _Scheduled(at, next(self._seq), event, token))

    async def send_task(self, robot: RobotSpec, task: Task, attempt: int, context: List[str]) -> None:
        if robot.name in self.unreachable:
            raise DispatchError(f"robot '{robot.name}' is unreachable")
        behavior = self.behaviors.get(robot.name)
        if behavior is None:
            duration, (succeeded, detail, statements) = self.default_duration, (True, "done", [])
        else:
            duration, (succeeded, detail, statements) = behavior.profile.duration, behavior.outcome(task.description)

        token = next(self._seq)
        self._tokens[(robot.name, task.id)] = token
        self.sent.append((self.clock, robot.name, task.id, attempt))
        finish = self.clock + duration
        self._push(self.clock, TaskStarted(robot.name, task.id), token)
        self._push(finish, TaskFinished(robot.name, task.id, TaskOutcome(succeeded, detail)), token)
        if succeeded and statements:
            self._push(finish, ReplanRequested(robot.name, f"discovered while '{task.description}'",
                                               tuple(statements)))

    async def cancel_task(self, robot: RobotSpec, task_id: str) -> None:
        token = self._tokens.pop((robot.name, task_id), None)
        if token is not None:
            self._cancelled.add(token)

    async def next_event(self) -> Optional[ExecutionEvent]:
        while self._queue:
            item = heapq.heappop(self._queue)
            if item.token is not None and item.token in self._cancelled:
                continue
            self.clock = max(self.clock, item.time)
            return item.event
        return None

    def now(self) -> Fraction:
        return self.clock


# ==================== TCP ====================

def wall_clock() -> Fraction:
    """Epoch seconds with millisecond resolution"""
    return Fraction(time.time_ns() // 1_000_000, 1000)


class TcpDispatcher(Dispatcher):
    """
    Dispatch over the wire protocol

    fleetd dials each robot's registered endpoint and keeps the connection
    open; statuses arrive on fleetd's own listener and are submitted here by
    the worker message handlers.
    """

    def __init__(self, probe_timeout: Optional[float] = None):
        self.probe_timeout = probe_timeout or settings.PROBE_TIMEOUT
        self.events: "asyncio.Queue[ExecutionEvent]" = asyncio.Queue()
        self._links: Dict[str, Tuple[asyncio.StreamReader, asyncio.StreamWriter]] = {}
        self._readers: Dict[str, asyncio.Task] = {}
        self._last_sent: Dict[str, str] = {}

    def submit(self, event: ExecutionEvent) -> None:
        self.events.put_nowait(event)

    async def _connection(self, robot: RobotSpec) -> asyncio.StreamWriter:
        link = self._links.get(robot.name)
        if link is not None and not link[1].is_closing():
            return link[1]
        host, port = robot.endpoint.host, robot.endpoint.port
        try:
            reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), self.probe_timeout)
        except (OSError, asyncio.TimeoutError) as e:
            raise DispatchError(f"robot '{robot.name}' unreachable at {host}:{port}: {e.__class__.__name__}")
        self._links[robot.name] = (reader, writer)
        self._readers[robot.name] = asyncio.create_task(self._read_replies(robot.name, reader))
        logger.info(f"Connected to robot {robot.name} at {host}:{port}")
        return writer

    async def _read_replies(self, robot: str, reader: asyncio.StreamReader) -> None:
        """Error replies on the dispatch connection fail the attempt they answer"""
        while True:
            try:
                line = await reader.readline()
            except (ConnectionError, ValueError):
                break
            if not line:
                break
            try:
                message = parse_message(line)
            except ProtocolError as e:
                logger.warning(f"Unreadable reply from {robot}: {e.message}")
                continue
            if isinstance(message, ErrorReply):
                task_id = self._last_sent.get(robot)
                logger.warning(f"Robot {robot} rejected {task_id}: {message.code}: {message.message}")
                if task_id is not None:
                    self.submit(TaskFinished(robot, task_id, TaskOutcome.failure(f"{message.code}: {message.message}")))
        self._links.pop(robot, None)
        logger.info(f"Dispatch connection to {robot} closed")

    async def _write(self, robot: RobotSpec, payload: bytes) -> None:
        writer = await self._connection(robot)
        try:
            writer.write(payload)
            await writer.drain()
        except (ConnectionError, OSError) as e:
            self._links.pop(robot.name, None)
            writer.close()
            raise DispatchError(f"robot '{robot.name}' dropped the connection: {e}")

    async def send_task(self, robot: RobotSpec, task: Task, attempt: int, context: List[str]) -> None:
        message = ExecuteTask(task_id=task.id, description=task.description, attempt=attempt, context=context)
        self._last_sent[robot.name] = task.id
        await self._write(robot, message.encode())

    async def cancel_task(self, robot: RobotSpec, task_id: str) -> None:
        try:
            await self._write(robot, CancelTask(task_id=task_id).encode())
        except DispatchError as e:
            logger.warning(f"Cancel of {task_id} not delivered: {e.message}")

    async def next_event(self) -> Optional[ExecutionEvent]:
        return await self.events.get()

    def now(self) -> Fraction:
        return wall_clock()

    async def close(self) -> None:
        for task in self._readers.values():
            task.cancel()
        for _, writer in self._links.values():
            writer.close()
        self._links.clear()
        self._readers.clear()
