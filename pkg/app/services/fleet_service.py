"""
fleetd's core: owns the FleetStore, persists it after every mutation, and
runs the single active mission in the background.
"""
import asyncio
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

from app.config import settings
from app.exceptions import (
    InvalidTransition, MissionActive, SchemaError, StaleResult, UnknownRobot, WorkerUnreachable,
)
from app.services.allocator import Allocator, LLMAllocator, create_allocator
from app.services.capabilities import CapabilityLexicon
from app.services.dispatchers import (
    Dispatcher, ReplanRequested, TaskFinished, TaskStarted, TcpDispatcher,
)
from app.services.llm_client import CompletionClient, LLMClient
from app.services.mission_runner import MissionRunner
from app.services.planner import LLMPlannerBackend, Planner, PlannerBackend, RecipeBackend
from app.services.prompt_builder import PromptBuilder
from app.services.protocol import ReplanRequest, TaskStatusMessage
from app.services.scheduler import TaskOutcome
from app.services.worker_sim import probe
from app.store import SnapshotStore, crud
from app.store.models import (
    AllocationMethod, DeploymentMode, FINAL_PHASES, FleetStore, MissionPhase, MissionState,
    PlanStrategy, StatementSource,
)
from app.utils.validators import parse_choice
from app.views.plan_view import render_plan

logger = logging.getLogger(__name__)


def create_planner_backend(rules_dir: Union[str, Path], kind: Optional[str] = None,
                           client: Optional[CompletionClient] = None) -> PlannerBackend:
    """Build the backend named by PLANNER_BACKEND ("recipe" or "llm")"""
    kind = (kind or settings.PLANNER_BACKEND).lower()
    if kind == "llm":
        return LLMPlannerBackend(client or LLMClient(), PromptBuilder.load(rules_dir),
                                 settings.LLM_MAX_REPAIR_RETRIES)
    if kind == "recipe":
        return RecipeBackend.load(rules_dir)
    raise ValueError(f"unknown planner backend '{kind}' (expected recipe or llm)")


def robot_view(spec, online: bool = False) -> dict:
    return {
        "name": spec.name,
        "capabilities": spec.capabilities,
        "endpoint": spec.endpoint.address,
        "mode": spec.deployment.mode.value,
        "image": spec.deployment.image,
        "online": online,
    }


def mission_view(mission: MissionState) -> dict:
    tasks = [
        {
            "id": task.id,
            "description": task.description,
            "status": task.status.value,
            "attempts": task.attempts,
            "robot": (mission.allocation.assignments.get(task.id) if mission.allocation else None)
            or task.assigned_robot,
            "depends_on": task.depends_on,
        }
        for task in (mission.plan.tasks[key] for key in sorted(mission.plan.tasks))
    ]
    return {
        "id": mission.id,
        "phase": mission.phase.value,
        "strategy": mission.strategy.value,
        "allocator": mission.allocator.value,
        "feasible": mission.feasible,
        "diagnostic": mission.diagnostic,
        "replans": mission.replans,
        "completed": sorted(mission.completed),
        "tasks": tasks,
        "warnings": mission.allocation.warnings if mission.allocation else [],
    }


class FleetService:
    def __init__(self, store: FleetStore, snapshot: Optional[SnapshotStore] = None,
                 backend: Optional[PlannerBackend] = None, lexicon: Optional[CapabilityLexicon] = None,
                 llm_client: Optional[CompletionClient] = None, prompts: Optional[PromptBuilder] = None,
                 dispatcher_factory: Callable[[], Dispatcher] = TcpDispatcher,
                 probe_on_register: bool = True):
        self.store = store
        self.snapshot = snapshot
        self.lexicon = lexicon or CapabilityLexicon.default()
        self.llm_client = llm_client
        self.prompts = prompts or PromptBuilder()
        self.backend = backend or create_planner_backend(store.rules_dir, client=llm_client)
        self.dispatcher_factory = dispatcher_factory
        self.probe_on_register = probe_on_register
        self.runner = MissionRunner(store, Planner(self.backend, self.lexicon), self.allocator_for,
                                    on_change=lambda _state: self.persist())
        self.online: Dict[str, object] = {}
        self.dispatcher: Optional[Dispatcher] = None
        self._mission_task: Optional[asyncio.Task] = None

    @classmethod
    def from_rules(cls, rules_dir: Union[str, Path], snapshot: Optional[SnapshotStore] = None,
                   **kwargs) -> "FleetService":
        """Load the store from the snapshot (if any) and the rules directory"""
        store = snapshot.load_or_create(str(rules_dir)) if snapshot else FleetStore(rules_dir=str(rules_dir))
        return cls(store, snapshot, lexicon=CapabilityLexicon.load(rules_dir),
                   prompts=PromptBuilder.load(rules_dir), **kwargs)

    def persist(self) -> None:
        if self.snapshot is not None:
            self.snapshot.save(self.store)

    def allocator_for(self, method: AllocationMethod) -> Allocator:
        if method == AllocationMethod.LLM:
            if self.llm_client is None:
                self.llm_client = LLMClient()
            return LLMAllocator(self.llm_client, self.prompts)
        return create_allocator(method)

    # ==================== ROBOTS ====================

    async def register_robot(self, document: str) -> dict:
        spec = crud.register_robot(self.store, document)
        self.persist()
        logger.info(f"Registered robot {spec.name} ({', '.join(spec.capabilities)}) at {spec.endpoint.address}")
        result = {"robot": robot_view(spec, spec.name in self.online), "probe": "skipped"}
        if self.probe_on_register:
            try:
                latency = await probe(spec.endpoint.host, spec.endpoint.port)
                result["probe"] = f"pong in {latency * 1000:.1f} ms"
            except WorkerUnreachable as e:
                logger.warning(f"Probe of {spec.name} failed: {e.message}")
                result["probe"] = f"unreachable: {e.message}"
        return result

    def list_robots(self) -> List[dict]:
        return [robot_view(spec, name in self.online) for name, spec in self.store.robots.items()]

    def remove_robot(self, name: str) -> dict:
        spec = crud.remove_robot(self.store, name)
        self.persist()
        return robot_view(spec)

    def deploy_command(self, name: str) -> dict:
        """Container invocation for a robot (dry run; nothing is executed)"""
        spec = crud.get_robot(self.store, name)
        if spec.deployment.mode != DeploymentMode.CONTAINER:
            return {"robot": name, "command": None, "note": "native robot; nothing to deploy"}
        port = spec.endpoint.port
        command = f"docker run -d --name {name} -p {port}:{port} {spec.deployment.image}"
        return {"robot": name, "command": command, "note": "dry run"}

    # ==================== WORLD / GOALS ====================

    def add_statement(self, text: str) -> dict:
        statement = crud.add_statement(self.store, text)
        self.persist()
        return statement.model_dump(mode="json")

    def list_statements(self) -> List[dict]:
        return [s.model_dump(mode="json") for s in self.store.world.statements]

    def remove_statement(self, statement_id: str) -> dict:
        statement = crud.remove_statement(self.store, statement_id)
        self.persist()
        return statement.model_dump(mode="json")

    def add_goal(self, text: str) -> dict:
        goal = crud.add_goal(self.store, text)
        self.persist()
        return goal.model_dump(mode="json")

    def list_goals(self) -> List[dict]:
        return [g.model_dump(mode="json") for g in self.store.goals]

    def remove_goal(self, goal_id: str) -> dict:
        goal = crud.remove_goal(self.store, goal_id)
        self.persist()
        return goal.model_dump(mode="json")

    # ==================== PLANS / MISSIONS ====================

    def _busy(self) -> bool:
        return self._mission_task is not None and not self._mission_task.done()

    def _require_idle(self) -> None:
        active = self.store.active_mission()
        if active is not None or self._busy():
            which = active.id if active else "a mission"
            raise MissionActive(f"{which} is still running; wait for it to finish")

    @staticmethod
    def _choice(field: str, value: str, enum_cls):
        try:
            return parse_choice(value, enum_cls)
        except ValueError as e:
            raise SchemaError(field, str(e))

    def _new_mission(self, planner: str, allocator: str) -> MissionState:
        strategy = self._choice("planner", planner, PlanStrategy)
        method = self._choice("allocator", allocator, AllocationMethod)
        if strategy == PlanStrategy.MANUAL:
            raise SchemaError("planner", "must be per-goal, big-dag or monolithic")
        self._require_idle()
        return self.runner.new_mission(self.store.next_id("p"), strategy, method)

    async def create_plan(self, planner: str, allocator: str) -> dict:
        """
        Plan and allocate; the mission waits in phase allocating for run

        Raises:
            NoGoals, NoRobots, MissionActive, planner and allocator errors
        """
        state = self._new_mission(planner, allocator)
        await self.runner.plan_mission(state)
        return mission_view(state)

    def show_plan(self, plan_id: str, fmt: str = "text") -> dict:
        mission = crud.get_mission(self.store, plan_id)
        if fmt == "json":
            return {"plan": mission.plan.model_dump(mode="json"),
                    "allocation": mission.allocation.model_dump(mode="json") if mission.allocation else None}
        if fmt == "trace":
            return {"id": mission.id, "format": fmt, "rendered": mission.trace.to_lines()}
        return {"id": mission.id, "format": fmt, "rendered": render_plan(mission.plan, mission.allocation, fmt)}

    def list_plans(self) -> List[dict]:
        return [
            {"id": m.id, "strategy": m.strategy.value, "allocator": m.allocator.value,
             "phase": m.phase.value, "tasks": len(m.plan.tasks), "feasible": m.feasible}
            for m in crud.list_missions(self.store)
        ]

    async def add_task(self, plan_id: str, description: str, after: List[str], before: List[str],
                       robot: Optional[str] = None, task_id: Optional[str] = None) -> dict:
        task = crud.add_manual_task(self.store, plan_id, description, after, before, robot, task_id,
                                    lexicon=self.lexicon)
        mission = self.store.missions[plan_id]
        if mission.phase == MissionPhase.ALLOCATING:
            mission.allocation = await self.runner.allocate(mission)
        self.persist()
        return task.model_dump(mode="json")

    def run(self, plan_id: str) -> dict:
        mission = crud.get_mission(self.store, plan_id)
        if mission.phase != MissionPhase.ALLOCATING:
            raise InvalidTransition(f"plan '{plan_id}' is {mission.phase.value}; only allocated plans can run")
        self._require_idle()
        self._launch(self._execute(mission))
        return {"id": mission.id, "phase": MissionPhase.EXECUTING.value}

    def start_mission(self, planner: str, allocator: str) -> dict:
        """Plan, allocate and execute in the background; returns the mission id at once"""
        state = self._new_mission(planner, allocator)
        self._launch(self._plan_and_execute(state))
        return {"id": state.id, "phase": state.phase.value}

    def _launch(self, coro) -> None:
        self._mission_task = asyncio.create_task(coro)

    async def _plan_and_execute(self, state: MissionState) -> None:
        try:
            await self.runner.plan_mission(state)
        except Exception:
            # already aborted and logged by the runner
            return
        await self._execute(state)

    async def _execute(self, mission: MissionState) -> None:
        self.dispatcher = self.dispatcher_factory()
        try:
            await self.runner.run(mission, self.dispatcher)
        except Exception as e:
            logger.error(f"Mission {mission.id} crashed: {e}", exc_info=True)
            mission.abort(f"internal: {e}")
            self.persist()
        finally:
            await self.dispatcher.close()
            self.dispatcher = None

    async def wait_for_mission(self) -> None:
        if self._mission_task is not None:
            await self._mission_task

    def status(self, mission_id: Optional[str] = None) -> dict:
        if mission_id:
            mission = crud.get_mission(self.store, mission_id)
        else:
            mission = self.store.active_mission() or self.store.latest_mission()
            if mission is None:
                return {"id": None, "phase": None, "tasks": []}
        return mission_view(mission)

    async def resume(self) -> Optional[str]:
        """Continue a mission restored in phase replanning"""
        mission = self.store.active_mission()
        if mission is None or mission.phase in FINAL_PHASES:
            return None
        logger.info(f"Resuming mission {mission.id} ({mission.phase.value})")
        self._launch(self._execute(mission))
        return mission.id

    async def shutdown(self) -> None:
        if self._busy():
            self._mission_task.cancel()
            try:
                await self._mission_task
            except asyncio.CancelledError:
                pass
        self.persist()

    # ==================== WORKER MESSAGES ====================

    def _require_robot(self, name: str) -> None:
        if name not in self.store.robots:
            raise UnknownRobot(f"robot '{name}' is not registered")

    def on_hello(self, robot: str, conn) -> None:
        self._require_robot(robot)
        self.online[robot] = conn
        logger.info(f"Robot {robot} connected from {conn.peer}")

    def on_connection_closed(self, conn) -> None:
        if conn.robot and self.online.get(conn.robot) is conn:
            del self.online[conn.robot]
            logger.info(f"Robot {conn.robot} disconnected")

    def on_task_status(self, message: TaskStatusMessage) -> None:
        self._require_robot(message.robot)
        if self.dispatcher is None or not hasattr(self.dispatcher, "submit"):
            raise StaleResult(f"no mission is executing; status for '{message.task_id}' ignored")
        if message.status == "started":
            self.dispatcher.submit(TaskStarted(message.robot, message.task_id))
        else:
            outcome = TaskOutcome(message.status == "succeeded", message.detail)
            self.dispatcher.submit(TaskFinished(message.robot, message.task_id, outcome))

    def on_replan_request(self, message: ReplanRequest) -> None:
        self._require_robot(message.robot)
        if self.dispatcher is not None and hasattr(self.dispatcher, "submit"):
            self.dispatcher.submit(ReplanRequested(message.robot, message.reason, tuple(message.statements)))
            return
        for text in message.statements:
            crud.add_statement(self.store, text, source=StatementSource.ROBOT)
        self.persist()
        logger.info(f"Robot {message.robot} reported {len(message.statements)} statements outside a mission")
