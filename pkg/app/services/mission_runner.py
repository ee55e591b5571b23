"""
Mission lifecycle: planning, allocation, execution and replanning.

The runner is the single writer of a MissionState. Dispatchers only deliver
events; every state change happens here or in the scheduler functions it
calls, followed by the on_change hook (fleetd persists the snapshot there).
"""
import logging
from typing import Callable, List, Optional

from app.config import settings
from app.exceptions import DispatchError, FleetError, NoGoals, NoRobots, StaleResult, UnknownTask
from app.services.allocator import Allocator, allocate_with_fallback
from app.services.dag import plan_progress, topo_order
from app.services.dispatchers import (
    Dispatcher, ExecutionEvent, ReplanRequested, TaskFinished, TaskStarted,
)
from app.services.planner import Planner, completed_keys
from app.services.scheduler import (
    Redispatch, TaskOutcome, TriggerReplan, all_succeeded, cancel_in_flight, dispatch_task,
    mark_started, on_task_result, refresh_ready, ready_set,
)
from app.store.models import (
    Allocation, AllocationMethod, EventKind, FINAL_PHASES, FleetStore, IN_FLIGHT_STATUSES,
    MissionPhase, MissionState, Plan, PlanStrategy, Statement, StatementSource, Task, TaskStatus,
)

logger = logging.getLogger(__name__)


def round_prefix(plan: Plan, round_number: int) -> Plan:
    """Namespace every task id of a replanned plan as r<k>/<id>"""
    prefix = f"r{round_number}/"
    renamed = Plan(id=plan.id, strategy=plan.strategy)
    for task in plan.tasks.values():
        renamed.add(task.model_copy(update={
            "id": prefix + task.id,
            "depends_on": [prefix + dep for dep in task.depends_on],
        }))
    return renamed


def failure_statement(robot: str, task: Task, detail: str) -> str:
    return f"Robot {robot} failed to complete '{task.description}' after {task.attempts} attempts: {detail}"


class MissionRunner:
    def __init__(self, store: FleetStore, planner: Planner,
                 allocators: Callable[[AllocationMethod], Allocator],
                 on_change: Optional[Callable[[MissionState], None]] = None,
                 retry_limit: Optional[int] = None, max_fruitless: Optional[int] = None):
        self.store = store
        self.planner = planner
        self.allocators = allocators
        self.on_change = on_change
        self.retry_limit = retry_limit or settings.TASK_RETRY_LIMIT
        self.max_fruitless = max_fruitless or settings.MAX_FRUITLESS_REPLANS

    def _changed(self, state: MissionState) -> None:
        if self.on_change is not None:
            self.on_change(state)

    def _capabilities(self) -> List[str]:
        return sorted({cap for robot in self.store.robots.values() for cap in robot.capabilities})

    # ==================== PLANNING / ALLOCATION ====================

    async def allocate(self, state: MissionState) -> Allocation:
        tasks = [state.plan.tasks[task_id] for task_id in topo_order(state.plan)]
        allocator = self.allocators(state.allocator)
        allocation = await allocate_with_fallback(
            allocator, tasks, list(self.store.robots.values()), self.store.world
        )
        for warning in allocation.warnings:
            logger.warning(f"Mission {state.id}: {warning}")
        return allocation

    def new_mission(self, mission_id: str, strategy: PlanStrategy, method: AllocationMethod) -> MissionState:
        """
        Store a mission in phase planning covering every stored goal

        Raises:
            NoGoals: If the goal store is empty
            NoRobots: If no robot is registered
        """
        if not self.store.goals:
            raise NoGoals("add at least one goal before planning")
        if not self.store.robots:
            raise NoRobots("register at least one robot before planning")
        state = MissionState(id=mission_id, goal_ids=[g.id for g in self.store.goals], strategy=strategy,
                             allocator=method, plan=Plan(id=mission_id, strategy=strategy))
        self.store.missions[state.id] = state
        self._changed(state)
        return state

    async def plan_mission(self, state: MissionState) -> MissionState:
        """
        Plan and allocate a mission created by new_mission

        On a planner or allocator error the mission stays in the store as
        aborted with the diagnostic and the error is re-raised.

        Returns:
            The mission in phase allocating with its allocation attached
        """
        goals = [goal for goal in self.store.goals if goal.id in state.goal_ids]
        strategy = state.strategy
        logger.info(f"Mission {state.id}: planning {len(goals)} goals with {strategy.value}")
        try:
            if not goals:
                raise NoGoals("every goal of the mission was removed")
            state.plan = await self.planner.build(strategy, goals, self.store.world, plan_id=state.id,
                                                  capabilities=self._capabilities())
            state.transition(MissionPhase.ALLOCATING)
            state.allocation = await self.allocate(state)
        except Exception as e:
            diagnostic = e.message if isinstance(e, FleetError) else f"internal: {e}"
            state.abort(diagnostic)
            logger.error(f"Mission {state.id} aborted during {strategy.value} planning: {diagnostic}",
                         exc_info=not isinstance(e, FleetError))
            self._changed(state)
            raise
        self._changed(state)
        return state

    # ==================== EXECUTION ====================

    async def run(self, state: MissionState, dispatcher: Dispatcher) -> MissionState:
        """
        Execute until the mission is done or aborted

        Missions restored in phase replanning are replanned first.
        """
        if state.phase == MissionPhase.ALLOCATING:
            state.transition(MissionPhase.EXECUTING)
        if not state.trace.events:
            state.trace.start = dispatcher.now()
        refresh_ready(state)
        self._changed(state)
        logger.info(f"Mission {state.id}: executing {len(state.plan.tasks)} tasks")

        while state.phase not in FINAL_PHASES:
            if state.phase == MissionPhase.REPLANNING:
                await self.replan(state, dispatcher)
                self._changed(state)
                continue
            if all_succeeded(state):
                state.transition(MissionPhase.DONE)
                break
            await self._dispatch_ready(state, dispatcher)
            if state.phase != MissionPhase.EXECUTING:
                continue
            if not any(t.status in IN_FLIGHT_STATUSES for t in state.plan.tasks.values()):
                state.abort("stalled: no task is ready or in flight")
                break
            event = await dispatcher.next_event()
            if event is None:
                await self._cancel_in_flight(state, dispatcher, "dispatcher has no pending events")
                state.abort("dispatcher has no pending events")
                break
            await self.apply_event(state, event, dispatcher)
            self._changed(state)

        self._changed(state)
        logger.info(f"Mission {state.id} finished: {state.phase.value}"
                    + (f" ({state.diagnostic})" if state.diagnostic else ""))
        return state

    async def _dispatch_ready(self, state: MissionState, dispatcher: Dispatcher) -> None:
        for task, robot in ready_set(state):
            if state.phase != MissionPhase.EXECUTING:
                return
            dispatch_task(state, task.id, robot, dispatcher.now())
            await self._send(state, task, dispatcher)

    async def _send(self, state: MissionState, task: Task, dispatcher: Dispatcher) -> None:
        """Deliver the current attempt; unreachable robots count as failed attempts"""
        while True:
            robot = self.store.robots.get(task.assigned_robot)
            try:
                if robot is None:
                    raise DispatchError(f"robot '{task.assigned_robot}' is not registered")
                await dispatcher.send_task(robot, task, task.attempts, self.store.world.texts())
                return
            except DispatchError as e:
                logger.warning(f"Dispatch of {task.id} failed: {e.message}")
                effect = on_task_result(state, task.id, TaskOutcome.failure(e.message), dispatcher.now(),
                                        retry_limit=self.retry_limit)
                if isinstance(effect, TriggerReplan):
                    self._trigger_replan(state, effect)
                    return

    def _add_statement(self, text: str) -> Statement:
        statement = Statement(id=self.store.next_id("w"), text=text, source=StatementSource.ROBOT)
        self.store.world.statements.append(statement)
        return statement

    def _trigger_replan(self, state: MissionState, effect: TriggerReplan) -> None:
        task = state.plan.tasks[effect.task_id]
        self._add_statement(failure_statement(effect.robot, task, effect.detail))
        if state.phase == MissionPhase.EXECUTING:
            state.transition(MissionPhase.REPLANNING)

    async def apply_event(self, state: MissionState, event: ExecutionEvent, dispatcher: Dispatcher) -> None:
        now = dispatcher.now()
        if isinstance(event, TaskStarted):
            try:
                mark_started(state, event.task_id, now, robot=event.robot)
            except (StaleResult, UnknownTask) as e:
                logger.warning(f"Ignoring start of {event.task_id}: {e.message}")
        elif isinstance(event, TaskFinished):
            try:
                effect = on_task_result(state, event.task_id, event.outcome, now,
                                        robot=event.robot, retry_limit=self.retry_limit)
            except (StaleResult, UnknownTask) as e:
                logger.warning(f"Ignoring result of {event.task_id}: {e.message}")
                return
            if isinstance(effect, Redispatch):
                await self._send(state, state.plan.tasks[effect.task_id], dispatcher)
            elif isinstance(effect, TriggerReplan):
                self._trigger_replan(state, effect)
        elif isinstance(event, ReplanRequested):
            for text in event.statements:
                self._add_statement(text)
            state.trace.record(now, EventKind.REPLAN_REQUESTED, None, event.robot,
                               event.reason or "; ".join(event.statements))
            logger.info(f"Robot {event.robot} requested a replan: {list(event.statements)}")
            if state.phase == MissionPhase.EXECUTING:
                state.transition(MissionPhase.REPLANNING)

    async def _cancel_in_flight(self, state: MissionState, dispatcher: Optional[Dispatcher],
                                detail: str = "replan") -> None:
        now = dispatcher.now() if dispatcher is not None else state.trace.start
        for task_id, robot_name in cancel_in_flight(state, now, detail):
            robot = self.store.robots.get(robot_name)
            if dispatcher is not None and robot is not None:
                await dispatcher.cancel_task(robot, task_id)

    # ==================== REPLANNING ====================

    async def replan(self, state: MissionState, dispatcher: Optional[Dispatcher] = None) -> MissionState:
        """
        Freeze progress and plan the unmet goals again

        Succeeded tasks move to state.completed and are filtered out of the
        new plan; in-flight tasks are cancelled; everything else is dropped.
        After MAX_FRUITLESS_REPLANS consecutive replans without a new success
        the mission aborts instead.
        """
        await self._cancel_in_flight(state, dispatcher)

        successes = state.succeeded_count()
        if state.replans > 0 and successes == state.successes_at_last_replan:
            state.fruitless_replans += 1
        else:
            state.fruitless_replans = 0
        if state.fruitless_replans >= self.max_fruitless:
            state.abort(f"aborted after {state.fruitless_replans} consecutive replans without progress")
            logger.warning(f"Mission {state.id}: {state.diagnostic}")
            return state
        state.replans += 1
        state.successes_at_last_replan = successes

        progress = plan_progress(state.plan).as_statements(state.plan)
        for task_id, task in state.plan.tasks.items():
            if task.status == TaskStatus.SUCCEEDED:
                state.completed[task_id] = task
        world = self.store.world.texts() + progress + [
            f"Task '{task.description}' has already been completed."
            for task_id, task in sorted(state.completed.items()) if task_id not in state.plan.tasks
        ]
        goals = [goal for goal in self.store.goals if goal.id in state.goal_ids]
        logger.info(f"Mission {state.id}: replan {state.replans} over {len(goals)} goals, "
                    f"{len(state.completed)} tasks frozen")

        state.transition(MissionPhase.PLANNING)
        try:
            if not goals:
                raise NoGoals("every goal of the mission was removed")
            plan = await self.planner.build(
                state.strategy, goals, world, plan_id=state.id,
                completed=completed_keys(state.completed.values()), capabilities=self._capabilities(),
            )
            if not plan.tasks:
                state.plan = Plan(id=state.id, strategy=state.strategy)
                state.allocation = None
                state.transition(MissionPhase.DONE)
                logger.info(f"Mission {state.id}: every goal is met after replan")
                return state
            state.plan = round_prefix(plan, state.replans)
            state.transition(MissionPhase.ALLOCATING)
            state.allocation = await self.allocate(state)
        except Exception as e:
            diagnostic = e.message if isinstance(e, FleetError) else f"internal: {e}"
            state.abort(f"replan {state.replans} failed: {diagnostic}")
            logger.error(f"Mission {state.id}: {state.diagnostic}", exc_info=not isinstance(e, FleetError))
            return state
        state.transition(MissionPhase.EXECUTING)
        refresh_ready(state)
        return state
