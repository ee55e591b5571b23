import random
from fractions import Fraction

import pytest

from app.exceptions import IncompleteTrace, StaleResult, UnknownTask
from app.services.allocator import allocate_milp, allocate_round_robin
from app.services.dispatchers import SimulatedDispatcher
from app.services.mission_runner import MissionRunner
from app.services.scheduler import (
    Completed, Redispatch, TaskOutcome, TriggerReplan, busy_intervals, dispatch_task, idle_percentage,
    makespan, mark_started, on_task_result, ready_set, refresh_ready,
)
from app.services.worker_sim import WorkerProfile
from app.store.models import (
    Allocation, AllocationMethod, EventKind, ExecutionTrace, FleetStore, MissionPhase, MissionState, Plan, TaskStatus,
)
from helpers import plan, robot, run, task


def mission_for(p: Plan, allocation) -> MissionState:
    state = MissionState(id=p.id, plan=p, allocation=allocation, phase=MissionPhase.ALLOCATING)
    for task_id, name in allocation.assignments.items():
        state.plan.tasks[task_id].assigned_robot = name
    return state


def execute(p: Plan, robots, allocate=allocate_round_robin, profiles=()) -> MissionState:
    store = FleetStore(robots={r.name: r for r in robots})
    state = mission_for(p, allocate(list(p.tasks.values()), robots))
    store.missions[state.id] = state
    runner = MissionRunner(store, planner=None, allocators=lambda method: None)
    return run(runner.run(state, SimulatedDispatcher(profiles=profiles)))


def chain(n: int) -> Plan:
    return plan(*[task(f"t{i:02d}", depends_on=[f"t{i - 1:02d}"] if i else []) for i in range(n)])


def trace_of(*events) -> ExecutionTrace:
    trace = ExecutionTrace()
    for time, kind, task_id, robot_name in events:
        trace.record(Fraction(time), kind, task_id, robot_name)
    return trace


# ==================== EXECUTION SAFETY ====================

def random_plan(rng: random.Random, size: int) -> Plan:
    names = [f"n{i}" for i in range(size)]
    rng.shuffle(names)
    tasks = []
    for i, name in enumerate(names):
        deps = [names[j] for j in range(i) if rng.random() < 0.25]
        tasks.append(task(name, description=f"step [{name}]", depends_on=deps))
    return plan(*tasks, plan_id=f"dag{size}")


def test_random_dags_execute_safely():
    rng = random.Random(99)
    for _ in range(200):
        p = random_plan(rng, rng.randint(1, 14))
        robots = [robot(f"r{j}") for j in range(rng.randint(1, 4))]
        flaky = rng.sample(sorted(p.tasks), k=min(2, len(p.tasks)))
        profiles = [
            WorkerProfile(robot_name=r.name, task_duration=rng.choice([0.5, 1, 2, 3]),
                          failure_script={f"[{name}]": rng.randint(0, 2) for name in flaky})
            for r in robots
        ]
        state = execute(p, robots, rng.choice([allocate_round_robin, allocate_milp]), profiles)
        assert state.phase == MissionPhase.DONE
        assert all(t.status == TaskStatus.SUCCEEDED for t in state.plan.tasks.values())

        succeeded = set()
        for event in state.trace.events:
            if event.kind == EventKind.DISPATCHED:
                assert set(state.plan.tasks[event.task_id].depends_on) <= succeeded
            elif event.kind == EventKind.SUCCEEDED:
                succeeded.add(event.task_id)
        for spans in busy_intervals(state.trace).values():
            spans.sort()
            assert all(earlier[1] <= later[0] for earlier, later in zip(spans, spans[1:]))
        assert 0 <= idle_percentage(state.trace, len(robots)) <= 100


def test_diamond_branches_overlap_on_two_robots():
    p = plan(task("a"), task("b", depends_on=["a"]), task("c", depends_on=["a"]), task("d", depends_on=["b", "c"]))
    split = Allocation(assignments={"a": "r1", "b": "r1", "c": "r2", "d": "r1"}, method=AllocationMethod.MILP)
    state = execute(p, [robot("r1"), robot("r2")], lambda tasks, robots: split)
    spans = busy_intervals(state.trace)
    assert spans["r1"][1] == spans["r2"][0] == (Fraction(1), Fraction(2))
    assert makespan(state.trace) == 3


# ==================== STATE MACHINE ====================

@pytest.fixture
def single():
    state = mission_for(plan(task("a"), task("b", depends_on=["a"])), allocate_round_robin(
        [task("a"), task("b", depends_on=["a"])], [robot("r1")]))
    state.phase = MissionPhase.EXECUTING
    refresh_ready(state)
    return state


def test_ready_set_waits_for_dependencies(single):
    assert [(t.id, r) for t, r in ready_set(single)] == [("a", "r1")]
    dispatch_task(single, "a", "r1", Fraction(0))
    assert ready_set(single) == []
    assert on_task_result(single, "a", TaskOutcome.success(), Fraction(1)) == Completed("a")
    assert [t.id for t, _ in ready_set(single)] == ["b"]


def test_retries_then_replan(single):
    dispatch_task(single, "a", "r1", Fraction(0))
    mark_started(single, "a", Fraction(0))
    assert on_task_result(single, "a", TaskOutcome.failure("x"), Fraction(1), retry_limit=3) == Redispatch("a", "r1", 2)
    assert on_task_result(single, "a", TaskOutcome.failure("x"), Fraction(2), retry_limit=3) == Redispatch("a", "r1", 3)
    effect = on_task_result(single, "a", TaskOutcome.failure("x"), Fraction(3), retry_limit=3)
    assert isinstance(effect, TriggerReplan)
    kinds = [e.kind for e in single.trace.for_task("a")]
    assert kinds.count(EventKind.FAILED) == 3
    assert kinds[-1] == EventKind.REPLAN_REQUESTED
    assert single.plan.tasks["a"].status == TaskStatus.FAILED


def test_results_for_idle_or_foreign_tasks_are_rejected(single):
    with pytest.raises(StaleResult):
        on_task_result(single, "a", TaskOutcome.success(), Fraction(0))
    dispatch_task(single, "a", "r1", Fraction(0))
    with pytest.raises(StaleResult):
        on_task_result(single, "a", TaskOutcome.success(), Fraction(1), robot="r9")
    with pytest.raises(UnknownTask):
        on_task_result(single, "zz", TaskOutcome.success(), Fraction(1))


# ==================== IDLE TIME ====================

def test_idle_chain_on_one_of_two_robots():
    trace = trace_of(
        (0, EventKind.DISPATCHED, "a", "r1"), (1, EventKind.SUCCEEDED, "a", "r1"),
        (1, EventKind.DISPATCHED, "b", "r1"), (2, EventKind.SUCCEEDED, "b", "r1"),
    )
    assert makespan(trace) == 2
    assert idle_percentage(trace, 2) == 50


def test_idle_balanced_independent_tasks():
    events = []
    for i in range(10):
        r, slot = f"r{i % 5}", i // 5
        events += [(slot, EventKind.DISPATCHED, f"t{i}", r), (slot + 1, EventKind.SUCCEEDED, f"t{i}", r)]
    trace = trace_of(*sorted(events, key=lambda e: (e[0], e[1] != EventKind.SUCCEEDED)))
    assert makespan(trace) == 2
    assert idle_percentage(trace, 5) == 0


def test_idle_chain_of_ten_on_five_robots():
    events = []
    for i in range(10):
        events += [(i, EventKind.DISPATCHED, f"t{i}", f"r{i % 5}"), (i + 1, EventKind.SUCCEEDED, f"t{i}", f"r{i % 5}")]
    assert idle_percentage(trace_of(*events), 5) == 80


@pytest.mark.parametrize("m,n", [(1, 4), (2, 3), (3, 5), (5, 10)])
def test_serialized_chain_closed_form(m, n):
    state = execute(chain(n), [robot(f"r{j}") for j in range(m)])
    assert state.phase == MissionPhase.DONE
    assert makespan(state.trace) == n
    assert idle_percentage(state.trace, m) == Fraction(100 * (m * n - n), m * n)


def test_ten_independent_tasks_on_five_robots_with_milp():
    p = plan(*[task(f"t{i}") for i in range(10)])
    state = execute(p, [robot(f"r{j}") for j in range(5)], allocate_milp)
    assert idle_percentage(state.trace, 5) == 0


def test_idle_is_invariant_under_rescaling():
    trace = trace_of(
        (0, EventKind.DISPATCHED, "a", "r1"), (0, EventKind.DISPATCHED, "b", "r2"),
        (1, EventKind.SUCCEEDED, "b", "r2"), (3, EventKind.SUCCEEDED, "a", "r1"),
    )
    scaled = trace.model_copy(deep=True)
    for event in scaled.events:
        event.time *= Fraction(7, 3)
    assert idle_percentage(trace, 2) == idle_percentage(scaled, 2) == Fraction(100, 3)


def test_single_robot_is_never_idle():
    state = execute(chain(4), [robot("solo")])
    assert idle_percentage(state.trace, 1) == 0


def test_incomplete_trace_is_rejected():
    with pytest.raises(IncompleteTrace):
        idle_percentage(trace_of((0, EventKind.DISPATCHED, "a", "r1")), 1)
    with pytest.raises(ValueError):
        idle_percentage(ExecutionTrace(), 0)


class DrainingDispatcher(SimulatedDispatcher):
    """Delivers a fixed number of events, then reports that none will come"""

    def __init__(self, events: int):
        super().__init__()
        self.remaining = events

    async def next_event(self):
        if self.remaining == 0:
            return None
        self.remaining -= 1
        return await super().next_event()


def test_drained_dispatcher_cancels_in_flight_tasks():
    robots = [robot("r1"), robot("r2")]
    p = chain(3)
    store = FleetStore(robots={r.name: r for r in robots})
    state = mission_for(p, allocate_round_robin(list(p.tasks.values()), robots))
    store.missions[state.id] = state
    runner = MissionRunner(store, planner=None, allocators=lambda method: None)
    run(runner.run(state, DrainingDispatcher(events=2)))

    assert state.phase == MissionPhase.ABORTED
    assert state.plan.tasks["t00"].status == TaskStatus.SUCCEEDED
    assert state.plan.tasks["t01"].status == TaskStatus.CANCELLED
    assert state.trace.events[-1].kind == EventKind.CANCELLED
    assert idle_percentage(state.trace, 2) == 50
