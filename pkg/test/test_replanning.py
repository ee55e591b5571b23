import time

import pytest

from app.services.allocator import create_allocator
from app.services.capabilities import CapabilityLexicon
from app.services.dispatchers import SimulatedDispatcher
from app.services.mission_runner import MissionRunner, round_prefix
from app.services.planner import Planner, RecipeBackend
from app.services.recipes import RecipeBook
from app.services.worker_sim import WorkerProfile
from app.store import crud
from app.store.models import (
    AllocationMethod, EventKind, FleetStore, MissionPhase, PlanStrategy, StatementSource,
)
from helpers import ROOT, RULES_DIR, plan, robot, run, task

CUP_GOAL = "Find a cup somewhere and bring it to the hallway"


def demo_store() -> FleetStore:
    store = FleetStore(robots={
        "hsr": robot("hsr", "navigation", "manipulation", port=7431),
        "locobot": robot("locobot", "navigation", port=7432),
    })
    crud.add_goal(store, CUP_GOAL)
    return store


def execute(store, backend, profiles, strategy=PlanStrategy.PER_GOAL, **runner_kwargs):
    runner = MissionRunner(store, Planner(backend, CapabilityLexicon.load(RULES_DIR)), create_allocator,
                           **runner_kwargs)
    dispatcher = SimulatedDispatcher(profiles=profiles)

    async def mission():
        state = runner.new_mission("p1", strategy, AllocationMethod.MILP)
        await runner.plan_mission(state)
        return await runner.run(state, dispatcher)

    return run(mission()), dispatcher


def profile(name: str) -> WorkerProfile:
    return WorkerProfile.load(ROOT / "profiles" / f"{name}.yaml")


# ==================== DISCOVERY ====================

def test_cup_discovery_replans_onto_the_manipulator():
    started = time.monotonic()
    store = demo_store()
    state, _ = execute(store, RecipeBackend.load(RULES_DIR), [profile("hsr"), profile("locobot")])

    assert state.phase == MissionPhase.DONE
    assert state.replans == 1
    assert "g1/search-living" in state.completed
    manipulation = [t for t in state.plan.tasks.values() if "manipulation" in t.required_capabilities]
    assert manipulation
    assert all(state.allocation.assignments[t.id] == "hsr" for t in manipulation)
    assert all(task_id.startswith("r1/") for task_id in state.plan.tasks)

    reported = [s for s in store.world.statements if s.source == StatementSource.ROBOT]
    assert [s.text for s in reported] == ["The cup is in the living room."]
    requests = [e for e in state.trace.events if e.kind == EventKind.REPLAN_REQUESTED]
    assert len(requests) == 1 and requests[0].robot == "locobot"
    assert any(e.kind == EventKind.CANCELLED and e.task_id == "g1/bring" for e in state.trace.events)
    assert time.monotonic() - started < 5


# ==================== RETRY EXHAUSTION ====================

def test_stuck_search_fails_three_times_then_replans_once():
    store = demo_store()
    state, dispatcher = execute(
        store, RecipeBackend.load(RULES_DIR), [profile("hsr_stuck"), WorkerProfile(robot_name="locobot")]
    )

    assert state.phase == MissionPhase.DONE
    failures = [e for e in state.trace.for_task("g1/search-kitchen") if e.kind == EventKind.FAILED]
    assert len(failures) == 3
    requests = [e for e in state.trace.events if e.kind == EventKind.REPLAN_REQUESTED]
    assert len(requests) == 1
    assert requests[0].time >= failures[-1].time
    assert state.replans == 1

    assert sorted(state.completed) == ["g1/go-kitchen", "g1/go-living", "g1/search-living"]
    for task_id in ("g1/go-kitchen", "g1/go-living", "g1/search-living"):
        assert sum(1 for _, _, sent, _ in dispatcher.sent if sent == task_id) == 1
    descriptions = {state.completed[t].description for t in ("g1/go-kitchen", "g1/go-living", "g1/search-living")}
    assert not descriptions & {t.description for t in state.plan.tasks.values()}
    assert any("failed to complete 'Search for the cup in the kitchen'" in s.text for s in store.world.statements)


def test_fruitless_replans_abort_the_mission():
    backend = RecipeBackend(RecipeBook.parse("""
- goal_pattern: "polish the moon"
  subtasks:
    - {id: polish, description: "Polish the moon"}
"""))
    store = FleetStore(robots={"r1": robot("r1", "navigation")})
    crud.add_goal(store, "Polish the moon")
    stuck = WorkerProfile(robot_name="r1", failure_script={"polish": "inf"})
    state, dispatcher = execute(store, backend, [stuck], retry_limit=3, max_fruitless=3)

    assert state.phase == MissionPhase.ABORTED
    assert state.replans == 3
    assert "without progress" in state.diagnostic
    assert len(dispatcher.sent) == 4 * 3


def test_replan_keeps_only_the_unmet_goal():
    backend = RecipeBackend(RecipeBook.parse("""
- goal_pattern: "greet"
  subtasks:
    - {id: wave, description: "Wave hello"}
- goal_pattern: "box"
  subtasks:
    - {id: open, description: "Open the box"}
    - {id: check, description: "Check the box", depends_on: [open]}
"""))
    store = FleetStore(robots={"r1": robot("r1", "navigation", "manipulation")})
    crud.add_goal(store, "Greet the guest")
    crud.add_goal(store, "Unpack the box")
    flaky = WorkerProfile(robot_name="r1", failure_script={"check the box": 3})
    state, _ = execute(store, backend, [flaky])

    assert state.phase == MissionPhase.DONE
    assert state.replans == 1
    assert sorted(state.plan.tasks) == ["r1/g2/check"]


# ==================== HELPERS ====================

def test_round_prefix_renames_edges():
    renamed = round_prefix(plan(task("a"), task("b", depends_on=["a"])), 2)
    assert sorted(renamed.tasks) == ["r2/a", "r2/b"]
    assert renamed.edges == [("r2/a", "r2/b")]


@pytest.mark.parametrize("strategy", [PlanStrategy.BIG_DAG, PlanStrategy.MONOLITHIC])
def test_demo_finishes_under_every_strategy(strategy):
    state, _ = execute(demo_store(), RecipeBackend.load(RULES_DIR), [profile("hsr"), profile("locobot")],
                       strategy=strategy)
    assert state.phase == MissionPhase.DONE
