import json

import pytest

from app.exceptions import NoGoals, PlanParseError, PlannerBackendError, RulesError
from app.services.dag import topo_order
from app.services.llm_client import ReplayClient
from app.services.planner import (
    LLMPlannerBackend, Planner, RawPlanResponse, RecipeBackend, completed_keys, deduplicate,
    parse_plan_response, plan_big_dag, plan_monolithic, plan_per_goal,
)
from app.services.prompt_builder import PromptBuilder
from app.services.recipes import RecipeBook
from app.store.models import Goal, PlanStrategy, TaskStatus
from helpers import RULES_DIR, run, task

CHAINS = RecipeBook.parse("""
- goal_pattern: "alpha"
  subtasks:
    - {id: a1, description: "Alpha one"}
    - {id: a2, description: "Alpha two", depends_on: [a1]}
    - {id: a3, description: "Alpha three", depends_on: [a2]}
- goal_pattern: "beta"
  subtasks:
    - {id: b1, description: "Beta one"}
    - {id: b2, description: "Beta two", depends_on: [b1]}
    - {id: b3, description: "Beta three", depends_on: [b2]}
- goal_pattern: "single"
  subtasks:
    - {id: only, description: "The only step"}
""")


def goals(*texts):
    return [Goal(id=f"g{i}", text=text) for i, text in enumerate(texts, start=1)]


def shape(plan):
    return {task_id: (t.description, tuple(t.depends_on)) for task_id, t in plan.tasks.items()}


@pytest.fixture
def chains():
    return RecipeBackend(CHAINS)


@pytest.fixture
def household():
    return RecipeBackend.load(RULES_DIR)


# ==================== PER-GOAL ====================

def test_per_goal_two_chains(chains):
    plan = run(plan_per_goal(goals("alpha", "beta"), [], chains))
    assert plan.strategy == PlanStrategy.PER_GOAL
    assert len(plan.tasks) == 6
    assert len(plan.edges) == 4
    assert sorted(plan.tasks)[:3] == ["g1/a1", "g1/a2", "g1/a3"]
    assert all(t.goal_id == task_id.split("/")[0] for task_id, t in plan.tasks.items())


def test_per_goal_single_goal_matches_big_dag(chains):
    single = goals("alpha")
    assert shape(run(plan_per_goal(single, [], chains))) == shape(run(plan_big_dag(single, [], chains)))


def test_per_goal_unmatched_goal_fails_whole_plan(chains):
    with pytest.raises(PlannerBackendError) as excinfo:
        run(plan_per_goal(goals("alpha", "gamma"), [], chains))
    assert excinfo.value.goal_id == "g2"


def test_planning_requires_goals(chains):
    with pytest.raises(NoGoals):
        run(plan_per_goal([], [], chains))


# ==================== BIG-DAG ====================

def test_big_dag_merges_shared_subtask(household):
    plan = run(plan_big_dag(goals("Make tea", "Make coffee"), [], household))
    boil = [t for t in plan.tasks.values() if t.description == "Boil water"]
    assert len(boil) == 1
    shared = boil[0].id
    dependents = {t.id for t in plan.tasks.values() if shared in t.depends_on}
    assert dependents == {"g1/pour", "g2/brew"}
    assert len(plan.tasks) == 4 + 4 - 1


def test_big_dag_deduplicates_identical_goals(chains):
    plan = run(plan_big_dag(goals("alpha", "alpha"), [], chains))
    assert len(plan.tasks) == 3
    assert sorted(plan.tasks) == ["g1/a1", "g1/a2", "g1/a3"]


def test_dedup_that_would_close_a_cycle_keeps_both():
    tasks = [
        task("x1", description="Open door"),
        task("x2", description="Walk in", depends_on=["x1"]),
        task("y1", description="Walk in"),
        task("y2", description="Open door", depends_on=["y1"]),
    ]
    merged = deduplicate(tasks)
    assert sorted(t.id for t in merged) == ["x1", "x2", "y2"]
    ids = {t.id for t in merged}
    assert all(dep in ids for t in merged for dep in t.depends_on)


# ==================== MONOLITHIC ====================

def test_monolithic_is_a_single_chain(chains):
    plan = run(plan_monolithic(goals("beta", "alpha"), [], chains))
    assert plan.strategy == PlanStrategy.MONOLITHIC
    assert len(plan.tasks) == 6
    assert len(plan.edges) == 5
    order = topo_order(plan)
    assert order == ["g1/b1", "g1/b2", "g1/b3", "g2/a1", "g2/a2", "g2/a3"]
    roots = [t for t in plan.tasks.values() if not t.depends_on]
    assert len(roots) == 1


def test_monolithic_keeps_goal_creation_order(chains):
    later = [Goal(id="g2", text="alpha"), Goal(id="g10", text="beta")]
    plan = run(plan_monolithic(later, [], chains))
    assert topo_order(plan) == ["g2/a1", "g2/a2", "g2/a3", "g10/b1", "g10/b2", "g10/b3"]


def test_monolithic_single_subtask(chains):
    plan = run(plan_monolithic(goals("single"), [], chains))
    assert list(plan.tasks) == ["g1/only"]
    assert plan.edges == []


# ==================== CONDITIONAL RULES ====================

def test_when_rule_needs_a_matching_statement(household):
    goal = goals("Find a cup somewhere and bring it to the hallway")
    before = run(plan_per_goal(goal, [], household))
    after = run(plan_per_goal(goal, ["The cup is in the living room."], household))
    assert "g1/search-living" in before.tasks
    assert sorted(after.tasks) == ["g1/deliver", "g1/fetch"]


def test_ruleset_rejects_forward_references():
    with pytest.raises(RulesError):
        RecipeBook.parse("""
- goal_pattern: "x"
  subtasks:
    - {id: a, description: "A", depends_on: [b]}
    - {id: b, description: "B"}
""")


# ==================== PARSING ====================

def test_parse_accepts_fenced_json():
    payload = "Here you go:\n```json\n" + json.dumps({"tasks": [
        {"id": "t1", "description": "Go to the kitchen"},
        {"id": "t2", "description": "Pick up the cup", "depends_on": "t1"},
    ]}) + "\n```"
    plan = parse_plan_response(RawPlanResponse(PlanStrategy.BIG_DAG, payload))
    assert plan.edges == [("t1", "t2")]


def test_parse_collects_every_problem():
    payload = json.dumps({"tasks": [
        {"id": "t1", "description": "A", "depends_on": ["t9"]},
        {"id": "t1", "description": "B"},
    ]})
    with pytest.raises(PlanParseError) as excinfo:
        parse_plan_response(RawPlanResponse(PlanStrategy.BIG_DAG, payload))
    assert len(excinfo.value.diagnostics) == 2


def test_parse_rejects_cycles():
    payload = json.dumps([
        {"id": "a", "description": "A", "depends_on": ["b"]},
        {"id": "b", "description": "B", "depends_on": ["a"]},
    ])
    with pytest.raises(PlanParseError, match="cycle"):
        parse_plan_response(RawPlanResponse(PlanStrategy.BIG_DAG, payload))


def test_llm_backend_repairs_then_succeeds():
    good = json.dumps({"tasks": [{"id": "t1", "description": "Go to the kitchen"}]})
    client = ReplayClient(["not json at all", good])
    backend = LLMPlannerBackend(client, PromptBuilder(), max_repair_retries=1)
    plan = run(plan_big_dag(goals("anything"), ["the cups are in the kitchen"], backend))
    assert list(plan.tasks) == ["t1"]
    assert len(client.calls) == 2
    assert "rejected" in client.calls[1][-1]["content"]
    assert "the cups are in the kitchen" in client.calls[0][0]["content"]


def test_llm_backend_gives_up_after_retries():
    client = ReplayClient(["still not json"])
    backend = LLMPlannerBackend(client, PromptBuilder(), max_repair_retries=2)
    with pytest.raises(PlannerBackendError):
        run(plan_big_dag(goals("anything"), [], backend))
    assert len(client.calls) == 3


# ==================== PLANNER ====================

def test_planner_annotates_capabilities(household, lexicon):
    planner = Planner(household, lexicon)
    plan = run(planner.build(PlanStrategy.PER_GOAL, goals("Fetch the newspaper"), []))
    assert plan.tasks["g1/door"].required_capabilities == ["navigation"]
    assert plan.tasks["g1/grab"].required_capabilities == ["manipulation"]


def test_planner_drops_completed_tasks(chains):
    planner = Planner(chains)
    first = run(planner.build(PlanStrategy.MONOLITHIC, goals("alpha"), []))
    first.tasks["g1/a1"].status = TaskStatus.SUCCEEDED
    done = completed_keys([first.tasks["g1/a1"]])
    second = run(planner.build(PlanStrategy.MONOLITHIC, goals("alpha"), [], completed=done))
    assert sorted(second.tasks) == ["g1/a2", "g1/a3"]
    assert second.tasks["g1/a2"].depends_on == []
