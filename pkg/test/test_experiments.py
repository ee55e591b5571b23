from fractions import Fraction

import pytest

from app.exceptions import SchemaError
from app.services.experiments import (
    ALLOCATOR_ORDER, CellResult, Scenario, SweepResult, emit_table, run_sweep,
)
from app.store.models import AllocationMethod, PlanStrategy
from helpers import ROOT, RULES_DIR, run

DEFAULT_SCENARIO = ROOT / "scenarios" / "default.yaml"


@pytest.fixture(scope="module")
def default_sweep():
    return run(run_sweep(Scenario.load(DEFAULT_SCENARIO)))


def small_scenario(**overrides) -> Scenario:
    document = {
        "rules": str(RULES_DIR),
        "seeds": [0, 1],
        "robots": [
            {"name": "r1", "capabilities": ["navigation", "manipulation", "detection", "exploration"]},
            {"name": "r2", "capabilities": ["navigation", "manipulation", "detection", "exploration"]},
        ],
        "goals": ["Make tea", "Set the table"],
    }
    document.update(overrides)
    return Scenario.model_validate(document)


# ==================== SCENARIOS ====================

def test_default_scenario_resolves_rules_next_to_it():
    scenario = Scenario.load(DEFAULT_SCENARIO)
    assert scenario.rules == str(DEFAULT_SCENARIO.parent / "../fleet_rules")
    assert scenario.allocators == list(ALLOCATOR_ORDER)
    assert [f.label for f in scenario.fleets] == ["3 Robots/5 Goals", "5 Robots/10 Goals"]


def test_single_fleet_shorthand_gets_a_label():
    assert small_scenario().fleets[0].label == "2 Robots/2 Goals"


@pytest.mark.parametrize("body", ["planners: [zigzag]\n", "fleets: []\n", "seeds: [0]\nfleets: nope\n"])
def test_bad_scenarios_are_schema_errors(tmp_path, body):
    path = tmp_path / "scenario.yaml"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(SchemaError):
        Scenario.load(path)


# ==================== SWEEPS ====================

@pytest.mark.parametrize("fleet, expected", [("3 Robots/5 Goals", "66.7 ± 0.0"), ("5 Robots/10 Goals", "80.0 ± 0.0")])
def test_monolithic_leaves_all_but_one_robot_idle(default_sweep, fleet, expected):
    for method in ALLOCATOR_ORDER:
        assert default_sweep.cell(PlanStrategy.MONOLITHIC, method, fleet).render() == expected


def test_parallel_plans_idle_less_than_monolithic(default_sweep):
    for fleet in default_sweep.fleets:
        for method in ALLOCATOR_ORDER:
            monolithic = default_sweep.cell(PlanStrategy.MONOLITHIC, method, fleet).mean
            for strategy in (PlanStrategy.BIG_DAG, PlanStrategy.PER_GOAL):
                assert default_sweep.cell(strategy, method, fleet).mean < monolithic, (fleet, strategy, method)


def test_every_default_cell_has_all_seeds(default_sweep):
    assert len(default_sweep.cells) == 2 * 3 * 3
    assert all(len(cell.samples) == 5 for cell in default_sweep.cells.values())
    assert all(cell.feasible for (_, method, _), cell in default_sweep.cells.items()
               if method != AllocationMethod.ROUND_ROBIN)


def test_sweeps_are_deterministic():
    scenario = small_scenario()
    first = emit_table(run(run_sweep(scenario)))
    second = emit_table(run(run_sweep(scenario)))
    assert first == second


def test_sweep_respects_scenario_subsets():
    result = run(run_sweep(small_scenario(planners=["per-goal"], allocators=["round-robin"], seeds=[3])))
    assert list(result.cells) == [(PlanStrategy.PER_GOAL, AllocationMethod.ROUND_ROBIN, "2 Robots/2 Goals")]


# ==================== TABLES ====================

def test_cell_statistics():
    assert CellResult("f", PlanStrategy.PER_GOAL, AllocationMethod.MILP, [Fraction(50), Fraction(50)]).render() \
        == "50.0 ± 0.0"
    spread = CellResult("f", PlanStrategy.PER_GOAL, AllocationMethod.MILP, [Fraction(40), Fraction(60)])
    assert spread.render() == "50.0 ± 14.1"
    assert CellResult("f", PlanStrategy.PER_GOAL, AllocationMethod.MILP, [Fraction(1, 3)]).std == 0.0


def test_empty_results_render_header_only():
    assert emit_table(None) == "| Planner | Allocator |\n|---|---|\n"
    assert emit_table(SweepResult(fleets=["3 Robots"]), "csv") == "Planner,Allocator,3 Robots\n"


def test_table_rows_follow_fixed_order():
    result = SweepResult(fleets=["f"], seeds=[0])
    for strategy in (PlanStrategy.PER_GOAL, PlanStrategy.MONOLITHIC):
        for method in (AllocationMethod.ROUND_ROBIN, AllocationMethod.MILP):
            result.cells[(strategy, method, "f")] = CellResult("f", strategy, method, [Fraction(10)])
    lines = emit_table(result).splitlines()
    assert lines[2:6] == [
        "| monolithic | milp | 10.0 ± 0.0 |",
        "| monolithic | round-robin | 10.0 ± 0.0 |",
        "| per-goal | milp | 10.0 ± 0.0 |",
        "| per-goal | round-robin | 10.0 ± 0.0 |",
    ]
    assert lines[-1].startswith("Idle time percentage")
    csv_lines = emit_table(result, "csv").splitlines()
    assert csv_lines[1] == "monolithic,milp,10.0 ± 0.0"
    with pytest.raises(ValueError):
        emit_table(result, "html")
