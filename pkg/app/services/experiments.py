"""
Idle-time sweeps: planner strategy x allocator x fleet, run on the virtual
clock with the recipe backend and always-successful fixed-duration tasks.
"""
import csv
import io
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.exceptions import FleetError, SchemaError
from app.services.allocator import (
    Allocator, allocate_llm, allocation_json, create_allocator, greedy_mapping,
)
from app.services.capabilities import CapabilityLexicon
from app.services.dispatchers import SimulatedDispatcher
from app.services.llm_client import ReplayClient
from app.services.mission_runner import MissionRunner
from app.services.planner import Planner, PlannerBackend, RecipeBackend
from app.services.scheduler import idle_percentage
from app.store import crud
from app.store.models import (
    AllocationMethod, Endpoint, FleetStore, MissionPhase, PlanStrategy, RobotSpec,
)
from app.utils.documents import load_yaml_file, pydantic_error_field, pydantic_error_reason
from app.utils.validators import parse_choice

logger = logging.getLogger(__name__)

PLANNER_ORDER = (PlanStrategy.MONOLITHIC, PlanStrategy.BIG_DAG, PlanStrategy.PER_GOAL)
ALLOCATOR_ORDER = (AllocationMethod.MILP, AllocationMethod.LLM, AllocationMethod.ROUND_ROBIN)
PLANNER_LABELS = {
    PlanStrategy.MONOLITHIC: "monolithic",
    PlanStrategy.BIG_DAG: "big-dag",
    PlanStrategy.PER_GOAL: "per-goal",
}
ALLOCATOR_LABELS = {
    AllocationMethod.MILP: "milp",
    AllocationMethod.LLM: "llm-stub",
    AllocationMethod.ROUND_ROBIN: "round-robin",
}


# ==================== SCENARIO ====================

class ScenarioRobot(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    capabilities: List[str]


class FleetFixture(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str
    robots: List[ScenarioRobot] = Field(min_length=1)
    goals: List[str] = Field(min_length=1)


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    rules: str = "fleet_rules"
    planners: List[PlanStrategy] = Field(default_factory=lambda: list(PLANNER_ORDER), min_length=1)
    allocators: List[AllocationMethod] = Field(default_factory=lambda: list(ALLOCATOR_ORDER), min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    task_duration: float = Field(default=1.0, gt=0)
    fleets: List[FleetFixture] = Field(min_length=1)

    @model_validator(mode="before")
    @classmethod
    def _single_fleet(cls, data):
        if isinstance(data, dict) and "fleets" not in data and ("robots" in data or "goals" in data):
            data = dict(data)
            robots, goals = data.pop("robots", []), data.pop("goals", [])
            data["fleets"] = [{"label": f"{len(robots)} Robots/{len(goals)} Goals",
                               "robots": robots, "goals": goals}]
        return data

    @field_validator("planners", mode="before")
    @classmethod
    def _planner_names(cls, value):
        return [parse_choice(v, PlanStrategy) if isinstance(v, str) else v for v in value]

    @field_validator("allocators", mode="before")
    @classmethod
    def _allocator_names(cls, value):
        names = []
        for v in value:
            if isinstance(v, str) and v.strip().lower() == "llm-stub":
                v = "llm"
            names.append(parse_choice(v, AllocationMethod) if isinstance(v, str) else v)
        return names

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        """
        Read a scenario file; a relative rules path is resolved against the
        scenario's directory when it exists there

        Raises:
            SchemaError: On an invalid scenario document
        """
        path = Path(path)
        try:
            document = load_yaml_file(path)
        except (OSError, ValueError) as e:
            raise SchemaError("scenario", str(e))
        try:
            scenario = cls.model_validate(document or {})
        except ValidationError as e:
            raise SchemaError(pydantic_error_field(e), pydantic_error_reason(e))
        rules = Path(scenario.rules)
        if not rules.is_absolute() and (path.parent / rules).is_dir():
            scenario.rules = str(path.parent / rules)
        return scenario


# ==================== RESULTS ====================

@dataclass
class CellResult:
    fleet: str
    strategy: PlanStrategy
    method: AllocationMethod
    samples: List[Fraction] = field(default_factory=list)
    feasible: bool = True

    @property
    def mean(self) -> float:
        return float(np.mean([float(s) for s in self.samples])) if self.samples else 0.0

    @property
    def std(self) -> float:
        """Sample standard deviation; 0 for a single sample"""
        if len(self.samples) < 2:
            return 0.0
        return float(np.std([float(s) for s in self.samples], ddof=1))

    def render(self) -> str:
        return f"{self.mean:.1f} ± {self.std:.1f}"


@dataclass
class SweepResult:
    name: str = "scenario"
    fleets: List[str] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    cells: Dict[Tuple[PlanStrategy, AllocationMethod, str], CellResult] = field(default_factory=dict)

    def cell(self, strategy: PlanStrategy, method: AllocationMethod, fleet: str) -> Optional[CellResult]:
        return self.cells.get((strategy, method, fleet))


class ReplayAllocator(Allocator):
    """The llm allocator path fed with a recorded least-loaded mapping"""
    method = AllocationMethod.LLM

    async def allocate(self, tasks, robots, world):
        client = ReplayClient([allocation_json(greedy_mapping(tasks, robots))])
        return await allocate_llm(tasks, robots, world, client, max_repair_retries=0)


def sweep_allocator(method: AllocationMethod) -> Allocator:
    if method == AllocationMethod.LLM:
        return ReplayAllocator()
    return create_allocator(method)


# ==================== SWEEP ====================

def build_store(fleet: FleetFixture, seed: int) -> FleetStore:
    """Seeded permutation of goal order and robot registry order"""
    rng = random.Random(seed)
    goals = list(fleet.goals)
    robots = list(fleet.robots)
    rng.shuffle(goals)
    rng.shuffle(robots)
    store = FleetStore()
    for index, robot in enumerate(robots, start=1):
        store.robots[robot.name] = RobotSpec(
            name=robot.name, capabilities=robot.capabilities,
            endpoint=Endpoint(host="sim.local", port=index),
        )
    for text in goals:
        crud.add_goal(store, text)
    return store


async def run_cell(fleet: FleetFixture, strategy: PlanStrategy, method: AllocationMethod, seed: int,
                   backend: PlannerBackend, lexicon: CapabilityLexicon,
                   task_duration: Fraction = Fraction(1)) -> Tuple[Fraction, bool]:
    """
    One planner/allocator/seed run on the virtual clock

    Returns:
        (idle percentage, whether the allocation was feasible)

    Raises:
        FleetError: If the mission does not finish
    """
    store = build_store(fleet, seed)
    runner = MissionRunner(store, Planner(backend, lexicon), sweep_allocator)
    state = runner.new_mission("p1", strategy, method)
    await runner.plan_mission(state)
    await runner.run(state, SimulatedDispatcher(default_duration=task_duration))
    if state.phase != MissionPhase.DONE:
        raise FleetError(f"{fleet.label} {strategy.value}/{method.value} seed {seed}: "
                         f"mission ended {state.phase.value} ({state.diagnostic})")
    return idle_percentage(state.trace, len(store.robots)), state.feasible


async def run_sweep(scenario: Scenario, backend: Optional[PlannerBackend] = None,
                    lexicon: Optional[CapabilityLexicon] = None) -> SweepResult:
    """
    Every (planner, allocator, fleet, seed) cell of a scenario

    Cells are independent; results are reduced in scenario order so the same
    scenario always yields the same table.
    """
    backend = backend or RecipeBackend.load(scenario.rules)
    lexicon = lexicon or CapabilityLexicon.load(scenario.rules)
    duration = Fraction(str(scenario.task_duration))
    result = SweepResult(name=scenario.name, fleets=[f.label for f in scenario.fleets], seeds=list(scenario.seeds))
    for fleet in scenario.fleets:
        for strategy in scenario.planners:
            for method in scenario.allocators:
                cell = CellResult(fleet.label, strategy, method)
                for seed in scenario.seeds:
                    idle, feasible = await run_cell(fleet, strategy, method, seed, backend, lexicon, duration)
                    cell.samples.append(idle)
                    cell.feasible = cell.feasible and feasible
                result.cells[(strategy, method, fleet.label)] = cell
                logger.info(f"{fleet.label} {PLANNER_LABELS[strategy]}/{ALLOCATOR_LABELS[method]}: {cell.render()}")
    return result


# ==================== TABLE ====================

def caption(result: SweepResult) -> str:
    return (
        f"Idle time percentage (mean ± sample std over {len(result.seeds)} seeds) for each "
        f"planner/allocator pairing. Deterministic recipe plans with fixed-duration tasks; "
        f"absolute values are not LLM-planned results."
    )


def _rows(result: SweepResult) -> List[List[str]]:
    rows = []
    for strategy in PLANNER_ORDER:
        for method in ALLOCATOR_ORDER:
            cells = [result.cell(strategy, method, fleet) for fleet in result.fleets]
            if not any(cells):
                continue
            rows.append([PLANNER_LABELS[strategy], ALLOCATOR_LABELS[method]]
                        + [c.render() if c else "-" for c in cells])
    return rows


def emit_table(result: Optional[SweepResult], fmt: str = "markdown") -> str:
    """
    Render sweep results; rows ordered (monolithic, big-dag, per-goal) x
    (milp, llm-stub, round-robin)

    Args:
        fmt: "markdown" or "csv"
    """
    result = result or SweepResult()
    header = ["Planner", "Allocator", *result.fleets]
    rows = _rows(result)
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        if rows:
            buffer.write(f"# {caption(result)}\n")
        return buffer.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown table format '{fmt}'")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines.extend("| " + " | ".join(row) + " |" for row in rows)
    if rows:
        lines.extend(["", caption(result)])
    return "\n".join(lines) + "\n"
