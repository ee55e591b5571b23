"""
Plan construction: Per-Goal DAG, Big-DAG and Monolithic strategies over a
pluggable backend (deterministic recipes or an LLM endpoint).

Every backend answers with a RawPlanResponse whose payload is JSON text; the
same parser turns it into a Plan, so recipe and LLM output go through one
validation path.
"""
import asyncio
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    AbstractSet, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union,
)

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.config import settings
from app.exceptions import (
    CycleError, DedupCycleError, FleetError, NoGoals, PlanParseError, PlannerBackendError, RulesError,
)
from app.services.capabilities import CapabilityLexicon, annotate_capabilities
from app.services.dag import find_cycle, merge_plans, validate_dag
from app.services.llm_client import CompletionClient
from app.services.prompt_builder import PromptBuilder
from app.services.recipes import RecipeBook
from app.services.structured_output import StructuredOutputError, extract_json
from app.store.models import Goal, Plan, PlanStrategy, Task, WorldState
from app.utils.validators import normalize_description

logger = logging.getLogger(__name__)

# (goal id, normalized description) of a task that already succeeded
CompletedKey = Tuple[Optional[str], str]


@dataclass
class PlanRequest:
    strategy: PlanStrategy
    goals: List[Goal]
    world: List[str] = field(default_factory=list)
    capabilities: List[str] = field(default_factory=list)


@dataclass
class RawPlanResponse:
    strategy: PlanStrategy
    payload: str
    transcript: List[Dict[str, str]] = field(default_factory=list)


# ==================== PAYLOAD SCHEMA ====================

class PayloadTask(BaseModel):
    model_config = ConfigDict(extra="ignore")

    id: str
    description: str
    depends_on: List[str] = Field(default_factory=list)
    capabilities: List[str] = Field(
        default_factory=list,
        validation_alias=AliasChoices("capabilities", "required_capabilities"),
    )
    goal_id: Optional[str] = None
    robot: Optional[str] = Field(default=None, validation_alias=AliasChoices("robot", "assigned_robot"))

    @field_validator("id", mode="before")
    @classmethod
    def _id_as_text(cls, value):
        return str(value) if isinstance(value, int) else value

    @field_validator("depends_on", "capabilities", mode="before")
    @classmethod
    def _listify(cls, value):
        if value is None:
            return []
        if isinstance(value, (str, int)):
            return [str(value)]
        return [str(v) for v in value]


class PlanPayload(BaseModel):
    tasks: List[PayloadTask]


def parse_plan_response(raw: RawPlanResponse, plan_id: str = "plan") -> Plan:
    """
    Turn a backend payload into a validated Plan

    Raises:
        PlanParseError: With every problem found (bad JSON, schema errors,
            duplicate ids, unresolved references, one cycle)
    """
    try:
        document = extract_json(raw.payload)
    except StructuredOutputError as e:
        raise PlanParseError([str(e)])
    if isinstance(document, list):
        document = {"tasks": document}
    try:
        payload = PlanPayload.model_validate(document)
    except ValidationError as e:
        raise PlanParseError([
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ])

    diagnostics: List[str] = []
    plan = Plan(id=plan_id, strategy=raw.strategy)
    for item in payload.tasks:
        try:
            task = Task(
                id=item.id,
                description=item.description,
                depends_on=item.depends_on,
                required_capabilities=item.capabilities,
                goal_id=item.goal_id,
                assigned_robot=item.robot,
            )
        except (ValidationError, ValueError) as e:
            diagnostics.append(f"task '{item.id}': {e}")
            continue
        if task.id in plan.tasks:
            diagnostics.append(f"duplicate task id '{task.id}'")
            continue
        plan.add(task)

    for task_id in sorted(plan.tasks):
        for dep in plan.tasks[task_id].depends_on:
            if dep not in plan.tasks:
                diagnostics.append(f"task '{task_id}' depends on undefined task '{dep}'")
    if not diagnostics:
        cycle = find_cycle(plan)
        if cycle:
            diagnostics.append(CycleError(cycle).message)
    if diagnostics:
        raise PlanParseError(diagnostics)
    return plan


# ==================== BACKENDS ====================

class PlannerBackend(ABC):
    """Source of raw plans; one call per strategy invocation"""
    kind: str = "abstract"
    max_repair_retries: int = 0

    @abstractmethod
    async def generate(self, request: PlanRequest) -> RawPlanResponse:
        ...

    async def repair(self, request: PlanRequest, previous: RawPlanResponse,
                     diagnostics: Sequence[str]) -> RawPlanResponse:
        raise PlanParseError(list(diagnostics))


def _namespaced(goal: Goal, tasks: List[Task]) -> List[Task]:
    return [
        task.model_copy(update={
            "id": f"{goal.id}/{task.id}",
            "depends_on": sorted(f"{goal.id}/{dep}" for dep in task.depends_on),
        })
        for task in tasks
    ]


def _merge_duplicate(plan: Plan, kept: str, dropped: str) -> Plan:
    merged = plan.model_copy(deep=True)
    gone = merged.tasks.pop(dropped)
    keep = merged.tasks[kept]
    keep.depends_on = sorted(set(keep.depends_on) | set(gone.depends_on))
    keep.required_capabilities = sorted(set(keep.required_capabilities) | set(gone.required_capabilities))
    keep.assigned_robot = keep.assigned_robot or gone.assigned_robot
    for task in merged.tasks.values():
        if dropped in task.depends_on:
            task.depends_on = sorted({kept if dep == dropped else dep for dep in task.depends_on})
    return merged


def deduplicate(tasks: List[Task]) -> List[Task]:
    """
    Merge tasks whose whitespace-normalized descriptions are identical

    The first occurrence survives and inherits the dependency edges of the
    later ones. A merge that would close a cycle is skipped and both nodes
    are kept.
    """
    plan = Plan(id="dedup", tasks=[task.model_copy(deep=True) for task in tasks])
    survivors: Dict[str, str] = {}
    for task in tasks:
        key = normalize_description(task.description)
        kept = survivors.get(key)
        if kept is None:
            survivors[key] = task.id
            continue
        candidate = _merge_duplicate(plan, kept, task.id)
        if find_cycle(candidate):
            logger.warning(DedupCycleError(kept, task.id).message + "; keeping both")
            continue
        plan = candidate
    return list(plan.tasks.values())


def chain(tasks: List[Task]) -> List[Task]:
    """Replace all edges with a single total order over the given sequence"""
    chained: List[Task] = []
    for index, task in enumerate(tasks):
        deps = [tasks[index - 1].id] if index else []
        chained.append(task.model_copy(update={"depends_on": deps}))
    return chained


def _payload(tasks: Iterable[Task]) -> str:
    return json.dumps({"tasks": [
        {
            "id": task.id,
            "description": task.description,
            "depends_on": task.depends_on,
            "capabilities": task.required_capabilities,
            "goal_id": task.goal_id,
            "robot": task.assigned_robot,
        }
        for task in tasks
    ]}, indent=2)


class RecipeBackend(PlannerBackend):
    """Deterministic backend that expands goals from a recipe ruleset"""
    kind = "recipe"

    def __init__(self, book: RecipeBook):
        self.book = book

    @classmethod
    def load(cls, rules_dir: Union[str, Path]) -> "RecipeBackend":
        return cls(RecipeBook.load(rules_dir))

    def expand(self, goal: Goal, world: List[str]) -> List[Task]:
        rule = self.book.match(goal, world)
        if rule is None:
            raise RulesError(f"no recipe rule matches goal '{goal.text}'")
        return rule.expand(goal)

    def expand_all(self, goals: List[Goal], world: List[str]) -> List[Task]:
        """Every goal's recipe, namespaced by goal id, before any dedup"""
        tasks: List[Task] = []
        for goal in goals:
            tasks.extend(_namespaced(goal, self.expand(goal, world)))
        return tasks

    async def generate(self, request: PlanRequest) -> RawPlanResponse:
        strategy = request.strategy
        if strategy == PlanStrategy.PER_GOAL and len(request.goals) == 1:
            tasks = self.expand(request.goals[0], request.world)
        elif strategy == PlanStrategy.BIG_DAG:
            tasks = deduplicate(self.expand_all(request.goals, request.world))
        elif strategy == PlanStrategy.MONOLITHIC:
            # Goals chain in the order given, which is store (creation) order
            tasks = chain(self.expand_all(request.goals, request.world))
        else:
            tasks = self.expand_all(request.goals, request.world)
        return RawPlanResponse(strategy=strategy, payload=_payload(tasks))


class LLMPlannerBackend(PlannerBackend):
    """Prompts a chat-completions endpoint with the strategy's template"""
    kind = "llm"

    def __init__(self, client: CompletionClient, prompts: PromptBuilder,
                 max_repair_retries: Optional[int] = None):
        self.client = client
        self.prompts = prompts
        self.max_repair_retries = (
            settings.LLM_MAX_REPAIR_RETRIES if max_repair_retries is None else max_repair_retries
        )
        if self.max_repair_retries < 0:
            raise ValueError("max_repair_retries must be >= 0")

    async def _ask(self, strategy: PlanStrategy, messages: List[Dict[str, str]]) -> RawPlanResponse:
        reply = await self.client.complete(messages)
        return RawPlanResponse(
            strategy=strategy,
            payload=reply,
            transcript=messages + [{"role": "assistant", "content": reply}],
        )

    async def generate(self, request: PlanRequest) -> RawPlanResponse:
        prompt = self.prompts.build_plan_prompt(
            request.strategy, request.goals, request.world, request.capabilities
        )
        return await self._ask(request.strategy, [{"role": "user", "content": prompt}])

    async def repair(self, request: PlanRequest, previous: RawPlanResponse,
                     diagnostics: Sequence[str]) -> RawPlanResponse:
        feedback = (
            "The plan was rejected:\n"
            + "\n".join(f"- {line}" for line in diagnostics)
            + "\nReturn the corrected plan as JSON only."
        )
        messages = previous.transcript + [{"role": "user", "content": feedback}]
        return await self._ask(request.strategy, messages)


# ==================== STRATEGIES ====================

def _world_texts(world: Union[WorldState, Sequence[str], None]) -> List[str]:
    if world is None:
        return []
    if isinstance(world, WorldState):
        return world.texts()
    return list(world)


async def _invoke(backend: PlannerBackend, request: PlanRequest, plan_id: str,
                  goal_id: Optional[str]) -> Plan:
    try:
        raw = await backend.generate(request)
        repairs = 0
        while True:
            try:
                return parse_plan_response(raw, plan_id)
            except PlanParseError as e:
                if repairs >= backend.max_repair_retries:
                    raise
                repairs += 1
                logger.warning(f"Plan rejected, repair {repairs}/{backend.max_repair_retries}: {e.message}")
                raw = await backend.repair(request, raw, e.diagnostics)
    except FleetError as e:
        raise PlannerBackendError(goal_id, e.message)


def _require_goals(goals: Sequence[Goal]) -> None:
    if not goals:
        raise NoGoals("at least one goal is required to plan")


async def plan_per_goal(goals: List[Goal], world, backend: PlannerBackend, *,
                        plan_id: str = "plan", capabilities: Iterable[str] = ()) -> Plan:
    """
    One backend call per goal, combined by disjoint union

    All-or-nothing: the first failing goal (in goal order) is reported and
    every partial result is discarded.
    """
    _require_goals(goals)
    texts = _world_texts(world)
    caps = sorted(set(capabilities))
    results = await asyncio.gather(*[
        _invoke(backend, PlanRequest(PlanStrategy.PER_GOAL, [goal], texts, caps), goal.id, goal.id)
        for goal in goals
    ], return_exceptions=True)

    plans: List[Plan] = []
    for goal, result in zip(goals, results):
        if isinstance(result, BaseException):
            raise result
        for task in result.tasks.values():
            task.goal_id = goal.id
        plans.append(result)
    return merge_plans(plans, plan_id=plan_id, strategy=PlanStrategy.PER_GOAL)


async def plan_big_dag(goals: List[Goal], world, backend: PlannerBackend, *,
                       plan_id: str = "plan", capabilities: Iterable[str] = ()) -> Plan:
    """One backend call covering every goal"""
    _require_goals(goals)
    request = PlanRequest(PlanStrategy.BIG_DAG, list(goals), _world_texts(world), sorted(set(capabilities)))
    return await _invoke(backend, request, plan_id, None)


async def plan_monolithic(goals: List[Goal], world, backend: PlannerBackend, *,
                          plan_id: str = "plan", capabilities: Iterable[str] = ()) -> Plan:
    """One backend call over the concatenated goals and world"""
    _require_goals(goals)
    request = PlanRequest(PlanStrategy.MONOLITHIC, list(goals), _world_texts(world), sorted(set(capabilities)))
    return await _invoke(backend, request, plan_id, None)


STRATEGIES = {
    PlanStrategy.PER_GOAL: plan_per_goal,
    PlanStrategy.BIG_DAG: plan_big_dag,
    PlanStrategy.MONOLITHIC: plan_monolithic,
}


def completed_keys(tasks: Iterable[Task]) -> Set[CompletedKey]:
    return {(task.goal_id, normalize_description(task.description)) for task in tasks}


def drop_completed(plan: Plan, completed: AbstractSet[CompletedKey]) -> Plan:
    """
    Remove tasks that already succeeded in an earlier plan

    A task that depended on a removed task inherits the removed task's own
    dependencies, so orderings through it (e.g. a monolithic chain) survive.
    """
    dropped = {
        task_id for task_id, task in plan.tasks.items()
        if (task.goal_id, normalize_description(task.description)) in completed
    }
    if not dropped:
        return plan

    def resolve(dep: str) -> Set[str]:
        if dep not in dropped:
            return {dep}
        found: Set[str] = set()
        for inner in plan.tasks[dep].depends_on:
            found |= resolve(inner)
        return found

    kept = Plan(id=plan.id, strategy=plan.strategy)
    for task_id, task in plan.tasks.items():
        if task_id in dropped:
            continue
        deps: Set[str] = set()
        for dep in task.depends_on:
            deps |= resolve(dep)
        kept.add(task.model_copy(update={"depends_on": sorted(deps)}))
    logger.info(f"Dropped {len(dropped)} already completed tasks from plan {plan.id}")
    return kept


class Planner:
    """Strategy dispatch plus capability annotation and progress filtering"""

    def __init__(self, backend: PlannerBackend, lexicon: Optional[CapabilityLexicon] = None):
        self.backend = backend
        self.lexicon = lexicon or CapabilityLexicon.default()

    async def build(self, strategy: PlanStrategy, goals: List[Goal], world, *,
                    plan_id: str = "plan", completed: AbstractSet[CompletedKey] = frozenset(),
                    capabilities: Iterable[str] = ()) -> Plan:
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy '{strategy.value}' cannot be planned automatically")
        plan = await STRATEGIES[strategy](
            goals, world, self.backend, plan_id=plan_id, capabilities=capabilities
        )
        plan = drop_completed(plan, completed)
        annotate_capabilities(plan.tasks.values(), self.lexicon)
        validate_dag(plan)
        logger.info(f"Planned {plan.id} with {strategy.value}: {len(plan.tasks)} tasks, "
                    f"{len(plan.edges)} edges")
        return plan
