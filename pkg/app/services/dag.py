"""
DAG algebra over plans: validation, deterministic topological order,
Per-Goal merging and progress summaries.

All functions are pure: they read plans and return new values.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import networkx as nx

from app.exceptions import CycleError, DanglingDependency
from app.store.models import Plan, PlanStrategy, Task, TaskStatus, WAITING_STATUSES

logger = logging.getLogger(__name__)


def plan_graph(plan: Plan) -> nx.DiGraph:
    """Dependency graph, edge dep -> task; nodes and edges inserted in sorted order"""
    graph = nx.DiGraph()
    graph.add_nodes_from(sorted(plan.tasks))
    graph.add_edges_from(sorted(plan.edges))
    return graph


def check_references(plan: Plan) -> None:
    """Raise DanglingDependency for the first unresolved depends_on entry"""
    for task_id in sorted(plan.tasks):
        for dep in plan.tasks[task_id].depends_on:
            if dep not in plan.tasks:
                raise DanglingDependency(task_id, dep)


def find_cycle(plan: Plan) -> Optional[List[str]]:
    """
    Return one dependency cycle, or None

    The search visits ids in sorted order and the cycle is rotated to start
    at its smallest id, so the same plan always reports the same cycle.
    """
    try:
        edges = nx.find_cycle(plan_graph(plan))
    except nx.NetworkXNoCycle:
        return None
    cycle = [u for u, _ in edges]
    start = cycle.index(min(cycle))
    return cycle[start:] + cycle[:start]


def validate_dag(plan: Plan) -> None:
    """
    Validate a plan's dependency graph

    Raises:
        DanglingDependency: If a depends_on entry names a task outside the plan
        CycleError: If the graph has a directed cycle (one cycle is reported)
    """
    check_references(plan)
    cycle = find_cycle(plan)
    if cycle:
        raise CycleError(cycle)


def topo_order(plan: Plan) -> List[str]:
    """Topological order; ties among available tasks break lexicographically"""
    validate_dag(plan)
    return list(nx.lexicographical_topological_sort(plan_graph(plan)))


def merge_plans(plans: Iterable[Plan], plan_id: str = "merged",
                strategy: PlanStrategy = PlanStrategy.PER_GOAL) -> Plan:
    """
    Disjoint union of per-goal plans

    Every task id becomes "<goal_id>/<local id>" (the plan id stands in when
    a task has no goal). No edges are added between input plans.
    """
    merged = Plan(id=plan_id, strategy=strategy)
    for plan in plans:
        validate_dag(plan)
        rename = {
            task.id: f"{task.goal_id or plan.id}/{task.id}" for task in plan.tasks.values()
        }
        for task in plan.tasks.values():
            new_id = rename[task.id]
            if new_id in merged.tasks:
                raise ValueError(f"task id '{new_id}' appears in two merged plans")
            merged.add(task.model_copy(update={
                "id": new_id,
                "depends_on": sorted(rename[dep] for dep in task.depends_on),
            }))
    validate_dag(merged)
    return merged


@dataclass
class PlanProgress:
    counts: Dict[str, int] = field(default_factory=dict)
    frontier: List[str] = field(default_factory=list)

    def as_statements(self, plan: Plan) -> List[str]:
        """Render progress as declarative statements for planner prompts"""
        lines = [
            f"Plan {plan.id} progress: "
            + ", ".join(f"{count} {status}" for status, count in self.counts.items() if count)
        ]
        for task_id in sorted(plan.tasks):
            task = plan.tasks[task_id]
            if task.status == TaskStatus.SUCCEEDED:
                lines.append(f"Task '{task.description}' has already been completed.")
            elif task.status == TaskStatus.FAILED:
                lines.append(f"Task '{task.description}' failed and must be replanned.")
        return lines


def plan_progress(plan: Plan) -> PlanProgress:
    counts = {status.value: 0 for status in TaskStatus}
    for task in plan.tasks.values():
        counts[task.status.value] += 1
    frontier = [
        task_id for task_id in sorted(plan.tasks)
        if is_ready(plan, plan.tasks[task_id])
    ]
    return PlanProgress(counts=counts, frontier=frontier)


def is_ready(plan: Plan, task: Task) -> bool:
    """Waiting task whose dependencies have all succeeded"""
    return task.status in WAITING_STATUSES and all(
        plan.tasks[dep].status == TaskStatus.SUCCEEDED for dep in task.depends_on
    )
