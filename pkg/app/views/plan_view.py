"""
Plan rendering for robotctl: an indented listing in topological order, or a
graph description for external renderers.
"""
from typing import Dict, Optional

from app.services.dag import topo_order
from app.store.models import Allocation, Plan, TaskStatus

EMPTY_PLAN = "(no tasks)"


def _robot(plan: Plan, allocation: Optional[Allocation], task_id: str) -> str:
    if allocation and task_id in allocation.assignments:
        return allocation.assignments[task_id]
    return plan.tasks[task_id].assigned_robot or "-"


def _depths(plan: Plan, order) -> Dict[str, int]:
    depths: Dict[str, int] = {}
    for task_id in order:
        deps = plan.tasks[task_id].depends_on
        depths[task_id] = 1 + max(depths[d] for d in deps) if deps else 0
    return depths


def render_text(plan: Plan, allocation: Optional[Allocation] = None) -> str:
    if not plan.tasks:
        return EMPTY_PLAN
    order = topo_order(plan)
    depths = _depths(plan, order)
    lines = []
    for task_id in order:
        task = plan.tasks[task_id]
        line = f"{'  ' * depths[task_id]}{task_id} [{_robot(plan, allocation, task_id)}] {task.description}"
        if task.depends_on:
            line += f"  (after {', '.join(task.depends_on)})"
        if task.status != TaskStatus.PENDING:
            line += f"  <{task.status.value}>"
        lines.append(line)
    return "\n".join(lines)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _quote(text: str) -> str:
    return f'"{_escape(text)}"'


def render_dot(plan: Plan, allocation: Optional[Allocation] = None) -> str:
    lines = [f"digraph {_quote(plan.id)} {{", "  rankdir=LR;"]
    for task_id in topo_order(plan):
        task = plan.tasks[task_id]
        parts = (task_id, task.description, f"[{_robot(plan, allocation, task_id)}]")
        label = "\\n".join(_escape(part) for part in parts)
        lines.append(f'  {_quote(task_id)} [label="{label}"];')
    for before, after in plan.edges:
        lines.append(f"  {_quote(before)} -> {_quote(after)};")
    lines.append("}")
    return "\n".join(lines)


def render_plan(plan: Plan, allocation: Optional[Allocation] = None, fmt: str = "text") -> str:
    """
    Deterministic rendering of a plan and its assignments

    Args:
        fmt: "text" for the indented listing, "dot" for a graph description
    """
    if fmt == "dot":
        return render_dot(plan, allocation)
    if fmt == "text":
        return render_text(plan, allocation)
    raise ValueError(f"unknown plan format '{fmt}'")
