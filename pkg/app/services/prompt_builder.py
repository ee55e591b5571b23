import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from app.exceptions import RulesError
from app.store.models import Goal, PlanStrategy, RobotSpec, Task

logger = logging.getLogger(__name__)

PROMPTS_DIR = "prompts"
ALLOCATE_TEMPLATE = "allocate"
PLACEHOLDERS = ("goals", "world", "capabilities", "tasks", "robots")

_PLAN_SCHEMA = (
    'Answer with JSON only: {"tasks": [{"id": "...", "description": "...", '
    '"depends_on": ["<ids of tasks that must finish first>"], '
    '"capabilities": ["..."], "goal_id": "..."}]}'
)

DEFAULT_TEMPLATES: Dict[str, str] = {
    "plan_per_goal": (
        "You plan tasks for a fleet of robots.\n"
        "Goal:\n{goals}\n\nWorld state:\n{world}\n\n"
        "Robot capabilities available: {capabilities}\n\n"
        "Break the goal into small subtasks forming a dependency DAG. " + _PLAN_SCHEMA
    ),
    "plan_big_dag": (
        "You plan tasks for a fleet of robots.\n"
        "Goals:\n{goals}\n\nWorld state:\n{world}\n\n"
        "Robot capabilities available: {capabilities}\n\n"
        "Produce ONE dependency DAG covering all goals; reuse a subtask when "
        "goals share it. " + _PLAN_SCHEMA
    ),
    "plan_monolithic": (
        "You plan tasks for a fleet of robots.\n"
        "Goals:\n{goals}\n\nWorld state:\n{world}\n\n"
        "Robot capabilities available: {capabilities}\n\n"
        "List every subtask needed, in execution order. " + _PLAN_SCHEMA
    ),
    ALLOCATE_TEMPLATE: (
        "Assign each task to exactly one robot.\n"
        "Tasks:\n{tasks}\n\nRobots:\n{robots}\n\nWorld state:\n{world}\n\n"
        'Answer with a JSON object mapping task id to robot name, e.g. {"t1": "robot-a"}.'
    ),
}


def _bullets(lines: Iterable[str]) -> str:
    rendered = [f"- {line}" for line in lines]
    return "\n".join(rendered) if rendered else "- (none)"


class PromptBuilder:
    """Fills plain-text templates from <rules_dir>/prompts"""

    def __init__(self, templates: Optional[Dict[str, str]] = None):
        self.templates = dict(DEFAULT_TEMPLATES)
        self.templates.update(templates or {})

    @classmethod
    def load(cls, rules_dir: Union[str, Path]) -> "PromptBuilder":
        prompts_dir = Path(rules_dir) / PROMPTS_DIR
        templates: Dict[str, str] = {}
        if prompts_dir.is_dir():
            for path in sorted(prompts_dir.glob("*.txt")):
                templates[path.stem] = path.read_text(encoding="utf-8")
        else:
            logger.warning(f"No prompt templates at {prompts_dir}, using built-in defaults")
        return cls(templates)

    def render(self, name: str, **values: str) -> str:
        """
        Substitute {placeholder} markers; unknown braces are left untouched so
        JSON examples inside templates survive
        """
        template = self.templates.get(name)
        if template is None:
            raise RulesError(f"no prompt template named '{name}'")
        text = template
        for key in PLACEHOLDERS:
            text = text.replace("{" + key + "}", values.get(key, ""))
        return text

    @staticmethod
    def template_for(strategy: PlanStrategy) -> str:
        return f"plan_{strategy.value}"

    def build_plan_prompt(self, strategy: PlanStrategy, goals: List[Goal], world: List[str],
                          capabilities: Iterable[str]) -> str:
        return self.render(
            self.template_for(strategy),
            goals=_bullets(f"[{goal.id}] {goal.text}" for goal in goals),
            world=_bullets(world),
            capabilities=", ".join(sorted(set(capabilities))) or "(unspecified)",
        )

    def build_allocation_prompt(self, tasks: List[Task], robots: List[RobotSpec],
                                world: List[str]) -> str:
        task_lines = []
        for task in tasks:
            caps = ", ".join(task.required_capabilities) or "any"
            line = f"{task.id}: {task.description} (needs: {caps})"
            if task.assigned_robot:
                line += f" (pinned to {task.assigned_robot})"
            task_lines.append(line)
        return self.render(
            ALLOCATE_TEMPLATE,
            tasks=_bullets(task_lines),
            robots=_bullets(f"{robot.name}: {', '.join(robot.capabilities)}" for robot in robots),
            world=_bullets(world),
        )
