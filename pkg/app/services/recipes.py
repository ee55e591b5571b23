"""
Recipe rulesets: the deterministic planner backend's knowledge base.

A ruleset file (``recipes.yaml`` in the fleet-rules directory) is a list of
rules. The first rule whose ``goal_pattern`` is a case-insensitive substring
of the goal text, and whose optional ``when`` substring appears in some world
statement, wins.
"""
import logging
from pathlib import Path
from typing import List, Optional, Set, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.exceptions import RulesError
from app.store.models import Goal, Task
from app.utils.documents import load_yaml_text, pydantic_error_field, pydantic_error_reason
from app.utils.validators import normalize_task_id

logger = logging.getLogger(__name__)

RECIPES_FILE = "recipes.yaml"


class RecipeSubtask(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    description: str
    depends_on: List[str] = Field(default_factory=list)
    capabilities: List[str] = Field(default_factory=list)
    robot: Optional[str] = None

    @field_validator("id")
    @classmethod
    def _normalize_id(cls, value: str) -> str:
        return normalize_task_id(value)

    @field_validator("depends_on")
    @classmethod
    def _normalize_deps(cls, value: List[str]) -> List[str]:
        return [normalize_task_id(v) for v in value]


class RecipeRule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    goal_pattern: str
    when: Optional[str] = None
    subtasks: List[RecipeSubtask]

    @field_validator("goal_pattern")
    @classmethod
    def _pattern_nonempty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("goal_pattern must not be empty")
        return value.strip()

    @model_validator(mode="after")
    def _internal_references(self) -> "RecipeRule":
        if not self.subtasks:
            raise ValueError("a rule needs at least one subtask")
        # Listing order is execution order: dependencies must come first
        seen: Set[str] = set()
        for sub in self.subtasks:
            if sub.id in seen:
                raise ValueError(f"subtask id '{sub.id}' is listed twice")
            for dep in sub.depends_on:
                if dep not in seen:
                    raise ValueError(
                        f"subtask '{sub.id}' depends on '{dep}', which is not listed before it"
                    )
            seen.add(sub.id)
        return self

    def matches(self, goal_text: str, world: List[str]) -> bool:
        if self.goal_pattern.lower() not in goal_text.lower():
            return False
        if self.when is None:
            return True
        needle = self.when.lower()
        return any(needle in statement.lower() for statement in world)

    def expand(self, goal: Goal) -> List[Task]:
        """Subtasks as tasks with local ids, in recipe order"""
        return [
            Task(
                id=sub.id,
                description=sub.description,
                depends_on=sub.depends_on,
                required_capabilities=sub.capabilities,
                goal_id=goal.id,
                assigned_robot=sub.robot,
            )
            for sub in self.subtasks
        ]


class RecipeBook(BaseModel):
    rules: List[RecipeRule] = Field(default_factory=list)

    @classmethod
    def parse(cls, text: str) -> "RecipeBook":
        try:
            document = load_yaml_text(text)
        except ValueError as e:
            raise RulesError(f"recipes: {e}")
        if isinstance(document, list):
            document = {"rules": document}
        try:
            return cls.model_validate(document or {})
        except ValidationError as e:
            raise RulesError(f"recipes: {pydantic_error_field(e)}: {pydantic_error_reason(e)}")

    @classmethod
    def load(cls, rules_dir: Union[str, Path]) -> "RecipeBook":
        path = Path(rules_dir) / RECIPES_FILE
        if not path.exists():
            raise RulesError(f"no recipe ruleset at {path}")
        book = cls.parse(path.read_text(encoding="utf-8"))
        logger.info(f"Loaded {len(book.rules)} recipe rules from {path}")
        return book

    def match(self, goal: Goal, world: List[str]) -> Optional[RecipeRule]:
        return next((rule for rule in self.rules if rule.matches(goal.text, world)), None)
