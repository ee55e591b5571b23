"""Keyword-based capability extraction from task descriptions."""
import logging
import re
from pathlib import Path
from typing import Dict, Iterable, List, Set, Union

from app.exceptions import RulesError

logger = logging.getLogger(__name__)

LEXICON_FILE = "lexicon.txt"

DEFAULT_ENTRIES: Dict[str, str] = {
    "navigate": "navigation",
    "go": "navigation",
    "move": "navigation",
    "drive": "navigation",
    "explore": "exploration",
    "search": "exploration",
    "patrol": "exploration",
    "pick": "manipulation",
    "place": "manipulation",
    "grasp": "manipulation",
    "put": "manipulation",
    "pour": "manipulation",
    "detect": "detection",
    "locate": "detection",
    "identify": "detection",
}


def _tokens(text: str) -> List[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


class CapabilityLexicon:
    """Map of lowercase keyword -> capability string"""

    def __init__(self, entries: Dict[str, str]):
        normalized: Dict[str, str] = {}
        for keyword, capability in entries.items():
            key = " ".join(_tokens(keyword))
            if not key:
                raise RulesError(f"lexicon keyword {keyword!r} is empty after normalization")
            if key in normalized:
                raise RulesError(f"lexicon keyword '{key}' is listed twice")
            if not capability.strip():
                raise RulesError(f"lexicon keyword '{key}' maps to an empty capability")
            normalized[key] = capability.strip().lower()
        self.entries = normalized

    @classmethod
    def default(cls) -> "CapabilityLexicon":
        return cls(DEFAULT_ENTRIES)

    @classmethod
    def parse(cls, text: str) -> "CapabilityLexicon":
        """
        Parse "keyword -> capability" lines

        Blank lines and lines starting with # are ignored.
        """
        entries: Dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            keyword, sep, capability = line.partition('->')
            if not sep:
                raise RulesError(f"lexicon line {lineno}: expected 'keyword -> capability'")
            key = keyword.strip().lower()
            if key in entries:
                raise RulesError(f"lexicon line {lineno}: keyword '{key}' is listed twice")
            entries[key] = capability
        return cls(entries)

    @classmethod
    def load(cls, rules_dir: Union[str, Path]) -> "CapabilityLexicon":
        path = Path(rules_dir) / LEXICON_FILE
        if not path.exists():
            logger.warning(f"No lexicon at {path}, using the built-in default")
            return cls.default()
        return cls.parse(path.read_text(encoding="utf-8"))

    def capabilities(self) -> Set[str]:
        return set(self.entries.values())


def extract_capabilities(description: str, lexicon: CapabilityLexicon) -> Set[str]:
    """
    Whole-word, case-insensitive keyword match against a task description

    Returns:
        Union of mapped capabilities; empty when nothing matches, which marks
        the task as runnable by any robot
    """
    text = f" {' '.join(_tokens(description))} "
    found: Set[str] = set()
    for keyword, capability in lexicon.entries.items():
        if f" {keyword} " in text:
            found.add(capability)
    return found


def annotate_capabilities(tasks: Iterable, lexicon: CapabilityLexicon) -> None:
    """Fill empty required_capabilities from the description"""
    for task in tasks:
        if not task.required_capabilities:
            task.required_capabilities = sorted(extract_capabilities(task.description, lexicon))
