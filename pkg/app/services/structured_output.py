"""JSON extraction helpers for model completions."""
import json
import re
from typing import Any, List, Tuple

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


class StructuredOutputError(ValueError):
    pass


def _scan(text: str) -> Tuple[Any, bool]:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"[\[{]", text):
        try:
            value, _ = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        return value, True
    return None, False


def extract_json(text: str) -> Any:
    """
    Pull the first JSON object or array out of a completion

    Tries, in order: the whole text, fenced ```json blocks, then the first
    position where a complete object or array decodes.

    Raises:
        StructuredOutputError: If nothing decodes
    """
    if not text or not text.strip():
        raise StructuredOutputError("empty response")
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass

    candidates: List[str] = [block.strip() for block in _FENCE_RE.findall(stripped)]
    candidates.append(stripped)
    for candidate in candidates:
        value, found = _scan(candidate)
        if found:
            return value
    raise StructuredOutputError("no JSON object or array found in response")
