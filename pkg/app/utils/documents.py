from pathlib import Path
from typing import Any, Union

import yaml


def load_yaml_text(text: str) -> Any:
    """
    Parse one YAML document

    Raises:
        ValueError: On YAML syntax errors
    """
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ValueError(f"invalid YAML: {e}")


def load_yaml_file(path: Union[str, Path]) -> Any:
    return load_yaml_text(Path(path).read_text(encoding="utf-8"))


def pydantic_error_field(error) -> str:
    """Dotted location of the first error in a pydantic ValidationError"""
    first = error.errors()[0]
    return ".".join(str(part) for part in first.get("loc", ())) or "document"


def pydantic_error_reason(error) -> str:
    return error.errors()[0].get("msg", "invalid value")
