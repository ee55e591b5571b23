from typing import Tuple
import re


def normalize_task_id(raw_id: str) -> str:
    """
    Normalize an operator/planner supplied task id

    Ids are lowercased and runs of whitespace become single hyphens, so
    "Boil Water" and "boil  water" both reference "boil-water".

    Args:
        raw_id: Id as written in a plan payload or on the command line

    Returns:
        Normalized id

    Raises:
        ValueError: If nothing is left after normalization
    """
    normalized = re.sub(r'\s+', '-', raw_id.strip().lower())
    if not normalized:
        raise ValueError("task id must not be empty")
    return normalized


def normalize_description(text: str) -> str:
    """Collapse whitespace runs; used as the Big-DAG dedup key"""
    return " ".join(text.split())


def validate_port(port: int) -> bool:
    """True for a usable TCP port number"""
    return isinstance(port, int) and not isinstance(port, bool) and 1 <= port <= 65535


def parse_address(address: str) -> Tuple[str, int]:
    """
    Parse "host:port" into a (host, port) tuple

    Args:
        address: Address string, host part may be empty (defaults to 127.0.0.1)

    Returns:
        Tuple of (host, port)

    Raises:
        ValueError: If the port is missing or out of range
    """
    host, sep, port_text = address.strip().rpartition(':')
    if not sep:
        raise ValueError(f"address '{address}' must look like host:port")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"address '{address}' has a non-numeric port")
    if not validate_port(port):
        raise ValueError(f"port {port} is outside 1-65535")
    return host or "127.0.0.1", port


def sanitize_text(text: str, max_length: int = 1000) -> str:
    """
    Sanitize operator input text (goals, world statements, task descriptions)

    Args:
        text: Text to sanitize
        max_length: Maximum allowed length

    Returns:
        Sanitized text
    """
    if not text:
        return ""

    # Remove leading/trailing whitespace
    text = text.strip()

    # Truncate if too long
    if len(text) > max_length:
        text = text[:max_length]

    # Control characters would break the line-oriented wire protocol
    text = re.sub(r'[\x00-\x1f\x7f]+', ' ', text)

    return text.strip()


def parse_choice(value: str, enum_cls):
    """
    Map a CLI spelling ("per-goal", "round-robin") onto an enum member

    Raises:
        ValueError: If no member matches
    """
    key = value.strip().lower().replace('-', '_')
    for member in enum_cls:
        if member.value == key:
            return member
    choices = ", ".join(m.value.replace('_', '-') for m in enum_cls)
    raise ValueError(f"'{value}' is not one of: {choices}")
