import json
from typing import Any, List, Sequence


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value) or "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value)


def render_table(rows: Sequence[dict], columns: List[str]) -> str:
    """
    Aligned plain-text table

    Args:
        rows: Row dicts; missing keys render as "-"
        columns: Keys to show, in order; also used as headers

    Returns:
        Header, separator and one line per row; "(none)" for no rows
    """
    if not rows:
        return "(none)"
    cells = [[_cell(row.get(column)) for column in columns] for row in rows]
    widths = [max(len(column), *(len(r[i]) for r in cells)) for i, column in enumerate(columns)]
    header = "  ".join(c.upper().ljust(w) for c, w in zip(columns, widths)).rstrip()
    separator = "  ".join("-" * w for w in widths)
    body = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join([header, separator, *body])


def render_records(rows: Sequence[dict]) -> str:
    """One JSON object per line with sorted keys"""
    return "\n".join(json.dumps(row, sort_keys=True, ensure_ascii=False) for row in rows)
