"""Collects one verdict line per acceptance criterion for the terminal summary."""
import sys

LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    LINES.append(line)
    print(line, file=sys.stderr)
    return ok
