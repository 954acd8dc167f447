"""Collects one pass/fail line per acceptance criterion."""

_RESULTS = {}


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    _RESULTS[number] = line
    print(line)
    return line


def summary_lines():
    return [_RESULTS[k] for k in sorted(_RESULTS)]
