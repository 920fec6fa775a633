"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number: int, passed: bool, detail: str) -> bool:
    LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(LINES[number])
    return passed
