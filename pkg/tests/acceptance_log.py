"""Collects one verdict per acceptance criterion for the end-of-run summary."""

RESULTS = {}


def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
    RESULTS[number] = (title, passed, detail)
    print(format_line(number))
    return passed


def format_line(number: int) -> str:
    title, passed, detail = RESULTS[number]
    return f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"


def lines() -> list:
    return [format_line(k) for k in sorted(RESULTS)]
