"""Collects one PASS/FAIL line per acceptance criterion."""

LINES: list[str] = []


def report(number: int, title: str, ok: bool | None, detail: str = "") -> None:
    """``ok=None`` records a criterion that could not run (SKIP)."""
    status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
    line = f"CRITERION {number:>2} {status}: {title}" + (f" ({detail})" if detail else "")
    LINES.append(line)
    print(line)
