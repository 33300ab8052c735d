"""Per-criterion outcomes collected by the acceptance tests.

Each criterion may be checked by several tests; the summary line is PASS
only if every recorded part passed.
"""

RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion: int, part: str, ok: bool, detail: str) -> bool:
    RESULTS.setdefault(criterion, []).append((part, bool(ok), detail))
    return bool(ok)


def summary_lines() -> list[str]:
    lines = []
    for crit in sorted(RESULTS):
        parts = RESULTS[crit]
        ok = all(p[1] for p in parts)
        body = "; ".join(f"{name} {'ok' if good else 'FAILED'} ({detail})" for name, good, detail in parts)
        lines.append(f"criterion {crit}: {'PASS' if ok else 'FAIL'} - {body}")
    return lines
