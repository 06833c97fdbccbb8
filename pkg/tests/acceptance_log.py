"""Collects one verdict line per acceptance criterion."""

_LINES: dict[int, str] = {}


def record(number: int, title: str, passed, detail: str = "") -> None:
    verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"[{verdict}] criterion {number:2d}: {title}"
    if detail:
        line += f" -- {detail}"
    _LINES[number] = line
    print(line, flush=True)


def lines() -> list[str]:
    return [_LINES[k] for k in sorted(_LINES)]
