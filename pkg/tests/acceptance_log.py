"""Shared PASS/FAIL record for the acceptance suite, printed at session end."""

RESULTS = []


def record(number, title, ok, detail=""):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  ({detail})"
    RESULTS.append((number, line))
    print(line)
    return ok
