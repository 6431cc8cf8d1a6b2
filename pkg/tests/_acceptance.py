"""Outcome store for the acceptance suite, shared with ``conftest``."""

ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store an acceptance outcome and echo it as one line."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed
