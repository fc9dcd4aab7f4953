"""Collects the outcome of every acceptance check and prints one line per
criterion at the end of the session."""

from __future__ import annotations

CRITERIA = {
    1: "gradient suite",
    2: "chain DQN reaches Q*",
    3: "forgetting reproduction",
    4: "GAN mixing statistics",
    5: "EWC algebra",
    6: "Fisher overlap",
    7: "memory scaling",
    8: "determinism and resume",
}

_outcomes: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion n")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        ok = call.excinfo is None
        detail = getattr(item, "criterion_detail", "")
        _outcomes.setdefault(marker.args[0], []).append((item.name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n} ({name}): NOT RUN")
            continue
        ok = all(r[1] for r in results)
        details = "; ".join(r[2] for r in results if r[2])
        tr.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'}"
                      + (f"  [{details}]" if details else ""))
