import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m is None or rep.when not in ("call", "setup"):
                continue
            n = int(m.group(1))
            ok = outcome == "passed"
            rows[n] = rows.get(n, True) and ok
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(rows):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if rows[n] else 'FAIL'}")

