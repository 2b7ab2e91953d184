import re


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of the run."""
    tr = terminalreporter
    found = []
    for key in ("passed", "failed", "error"):
        for rep in tr.stats.get(key, []):
            if getattr(rep, "when", "call") != "call" and key != "error":
                continue
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)",
                          rep.nodeid)
            if m:
                verdict = "PASS" if key == "passed" else "FAIL"
                found.append((int(m.group(1)), m.group(2), verdict))
    if found:
        tr.write_sep("-", "acceptance criteria")
        for n, name, verdict in sorted(found):
            tr.write_line(f"criterion {n}: {verdict}  {name.replace('_', ' ')}")
