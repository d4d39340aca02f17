import sys

N_CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None:
        return
    ran = {int(r.nodeid.split("::test_c")[1][:2])
           for key in ("passed", "failed", "error")
           for r in terminalreporter.stats.get(key, [])
           if "test_acceptance.py::test_c" in r.nodeid and r.when == "call"}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ran):
        line = module.RESULTS.get(k, f"FAIL criterion {k:2d}: did not complete (see traceback above)")
        terminalreporter.write_line(line)
    skipped = N_CRITERIA - len(ran)
    if skipped:
        terminalreporter.write_line(f"({skipped} criteria not selected in this run)")
