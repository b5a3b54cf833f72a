import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        verdict, title, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"[{verdict}] criterion {n:>2}: {title}  ({detail})")
