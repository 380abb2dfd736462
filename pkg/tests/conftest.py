import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the one-line-per-criterion results from the acceptance gate."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
