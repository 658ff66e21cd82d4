import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(REPORT):
        terminalreporter.write_line(REPORT[k])
