import sys
from pathlib import Path

# Worker processes unpickle test stubs by module name.
sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    # Acceptance verdicts, one line per criterion, in run order.
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
