import pytest


class AcceptanceReport:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self):
        self.lines = []

    def record(self, criterion: int, name: str, passed: bool, detail: str = ""):
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        self.lines.append(f"criterion {criterion} [{name}]: {status}{suffix}")


@pytest.fixture(scope="session")
def acceptance_report(request):
    report = AcceptanceReport()
    request.config._acceptance_report = report
    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = getattr(config, "_acceptance_report", None)
    if report and report.lines:
        terminalreporter.section("acceptance criteria")
        for line in report.lines:
            terminalreporter.write_line(line)
