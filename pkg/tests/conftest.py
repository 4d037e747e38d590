"""Shared pytest plumbing.

The acceptance tests record one verdict line each; printing them from a
terminal-summary hook keeps them visible even though passing tests have
their stdout captured and discarded.
"""

ACCEPTANCE_VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.line(line)
