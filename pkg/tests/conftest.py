import acceptance_record


def pytest_terminal_summary(terminalreporter):
    if acceptance_record.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_record.LINES:
            terminalreporter.write_line(line)
