from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# one line per acceptance criterion, printed after the run
CRITERIA = {}


def record_criterion(number, ok, detail):
    CRITERIA[number] = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(CRITERIA[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
