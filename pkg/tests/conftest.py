import warnings

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(num: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[num] = (bool(passed), detail)
    line = f"{'PASS' if passed else 'FAIL'} criterion {num}: {detail}"
    print(line, flush=True)
    return bool(passed)


def pytest_configure(config):
    warnings.filterwarnings("ignore", message=".*below the generating model.*")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {num}: {detail}")
