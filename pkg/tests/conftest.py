import pytest

from powerbench.valframe import TESTS, default_scenario

# criterion number -> (status, title, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(scope="session")
def default_cfg():
    return default_scenario()


@pytest.fixture(scope="session")
def noiseless_cfg(default_cfg):
    return default_cfg.with_noise(0.0)


@pytest.fixture(scope="session")
def noiseless_reports(noiseless_cfg):
    return {name: fn(noiseless_cfg) for name, fn in TESTS.items()}


@pytest.fixture(scope="session")
def noisy_reports(default_cfg):
    return {name: fn(default_cfg) for name, fn in TESTS.items()}


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        line = f"criterion {n:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
