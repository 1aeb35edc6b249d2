import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if not acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_log.lines():
        terminalreporter.write_line(line)
