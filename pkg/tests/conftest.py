import logging

import pytest


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings():
    logging.getLogger("scadabridge.pinn.train").setLevel(logging.ERROR)
    yield


@pytest.fixture(scope="session")
def benign_run():
    from scadabridge.sim import ScenarioConfig, simulate

    return simulate(ScenarioConfig(seed=1, n_ops=5))


@pytest.fixture(scope="session")
def benign_model(benign_run):
    from scadabridge.constraints import build_constraint_model

    return build_constraint_model(benign_run.operations)


# ------------------------------------------------------- acceptance summary

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, name = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    prev = _CRITERIA.get(n)
    ok = rep.passed and (prev is None or prev[1])
    _CRITERIA[n] = (name, ok, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
