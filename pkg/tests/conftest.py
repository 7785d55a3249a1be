import json
import time

import pytest
from hypothesis import HealthCheck, settings

from apptraffic import cli

settings.register_profile(
    "repo", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")

ACCEPTANCE = []


def record(number, passed, detail):
    """Acceptance verdict line, printed in the terminal summary."""
    ACCEPTANCE.append((number, "PASS" if passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{verdict} criterion {number}: {detail}")


SMALL_SCENARIO = {"n_stations": 30, "grid": [6, 8], "seed": 3}


def write_config(root, scenario, **extra):
    doc = {"scenario": scenario, "out": "run", "seed": 0, "threads": 1, **extra}
    path = root / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def run_stages(config, stages, *flags):
    """Run stages in-process; returns {stage: seconds}. Fails on a non-zero exit."""
    times = {}
    for stage in stages:
        t0 = time.perf_counter()
        code = cli.main([stage, "--config", str(config), *flags])
        times[stage] = time.perf_counter() - t0
        assert code == 0, f"stage {stage} exited {code}"
    return times


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """Small planted scenario run through every stage."""
    root = tmp_path_factory.mktemp("small")
    config = write_config(root, {"preset": "planted", **SMALL_SCENARIO},
                          tasks={"targets": ["median_income"],
                                 "selectors": ["Cumulative", "RCA", "TWS", "All", "Census"]})
    run_stages(config, ["all"])
    return root
