import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mrp.model import ModelSpec, survey_data
from mrp.replication.simulate import SyntheticConfig, simulate_survey, synthetic_cell_table

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def table():
    return synthetic_cell_table(0)


@pytest.fixture(scope="session")
def spec():
    return ModelSpec.default()


@pytest.fixture(scope="session")
def sim2000(table, spec):
    """n=2000 survey from the default truth, with its collapsed binomial data."""
    data, truth = simulate_survey(SyntheticConfig(n=2000, seed=11, truth_seed=3), table, spec)
    return data, truth, survey_data(data, spec, table.state_share)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """record(k, ok, detail): collects one summary line per acceptance criterion."""
    def record(k, ok, detail):
        ACCEPTANCE.append((k, ok, detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
