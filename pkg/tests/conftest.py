import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zcurvemeta.evidence import default_model_space
from zcurvemeta.model import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def small_dataset(k: int = 30, seed: int = 3, mu: float = 0.25, tau: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    n = rng.integers(20, 121, k) / 2
    se = np.sqrt(2 / n)
    y = rng.normal(mu, np.sqrt(se**2 + tau**2))
    return Dataset.from_arrays(y, se, label=f"synthetic-{seed}")


@pytest.fixture(scope="session")
def space():
    return default_model_space()


@pytest.fixture(scope="session")
def data30():
    return small_dataset()


def spec_named(space, name):
    return space.specs[space.index(name)]


# acceptance criterion -> (passed, detail); printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ok, prev = ACCEPTANCE.get(criterion, (True, ""))
    ACCEPTANCE[criterion] = (ok and bool(passed), f"{prev}; {detail}" if prev else detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
