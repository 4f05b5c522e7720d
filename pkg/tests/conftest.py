from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from escrules.features import BinarizationSpec

DATA = Path(__file__).parent / "data"


def case_study_raw(n_rows: int = 1198, seed: int = 0) -> pd.DataFrame:
    """A complete raw table in the shape of the case-study data set."""
    rng = np.random.default_rng(seed)
    raw = {
        "mean_age": rng.uniform(15, 75, n_rows).round(1),
        "cigarettes_per_day": rng.uniform(1, 49, n_rows).round(1),
        "percent_female": np.where(rng.random(n_rows) < 0.1, 100.0, rng.uniform(20, 80, n_rows).round(1)),
        "follow_up_weeks": rng.choice([4, 12, 26, 52, 104], n_rows).astype(float),
        "session_count": rng.integers(1, 20, n_rows).astype(float),
    }
    for i in range(1, 57):
        raw[f"component_{i:02d}"] = (rng.random(n_rows) < 0.3).astype(float)
    return pd.DataFrame(raw)


@pytest.fixture(scope="session")
def case_study():
    return case_study_raw(), BinarizationSpec.load(DATA / "case_study_spec.json")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
