import datetime as dt

import hypothesis
import numpy as np
import pytest

from tempcast import model as M
from tempcast.tensor import Rng

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

TINY = M.ModelConfig(
    window=6, conv_filters=(4, 4), kernel=2, lstm_units=3, lstm_depth=2,
    bilstm_units=3, dense_units=4, dropout_rate=0.2, seed=3,
)

# acceptance criteria report lines, printed at the end of the session
ACCEPTANCE = []


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def rng():
    return Rng(1234)


def write_series_csv(path, values, start=dt.date(2001, 1, 1), temp_column="temperature"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"date,{temp_column}\n")
        for i, v in enumerate(values):
            fh.write(f"{start + dt.timedelta(days=i)},{float(v)!r}\n")
    return path


@pytest.fixture
def synthetic_csv(tmp_path):
    gen = np.random.default_rng(0)
    t = np.arange(200)
    values = np.round(20 + 10 * np.sin(2 * np.pi * t / 365) + gen.normal(0, 1, t.size), 3)
    return write_series_csv(tmp_path / "synthetic.csv", values)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
