from __future__ import annotations

import numpy as np
import pytest

from fairglmm.data_model import build_dataset
from fairglmm.ingest import BANK_SCHEMA, parse_schema

BANK_COLUMNS = [s.name for s in parse_schema(BANK_SCHEMA)]

LEVELS = {
    "job": ["admin.", "blue-collar", "technician", "services", "management", "retired", "unknown"],
    "marital": ["married", "single", "divorced", "unknown"],
    "education": ["basic.4y", "high.school", "university.degree", "professional.course", "unknown"],
    "default": ["no", "unknown", "yes"],
    "housing": ["yes", "no", "unknown"],
    "loan": ["no", "yes", "unknown"],
    "contact": ["cellular", "telephone"],
    "month": ["mar", "apr", "may", "jun", "jul", "aug", "oct", "nov"],
    "day_of_week": ["mon", "tue", "wed", "thu", "fri"],
    "poutcome": ["nonexistent", "failure", "success"],
}


def write_bank_csv(path, n_rows: int = 1500, seed: int = 0) -> None:
    """Synthetic file in the bank-marketing layout (';' delimited, quoted header)."""
    rng = np.random.default_rng(seed)
    cols = {name: rng.choice(levels, size=n_rows) for name, levels in LEVELS.items()}
    cols["age"] = rng.integers(18, 90, size=n_rows)
    cols["duration"] = rng.exponential(250.0, size=n_rows).astype(int)
    cols["campaign"] = rng.integers(1, 10, size=n_rows)
    cols["pdays"] = np.where(rng.random(n_rows) < 0.9, 999, rng.integers(0, 20, size=n_rows))
    cols["previous"] = rng.integers(0, 3, size=n_rows)
    cols["emp.var.rate"] = rng.choice([-1.8, -0.1, 1.1, 1.4], size=n_rows)
    cols["cons.price.idx"] = rng.normal(93.5, 0.5, size=n_rows).round(3)
    cols["cons.conf.idx"] = rng.normal(-40.0, 4.0, size=n_rows).round(1)
    cols["euribor3m"] = rng.uniform(0.6, 5.0, size=n_rows).round(3)
    cols["nr.employed"] = rng.choice([4963.6, 5099.1, 5191.0, 5228.1], size=n_rows)
    eta = -3.0 + 0.006 * cols["duration"] - 0.8 * (cols["housing"] == "yes") + 0.5 * (cols["marital"] == "single")
    cols["y"] = np.where(rng.random(n_rows) < 1 / (1 + np.exp(-eta)), "yes", "no")
    with open(path, "w") as fh:
        fh.write(";".join(f'"{c}"' for c in BANK_COLUMNS) + "\n")
        for i in range(n_rows):
            fh.write(";".join(
                f'"{cols[c][i]}"' if c in LEVELS or c == "y" else str(cols[c][i]) for c in BANK_COLUMNS
            ) + "\n")


@pytest.fixture
def bank_csv(tmp_path):
    path = tmp_path / "bank.csv"
    write_bank_csv(path)
    return path


def random_dataset(rng, n_rows=30, p=2, n_strata=3, scale=1.0):
    """Small random dataset with every stratum and both sensitive groups present."""
    x = rng.normal(size=(n_rows, p)) * scale
    s = np.tile([0.0, 1.0], n_rows // 2 + 1)[:n_rows]
    rng.shuffle(s)
    strata = np.tile(np.arange(1, n_strata + 1), n_rows // n_strata + 1)[:n_rows]
    y = (rng.random(n_rows) < 0.5).astype(float)
    return build_dataset(x, y, strata, s)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
