import numpy as np
import pytest

from posterior_score.dataset import CellRecord, EvaluationTable, FeatureId

HEADER = "model,image_id,cell_id,feature,true_value,samples\n"


def make_table(rows, model="m"):
    """rows: iterable of (image, cell, feature, true_value, samples)."""
    feats = {}
    recs = []
    for img, cell, f, y, s in rows:
        feats.setdefault(f, FeatureId(f))
        recs.append(CellRecord(img, cell, feats[f], float(y), tuple(float(v) for v in s)))
    return EvaluationTable(model, tuple(recs))


@pytest.fixture
def write_csv(tmp_path):
    def _write(lines, name="t.csv"):
        p = tmp_path / name
        p.write_text(HEADER + "".join(line + "\n" for line in lines), encoding="utf-8")
        return p
    return _write


@pytest.fixture
def gaussian_table():
    rng = np.random.default_rng(11)
    n, k = 60, 40
    x = rng.normal(size=n)
    y = x + 0.5 * rng.normal(size=n)
    s = x[:, None] + 0.5 * rng.normal(size=(n, k))
    return make_table((f"i{i}", "c0", "F1", y[i], s[i]) for i in range(n))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
