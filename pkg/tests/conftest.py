import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_rows(path, rows):
    path.write_text("".join(" ".join(str(v) for v in r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def acquisition_files(tmp_path):
    """A tiny well-formed signal/label pair: 3 s of data, one movement burst."""
    t = np.round(np.arange(300) / 100, 2)
    rng = np.random.default_rng(7)
    emg = rng.normal(0, 0.01, (300, 10))
    emg[100:200] *= 20
    labels = np.where((t >= 1.0) & (t < 2.0), 3, 0)
    sig = write_rows(tmp_path / "acq_02_emg.txt", [[f"{ti:.2f}", *row, 0, 0, 0, 0, 0, 0] for ti, row in zip(t, emg)])
    lab = write_rows(tmp_path / "acq_02_labels.txt", [[f"{ti:.2f}", li] for ti, li in zip(t, labels)])
    return sig, lab


@pytest.fixture(scope="session")
def zero_drift_dataset(tmp_path_factory):
    """Full-size synthetic dataset without session drift, written once per test session."""
    from semgsvm.cli import main

    out = tmp_path_factory.mktemp("zero_drift")
    assert main(["--log-level", "warning", "synth", "--out-dir", str(out), "--no-drift"]) == 0
    return out


@pytest.fixture(scope="session")
def repro_run(zero_drift_dataset, tmp_path_factory):
    """One full ``repro`` over the zero-drift dataset; returns (out_dir, exit code, seconds)."""
    import time

    from semgsvm.cli import main

    out = tmp_path_factory.mktemp("repro_a")
    t0 = time.perf_counter()
    code = main(["--log-level", "warning", "repro", "--data-dir", str(zero_drift_dataset), "--out-dir", str(out)])
    return out, code, time.perf_counter() - t0


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
