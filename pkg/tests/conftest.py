import numpy as np
import pytest
import torch

from vawsvc.features import FeatureTrack

torch.set_num_threads(1)


def random_track(rng, n_frames=None, sp_dim=513, singer_id=None, voiced_fraction=0.7):
    n = int(rng.integers(0, 40)) if n_frames is None else n_frames
    voiced = rng.random(n) < voiced_fraction
    f0 = np.where(voiced, rng.uniform(60, 900, n), 0.0).astype(np.float32)
    sp = (rng.random((n, sp_dim)) ** 3 * 1e-2 + 1e-9).astype(np.float32)
    ap = rng.random((n, sp_dim)).astype(np.float32)
    return FeatureTrack(16000, 5000, f0, sp, ap, singer_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance verdicts ------------------------------------------------------------

VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL/SKIP line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        word = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"ACCEPTANCE {number}: {word}  {detail}"
        VERDICTS.append(line)
        print(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
