from __future__ import annotations

import re
from pathlib import Path

import numpy as np
import pytest

from strokenet.dataset import extract_all
from strokenet.synth import GeneratorConfig, generate_cohort

ROOT = Path(__file__).resolve().parents[1]


def _squash(text: str) -> str:
    return re.sub(r"\s+", " ", text)


@pytest.fixture(scope="session")
def paper_text() -> str:
    """Whitespace-normalized text of the source manuscript shipped with the repo."""
    path = ROOT / "paper.md"
    if not path.exists():
        pytest.skip("paper.md not available")
    return _squash(path.read_text())


@pytest.fixture(scope="session")
def small_cohort():
    """6 AD + 6 HC subjects on three tasks, with extracted features."""
    cfg = GeneratorConfig(seed=7, n_ad=6, n_hc=6, tasks=(1, 2, 3))
    subjects, recs = generate_cohort(cfg)
    return cfg, subjects, recs, extract_all(recs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request) -> dict:
    """Criterion number -> (title, passed, detail); echoed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE_KEY, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log):
        title, passed, detail = log[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {title}: {detail}")
