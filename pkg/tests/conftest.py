from __future__ import annotations

import sys
from pathlib import Path

import pytest

from recnet.backends.mock import MockBackend
from recnet.errors import BackendUnavailable
from recnet.text import set_stopwords

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

sys.path.insert(0, str(Path(__file__).resolve().parent))

# Filled by the acceptance tests, printed once at the end of the session.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


class FaultyBackend(MockBackend):
    """Mock backend that raises BackendUnavailable on the n-th call of one prompt kind.

    Counting starts only once ``armed`` is set, so construction-time calls
    (initial router summaries) can be excluded.
    """

    def __init__(self, fail_kind: str | None = None, fail_at: int = 1, **kw) -> None:
        super().__init__(**kw)
        self.fail_kind = fail_kind
        self.fail_at = fail_at
        self.armed = False
        self.seen = 0
        self.fired = False

    def _count(self, kind: str) -> None:
        if self.armed and kind == self.fail_kind:
            self.seen += 1
            if self.seen == self.fail_at:
                self.fired = True
                raise BackendUnavailable(f"injected failure at {kind} #{self.fail_at}")
        super()._count(kind)


@pytest.fixture(autouse=True)
def _restore_stopwords():
    yield
    set_stopwords(None)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
