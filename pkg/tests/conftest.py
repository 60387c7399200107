import contextlib

import numpy as np
import pytest
import torch

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


class Criterion:
    """Collects the checks of one acceptance criterion into a single verdict line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.parts: list[tuple[str, bool, str]] = []

    def check(self, name: str, ok, detail: str = "") -> bool:
        self.parts.append((name, bool(ok), detail))
        return bool(ok)

    def line(self, error: BaseException | None = None) -> str:
        ok = error is None and bool(self.parts) and all(p[1] for p in self.parts)
        bits = [f"{n}{' ' + d if d else ''}{'' if good else ' [failed]'}" for n, good, d in self.parts]
        if error is not None:
            bits.append(f"error: {type(error).__name__}: {error}")
        return f"{'PASS' if ok else 'FAIL'} criterion {self.number:>2} ({self.title}): " + "; ".join(bits)


@pytest.fixture
def criterion(request, capsys):
    """``with criterion(n, title) as c: c.check(...)`` prints one PASS/FAIL line and asserts."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextlib.contextmanager
    def run(number: int, title: str):
        c = Criterion(number, title)
        try:
            yield c
        except Exception as exc:
            lines.append(c.line(exc))
            with capsys.disabled():
                print("\n" + lines[-1])
            raise
        lines.append(c.line())
        with capsys.disabled():
            print("\n" + lines[-1])
        assert lines[-1].startswith("PASS"), lines[-1]

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split("(")[0])):
            terminalreporter.write_line(line)
