import pytest

from streamdec.core import Vocab
from streamdec.stream_sim import StreamingConfig, ToyModel, chunked_encode


@pytest.fixture
def vocab5():
    return Vocab.build(list("abcde"))


@pytest.fixture
def vocab2():
    return Vocab.build(list("ab"))


@pytest.fixture
def toy(vocab5):
    return ToyModel(vocab5, seed=1)


@pytest.fixture
def toy_utt(toy):
    raw, labels = toy.synth_utterance(8, rng=3)
    enc = chunked_encode(raw, StreamingConfig(n_c=4, n_r=2), toy)
    return raw, labels, enc


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
