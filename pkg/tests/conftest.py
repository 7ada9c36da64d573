import pytest

from biralab.lm import MarkovModelSpec, SamplingConfig, UniformModel


@pytest.fixture(scope="session")
def markov7():
    return MarkovModelSpec(vocab_size=256, seed=7).build()


@pytest.fixture(scope="session")
def markov0():
    return MarkovModelSpec(vocab_size=256, seed=0).build()


@pytest.fixture
def uniform256():
    return UniformModel(256)


@pytest.fixture
def plain_sampling():
    return SamplingConfig(temperature=1.0, top_p=1.0, seed=0)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
