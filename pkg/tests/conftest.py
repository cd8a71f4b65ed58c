import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


@pytest.fixture(scope="session")
def paper_split():
    """40000 / 10000 split of a 50000-record corpus."""
    from gemsmpc.engine import generate_dataset

    return generate_dataset(50000, seed=0).split(40000)


@pytest.fixture(scope="session")
def paper_model(paper_split):
    from gemsmpc.wae import TrainConfig, wae_train

    return wae_train(paper_split[0], TrainConfig())


@pytest.fixture(scope="session")
def acceptance_lines(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
