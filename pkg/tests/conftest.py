import pytest

from qorkd.synthgen import SynthSpec, generate
from qorkd.training import TrainConfig, load_corpus, pretrain_teacher

TINY = SynthSpec(n_designs=40, min_nodes=4, max_nodes=12, embed_dim=8, seed=3)


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny")
    generate(TINY, d)
    return d


@pytest.fixture(scope="session")
def tiny_corpus(tiny_dir):
    return load_corpus(tiny_dir)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_corpus):
    cfg = TrainConfig(batch_size=16, max_epochs=3, optimizer="momentum", seed=0)
    return pretrain_teacher(tiny_corpus, cfg).checkpoint


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
