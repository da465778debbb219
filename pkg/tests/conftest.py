import socket

import pytest
from hypothesis import HealthCheck, settings

from logpurge.embedding import SequenceEmbedder
from logpurge.engine import LogPurge
from logpurge.evaluator import Evaluator
from logpurge.synth import DEFAULT, RESIDUAL_HEAVY, SynthConfig, generate, split

settings.register_profile("logpurge", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("logpurge")

# Acceptance lines collected by test_acceptance, echoed in the terminal summary.
ACCEPTANCE_LINES = {}

# Every outbound connection attempt made during the session.
NETWORK_ATTEMPTS = []


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """Refuse sockets for the whole session; mocked HTTP transports never open one."""
    real = socket.socket.connect

    def refuse(self, address):
        NETWORK_ATTEMPTS.append(address)
        raise OSError(f"network disabled in tests: {address!r}")

    socket.socket.connect = refuse
    yield
    socket.socket.connect = real


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_sequences=600, seed=3))


@pytest.fixture(scope="session")
def default_corpus():
    return generate(DEFAULT)


@pytest.fixture(scope="session")
def residual_run():
    """Residual-heavy corpus, a held-out test split, and one full fit.

    ``stage1_train_set_`` is exactly what a Stage-2-disabled run selects, so a
    single fit serves both arms of the ablation.
    """
    train, test = split(generate(RESIDUAL_HEAVY), 0.2, seed=0)
    X = SequenceEmbedder().fit(train.sequences).transform(train.sequences)
    est = LogPurge(Evaluator(template_texts=train.template_texts)).fit(X, train.sequences)
    return train, test, X, est
