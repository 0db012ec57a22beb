import numpy as np
import pytest
import torch

torch.set_num_threads(1)
torch.use_deterministic_algorithms(True)


@pytest.fixture(scope="session")
def blobs():
    from nidsgan.flows import SyntheticSpec, synthetic_dataset

    return synthetic_dataset(SyntheticSpec(n_features=12, class_counts=(300, 300), separation=4.0, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import helpers

    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
