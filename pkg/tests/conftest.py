import pytest
import torch

from dsmap.model import DSMAP, ModelConfig

torch.set_num_threads(1)

ACCEPTANCE_LINES = []


def small_config(**kw) -> ModelConfig:
    base = dict(image_size=32, base_channels=8, n_gen_res=2, n_res_shared=1, n_res_mapping=1,
                mlp_dim=32, seed=0)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_model():
    return DSMAP(small_config())


@pytest.fixture
def images():
    def make(batch=2, size=32, seed=0):
        g = torch.Generator().manual_seed(seed)
        return torch.rand(batch, 3, size, size, generator=g) * 2 - 1
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
