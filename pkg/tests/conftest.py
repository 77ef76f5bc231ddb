import numpy as np
import pytest
import torch

from edgemae.train import set_deterministic

DATA = __import__("pathlib").Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _deterministic():
    set_deterministic(1)
    yield


@pytest.fixture
def rand_image():
    rng = np.random.default_rng(0)
    return rng.random((64, 64)).astype(np.float32)


@pytest.fixture
def tiny_dataset(tmp_path):
    from edgemae.phantom import generate_dataset
    return generate_dataset(7, 4, 2, 64, tmp_path / "data")


def torch_rand(*shape, seed=0, dtype=torch.float32):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g, dtype=dtype)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
