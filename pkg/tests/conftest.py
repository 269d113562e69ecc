import numpy as np
import pytest

from diffmatte.net.model import DecoderConfig, MattingModel, ModelConfig


def tiny_config(n_d=4, n_f=8, stride=16, **kw) -> ModelConfig:
    return ModelConfig(decoder=DecoderConfig(n_d=n_d, n_f=n_f, feature_stride=stride), **kw)


@pytest.fixture
def tiny_model():
    return MattingModel(tiny_config(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
