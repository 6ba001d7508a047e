import numpy as np
import pytest

from mvlm.decoder import DecoderConfig
from mvlm.pipeline import model_from_weights
from mvlm.projector import ldp_spec
from mvlm.vision import TOY_VISION
from mvlm.weights import ModelConfig, init_random

TOY = DecoderConfig(num_blocks=2, dim=64, num_heads=4, context_length=128, vocab_size=512)
TOY_VLM = ModelConfig(TOY, TOY_VISION, ldp_spec(TOY_VISION.embed_dim, TOY.dim))

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_weights():
    return init_random(TOY_VLM, seed=11)


@pytest.fixture(scope="session")
def toy_model(toy_weights):
    return model_from_weights(toy_weights)


@pytest.fixture(scope="session")
def toy_image():
    return np.random.default_rng(5).uniform(-1, 1, (84, 84, 3)).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
