import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def desk_model():
    from ondevice_backdoor.training import desk_cnn
    return desk_cnn(seed=0)


@pytest.fixture(scope="session")
def desk_model_bytes(desk_model):
    from ondevice_backdoor.conversion import export_deployable
    return export_deployable(desk_model)


@pytest.fixture(scope="session")
def tiny_signs():
    from ondevice_backdoor.data import synthetic_signs
    return synthetic_signs(200, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_GENERATOR = dict(image_size=(16, 16, 3), epochs=4, perceptual_weight=5.0, ramp_start=0.5,
                      ramp_end=1.0, batch_size=32)


@pytest.fixture(scope="session")
def small_signs():
    from ondevice_backdoor.data import synthetic_signs
    return synthetic_signs(800, seed=5, size=16)


@pytest.fixture(scope="session")
def tiny_generator(small_signs):
    """A 16x16 generator trained for a few seconds: above chance, far from converged."""
    from ondevice_backdoor.stego import GeneratorTrainConfig, train_generator
    return train_generator(small_signs.images, GeneratorTrainConfig(**TINY_GENERATOR))


# one verdict line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
