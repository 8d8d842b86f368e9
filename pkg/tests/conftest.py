import pytest
import torch

from mvreal.encoders import EncoderConfig, encoder_registry


@pytest.fixture(scope="session", autouse=True)
def _torch_threads():
    torch.set_num_threads(4)


@pytest.fixture(scope="session")
def small_encoder_config():
    return EncoderConfig(m=32, patch_size=8)


@pytest.fixture(scope="session")
def global_encoder(small_encoder_config):
    return encoder_registry("toy-global", small_encoder_config)


@pytest.fixture(scope="session")
def patch_encoder(small_encoder_config):
    return encoder_registry("toy-patch", small_encoder_config)
