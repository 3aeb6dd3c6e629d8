import numpy as np
import pytest

from scgan.core_types import LabeledBatch, LossWeights, RunConfig, UnlabeledBatch
from scgan.networks import init_parameters
from scgan.pseudo_labeler import assign_pseudo_labels


def tiny_config(seed: int = 7, **overrides) -> RunConfig:
    """Sub-500-parameter setup used by the gradient checks."""
    base = dict(
        n_classes=2,
        latent_dim=4,
        image_shape=(1, 1, 2),
        loss_weights=LossWeights(10.0, 1.0, 0.2),
        learning_rate=0.01,
        momentum=0.9,
        pseudo_threshold=0.5,
        pretrain_steps=0,
        train_steps=0,
        batch_size=4,
        seed=seed,
        hidden_dim=6,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def params(config):
    return init_parameters(config, config.seed)


def random_batches(config, seed=3):
    rng = np.random.default_rng(seed)
    batch_s = LabeledBatch(
        rng.uniform(0, 1, (config.batch_size, config.pixel_dim)),
        rng.integers(0, config.n_classes, config.batch_size),
    )
    batch_t = UnlabeledBatch(rng.uniform(0, 1, (config.batch_size, config.pixel_dim)))
    return batch_s, batch_t


@pytest.fixture
def batches(config):
    return random_batches(config)


@pytest.fixture
def pseudo(params, batches, config):
    return assign_pseudo_labels(params, batches[1], config.pseudo_threshold)
