import numpy as np
import pytest

import emosup as es


@pytest.fixture(scope="session")
def default_world():
    return es.build_synthetic_world(1)


@pytest.fixture(scope="session")
def default_suite(default_world):
    return es.synthetic_suite(default_world)


@pytest.fixture(scope="session")
def default_manifest(default_world):
    return es.generate_synthetic_corpus(default_world, 3)


@pytest.fixture(scope="session")
def reference_pools():
    return es.load_reference_pools()


@pytest.fixture(scope="session")
def trained_checkpoint(default_manifest, reference_pools, default_suite):
    ckpt, curve = es.pretrain_alignment(default_manifest, reference_pools,
                                        default_suite, es.TrainConfig(seed=1))
    return ckpt, curve


@pytest.fixture(scope="session")
def noise_free_world():
    return es.build_synthetic_world(11, es.WorldConfig(noise_sigma=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
