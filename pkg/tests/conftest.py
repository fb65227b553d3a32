import numpy as np
import pytest

from cramer_attack import _backend
from cramer_attack.victim.corpus import synth_corpus
from cramer_attack.victim.train import TrainConfig, train_victim

KERNELS = ("ctc_alpha_beta", "levinson_durbin", "edit_distance_table", "overlap_add")


@pytest.fixture(params=_backend.available())
def kernels(request, monkeypatch):
    """Route every kernel call through one backend for the test's duration."""
    mod = _backend.get(request.param)
    for name in KERNELS:
        monkeypatch.setattr(_backend, name, getattr(mod, name))
    return request.param


@pytest.fixture(scope="session")
def corpus():
    return synth_corpus()


@pytest.fixture(scope="session")
def victim(corpus):
    return train_victim(corpus, TrainConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
