import numpy as np
import pytest

from toxic_spans.dataio import gen_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small planted corpus sharing one vocabulary between train and dev."""
    train = gen_synthetic(5, 60, vocab_size=60, vocab_seed=5)
    dev = gen_synthetic(6, 20, vocab_size=60, vocab_seed=5)
    return train, dev


SMALL_DIMS = dict(word_dim=6, char_dim=4, char_hidden=3, lstm_hidden=5)
