import logging

import pytest

from toxic_spans.config import RunConfig, load_config, parse_config
from toxic_spans.span_codec import TagScheme
from toxic_spans.training import ConfigError

FULL = """
[run]
architecture = biaffine
seed = 13
train = data/train.csv
dev = /abs/dev.csv

[tagger]
Scheme = BIO
CRF = false
BiLSTM size = 32
BiLSTM layer = 2
Optimiser = Adam
Learning rate = [0.01, 0.0001]
Char BiLSTM layers = 1

[biaffine]
fastText embedding size = 50
BiLSTM size = 20
FFNN size = 15
FFNN dropout = 0.1
Max span width = none
Max steps = 100
Patience = 0
BERT size = 768
"""


def test_parse_full_config(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        cfg = parse_config(FULL, tmp_path)
    assert cfg.architecture == "biaffine" and cfg.seed == 13
    assert cfg.train_path == tmp_path / "data/train.csv"
    assert str(cfg.dev_path) == "/abs/dev.csv"
    assert cfg.tagger.scheme is TagScheme.BIO and not cfg.tagger.use_crf
    assert (cfg.tagger.lstm_hidden, cfg.tagger.lstm_layers) == (32, 2)
    assert cfg.schedule.optimizer == "adam" and cfg.schedule.initial_lr == 0.01
    assert cfg.schedule.min_lr == 0.0001
    b = cfg.biaffine
    assert (b.word_dim, b.lstm_hidden, b.ffnn_size, b.ffnn_dropout, b.max_width) == (50, 20, 15, 0.1, None)
    assert cfg.biaffine_schedule.max_steps == 100 and cfg.biaffine_schedule.patience == 0
    assert "BERT size" in caplog.text


def test_overrides_propagate_seed_and_flags():
    cfg = RunConfig().apply_overrides(seed=5, scheme="bio", no_crf=True, no_preprocess=True)
    assert cfg.tagger.seed == cfg.biaffine.seed == 5
    assert cfg.tagger.scheme is TagScheme.BIO and not cfg.tagger.use_crf
    assert not cfg.biaffine.use_preprocessing


@pytest.mark.parametrize(
    "text",
    [
        "[tagger]\nNo such key = 1\n",
        "[tagger]\nBiLSTM size = big\n",
        "[tagger]\nChar BiLSTM layers = 2\n",
        "[other]\nx = 1\n",
        "[run]\nbogus = 1\n",
        "[run]\nseed = x\n",
        "not an ini file",
        "[tagger]\nScheme = bilou\n",
    ],
)
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_invalid_combinations():
    with pytest.raises(ConfigError):
        RunConfig().apply_overrides(arch="biaffine", no_crf=True)
    with pytest.raises(ConfigError):
        RunConfig().apply_overrides(arch="biaffine", scheme="io")
    with pytest.raises(ConfigError):
        RunConfig().apply_overrides(arch="transformer")
    with pytest.raises(ConfigError):
        parse_config("[tagger]\nOptimiser = rmsprop\n").apply_overrides()
    with pytest.raises(ConfigError):
        parse_config("[tagger]\nMin learning rate = 1\n").apply_overrides()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")
