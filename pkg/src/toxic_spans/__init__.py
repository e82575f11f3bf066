"""Toxic span detection: BiLSTM-CRF tagging and biaffine span scoring over character offsets."""

from .biaffine import BiaffineConfig, BiaffineModel, BiaffineSchedule, train_biaffine
from .dataio import TsdRecord, gen_synthetic, load_checkpoint, read_tsd_csv, save_checkpoint, write_predictions
from .metrics import corpus_f1, post_f1
from .span_codec import OverlapPolicy, TagScheme, TokenSpan
from .tagger import Tagger, TaggerConfig, TrainSchedule, train
from .text_prep import normalize, tokenize

__version__ = "0.1.0"
