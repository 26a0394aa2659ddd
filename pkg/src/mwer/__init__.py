"""Minimum word error rate training for attention-based sequence-to-sequence
models, implemented from first principles at desk scale."""

from . import autodiff, checkpoint, data, decoding, experiments, losses, metrics, model, training
from .autodiff import Tape, Tensor, backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, TaskSpec, generate, load_dataset, save_dataset, split
from .decoding import Hypothesis, NBestList, beam_search, enumerate_all, sample_sequences
from .losses import (
    LossConfig,
    LossReport,
    ce_loss,
    composite_loss,
    expected_word_errors_exact,
    mwer_nbest_loss,
    mwer_sample_loss,
)
from .metrics import WordErrorStats, corpus_wer, to_words, word_errors
from .model import (
    ModelConfig,
    ModelParams,
    Utterance,
    Vocabulary,
    attend,
    decode_step,
    encode,
    sequence_logprob,
    teacher_forced_logprobs,
)
from .training import AdamConfig, MetricsRecord, TrainConfig, adam_step, train

__version__ = "0.1.0"
