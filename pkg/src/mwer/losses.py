"""Training criteria: cross-entropy, exact expected word errors on tiny
instances, the sampling approximation with a score-function gradient, the
N-best approximation with renormalized posteriors, and their interpolation
with cross-entropy.

All probability arithmetic stays in the log domain until the final
renormalization, which goes through a stabilized log-softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .decoding import Hypothesis, beam_search, default_max_len, enumerate_all, sample_sequences
from .errors import ConfigError, ContractError
from .metrics import to_words, word_errors
from .model import ModelParams, Utterance, encode, score_sequence, sum_tensors, teacher_forced_logprobs

CE = "ce"
MWER_SAMPLE = "mwer_sample"
MWER_NBEST = "mwer_nbest"
VARIANTS = (CE, MWER_SAMPLE, MWER_NBEST)


@dataclass(frozen=True)
class LossConfig:
    """Which criterion to train, and its knobs.

    ``ce_weight`` is the cross-entropy interpolation weight (the paper-style
    lambda); ``n`` is the sample count or beam size for the MWER variants.
    ``max_len`` bounds decoding and defaults to 2*T + 10 per utterance.
    """

    variant: str = CE
    n: int = 4
    ce_weight: float = 0.01
    max_len: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}, expected one of {VARIANTS}")
        if self.variant != CE and self.n < 1:
            raise ConfigError(f"MWER variants require n >= 1, got {self.n}")
        if self.ce_weight < 0:
            raise ConfigError(f"ce_weight must be non-negative, got {self.ce_weight}")
        if self.max_len is not None and self.max_len < 1:
            raise ConfigError(f"max_len must be positive, got {self.max_len}")

    def resolve_max_len(self, num_frames: int) -> int:
        return self.max_len if self.max_len is not None else default_max_len(num_frames)


@dataclass
class LossReport:
    """Scalar objective plus diagnostics.

    ``loss`` is the tensor to backpropagate. For the sampling variant its
    value is a gradient surrogate, so the human-readable numbers live in the
    float fields: ``total_loss == werr_term + ce_weight * ce_term`` always
    (and equals ``ce_term`` for plain cross-entropy training).
    """

    loss: Tensor
    total_loss: float
    werr_term: float
    ce_term: float
    baseline: float
    hypotheses_used: int
    expected_errors: float


def ce_loss(params: ModelParams, utt: Utterance) -> Tensor:
    """Teacher-forced negative log-likelihood, summed over output steps."""
    return -sum_tensors(teacher_forced_logprobs(params, utt))


def _reference_words(params: ModelParams, utt: Utterance) -> tuple[str, ...]:
    return to_words(utt.labels, params.vocab)


def hypothesis_word_errors(params: ModelParams, utt: Utterance, labels) -> int:
    """W(y, y*): word errors of a hypothesis label sequence against the reference."""
    ref = _reference_words(params, utt)
    hyp = to_words(labels, params.vocab)
    return word_errors(hyp, ref).total


def expected_word_errors_exact(
    params: ModelParams, utt: Utterance, max_len: int, include_truncated: bool = False
) -> Tensor:
    """Exact expected word errors by exhaustive enumeration; differentiable.

    Sums P(y|x) * W(y, y*) over every <eos>-terminated sequence up to
    ``max_len`` emitted labels. With ``include_truncated`` the unterminated
    length-max_len prefixes join the sum, which makes the result the exact
    expectation of the truncated sampling process.
    """
    enumeration = enumerate_all(params, utt.features, max_len)
    outcomes = list(enumeration.complete)
    if include_truncated:
        outcomes += list(enumeration.truncated)
    enc = encode(params, utt.features)
    terms = []
    for labels, _ in outcomes:
        errors = hypothesis_word_errors(params, utt, labels)
        log_prob = score_sequence(params, enc, labels)
        terms.append(ad.exp(log_prob) * float(errors))
    return sum_tensors(terms) if terms else Tensor(0.0)


def renormalized_risk(logprobs: list[Tensor], errors: list[int] | list[float]):
    """Risk over a fixed hypothesis set under renormalized probabilities.

    Computes sum_i P_hat_i * (W_i - W_bar) where P_hat renormalizes the raw
    sequence probabilities over the set (stabilized log-sum-exp) and W_bar
    is the unweighted mean error count. Differentiable through every
    log-probability; the error counts and W_bar are constants.

    Returns (risk tensor, W_bar, renormalized weights as floats).
    """
    if not logprobs or len(logprobs) != len(errors):
        raise ContractError("renormalized_risk needs matching, non-empty lists")
    baseline = float(np.mean(errors))
    centered = np.asarray(errors, dtype=np.float64) - baseline
    row = ad.concat([ad.reshape(lp, (1, 1)) for lp in logprobs], axis=1)  # [1 x K]
    weights = ad.exp(ad.log_softmax(row, axis=1))  # renormalized posteriors
    risk = ad.tsum(weights * Tensor(centered.reshape(1, -1)))
    return risk, baseline, weights.data[0].copy()


def nbest_loss_from_hypotheses(
    params: ModelParams, utt: Utterance, hypotheses: list[Hypothesis]
) -> LossReport:
    """Renormalized expected-error loss over a fixed hypothesis list.

    The list is treated as a constant: gradients flow only through the
    re-scored log P(y_i|x) terms, never through how the list was selected.
    Subtracting the mean error count W_bar leaves the gradient unchanged
    (the renormalized weights sum to one) and only recenters the loss.
    """
    if not hypotheses:
        raise ContractError("hypothesis list must be non-empty")
    enc = encode(params, utt.features)
    logprobs = [score_sequence(params, enc, h.labels) for h in hypotheses]
    errors = [hypothesis_word_errors(params, utt, h.labels) for h in hypotheses]
    risk, baseline, weights = renormalized_risk(logprobs, errors)
    value = risk.item()
    return LossReport(
        loss=risk,
        total_loss=value,
        werr_term=value,
        ce_term=0.0,
        baseline=baseline,
        hypotheses_used=len(hypotheses),
        expected_errors=float(np.dot(weights, errors)),
    )


def mwer_nbest_loss(
    params: ModelParams, utt: Utterance, n: int, max_len: int | None = None
) -> LossReport:
    """Expected word errors approximated over the beam-search N-best list."""
    if max_len is None:
        max_len = default_max_len(utt.num_frames)
    nbest = beam_search(params, utt.features, n, max_len)
    return nbest_loss_from_hypotheses(params, utt, list(nbest.hypotheses))


def sample_loss_from_hypotheses(
    params: ModelParams, utt: Utterance, samples: list[Hypothesis]
) -> LossReport:
    """Score-function surrogate for the sampled expected-error estimate.

    The loss estimate is the plain mean error count over the samples. The
    surrogate backpropagates (1/N) * sum_i c_i * log P(y_i|x) where c_i is
    the error count centered on the mean of the *other* samples. The
    leave-one-out center keeps the estimator's expectation equal to the
    gradient of the expected error count (a self-inclusive mean would
    shrink it by (N-1)/N); with a single sample the coefficient is zero, so
    the gradient is exactly zero.
    """
    if not samples:
        raise ContractError("sample list must be non-empty")
    n = len(samples)
    errors = np.array(
        [hypothesis_word_errors(params, utt, h.labels) for h in samples], dtype=np.float64
    )
    mean_errors = float(errors.mean())
    if n == 1:
        coeffs = np.zeros(1)
    else:
        loo_mean = (errors.sum() - errors) / (n - 1)
        coeffs = (errors - loo_mean) / n
    enc = encode(params, utt.features)
    terms = [
        score_sequence(params, enc, h.labels) * float(c) for h, c in zip(samples, coeffs)
    ]
    surrogate = sum_tensors(terms)
    return LossReport(
        loss=surrogate,
        total_loss=mean_errors,
        werr_term=mean_errors,
        ce_term=0.0,
        baseline=mean_errors,
        hypotheses_used=n,
        expected_errors=mean_errors,
    )


def mwer_sample_loss(
    params: ModelParams, utt: Utterance, n: int, rng_seed: int, max_len: int | None = None
) -> LossReport:
    """Expected word errors approximated by ancestral samples from the model."""
    if max_len is None:
        max_len = default_max_len(utt.num_frames)
    samples = sample_sequences(params, utt.features, n, max_len, rng_seed)
    return sample_loss_from_hypotheses(params, utt, samples)


def composite_loss(
    params: ModelParams, utt: Utterance, config: LossConfig, rng_seed: int | None = None
) -> LossReport:
    """The configured criterion, with cross-entropy interpolation for MWER.

    For the MWER variants the returned objective is
    ``werr_loss + ce_weight * ce_loss``; the report decomposes accordingly.
    """
    if config.variant == CE:
        ce = ce_loss(params, utt)
        value = ce.item()
        return LossReport(
            loss=ce,
            total_loss=value,
            werr_term=0.0,
            ce_term=value,
            baseline=0.0,
            hypotheses_used=0,
            expected_errors=0.0,
        )
    max_len = config.resolve_max_len(utt.num_frames)
    if config.variant == MWER_SAMPLE:
        if rng_seed is None:
            raise ContractError("the sampling variant requires an rng_seed")
        report = mwer_sample_loss(params, utt, config.n, rng_seed, max_len)
    else:
        report = mwer_nbest_loss(params, utt, config.n, max_len)
    ce = ce_loss(params, utt)
    report.ce_term = ce.item()
    report.loss = ad.add(report.loss, ce * config.ce_weight)
    report.total_loss = report.werr_term + config.ce_weight * report.ce_term
    return report
