"""Training loop and optimizer: Adam with bias correction, mini-batch
gradient accumulation, periodic held-out evaluation with beam width 8, and
line-delimited metrics logging.

Runs are bit-reproducible: batches, sampling seeds, and evaluation seeds
all derive from the configured seed, and gradients reduce in a fixed
order. Wall-clock time is kept out of the serialized metrics so two runs
of the same config produce identical log bytes.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, split
from .decoding import beam_search, default_max_len, sample_sequences
from .errors import ConfigError, TrainingDivergedError
from .losses import CE, LossConfig, composite_loss
from .metrics import corpus_wer, to_words
from .model import ModelConfig, ModelParams

STAGE_CE = "ce"
STAGE_MWER = "mwer"
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
EVAL_BEAM = 8
EVAL_SAMPLES = 4

# large primes for deriving independent per-step seed streams
_SEED_STRIDE = 1_000_003
_EVAL_STRIDE = 7_368_787


@dataclass(frozen=True)
class AdamConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, hyper: AdamConfig
) -> AdamState:
    """One bias-corrected Adam update; parameter arrays are replaced, not
    mutated, so tensors captured on an earlier tape stay valid."""
    from .errors import ContractError

    state.t += 1
    t = state.t
    for name, tensor in params.items():
        grad = grads[name]
        if grad.shape != tensor.data.shape:
            raise ContractError(
                f"gradient shape {grad.shape} does not match parameter {name} {tensor.data.shape}"
            )
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - hyper.beta1**t)
        v_hat = v / (1.0 - hyper.beta2**t)
        tensor.data = tensor.data - hyper.step_size * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return state


@dataclass(frozen=True)
class TrainConfig:
    stage: str = STAGE_CE
    loss: LossConfig = field(default_factory=LossConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    batch_size: int = 4
    max_steps: int = 500
    eval_every: int = 50
    seed: int = 0
    init_checkpoint: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.stage not in (STAGE_CE, STAGE_MWER):
            raise ConfigError(f"stage must be '{STAGE_CE}' or '{STAGE_MWER}', got {self.stage!r}")
        if self.stage == STAGE_MWER and not self.init_checkpoint:
            raise ConfigError("the MWER stage requires init_checkpoint from CE training")
        if self.stage == STAGE_MWER and self.loss.variant == CE:
            raise ConfigError("the MWER stage requires an MWER loss variant")
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_every < 1:
            raise ConfigError("batch_size/eval_every must be >= 1 and max_steps >= 0")


@dataclass
class MetricsRecord:
    step: int
    total_loss: float
    werr_term: float
    ce_term: float
    baseline: float
    heldout_wer: float
    heldout_expected_errors: float
    wall_clock: float  # seconds since run start; excluded from serialization

    def to_json(self) -> str:
        payload = {
            "step": self.step,
            "total_loss": self.total_loss,
            "werr_term": self.werr_term,
            "ce_term": self.ce_term,
            "baseline": self.baseline,
            "heldout_wer": self.heldout_wer,
            "heldout_expected_errors": self.heldout_expected_errors,
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class TrainResult:
    params: ModelParams
    records: list[MetricsRecord]
    splits: tuple[Dataset, Dataset, Dataset]


def evaluate_wer(params: ModelParams, dataset: Dataset, beam_size: int = EVAL_BEAM) -> float:
    """Corpus WER of beam-search top-1 hypotheses against the references."""
    vocab = params.vocab
    pairs = []
    for utt in dataset.utterances:
        nbest = beam_search(params, utt.features, beam_size, default_max_len(utt.num_frames))
        hyp = to_words(nbest.top().labels, vocab)
        pairs.append((hyp, to_words(utt.labels, vocab)))
    return corpus_wer(pairs)


def sampled_expected_errors(params: ModelParams, dataset: Dataset, seed: int) -> float:
    """Mean word-error count of model samples, the held-out expected-errors
    estimate (documented convention: EVAL_SAMPLES ancestral samples per
    utterance under a step-derived seed)."""
    from .losses import hypothesis_word_errors

    totals = []
    for i, utt in enumerate(dataset.utterances):
        samples = sample_sequences(
            params, utt.features, EVAL_SAMPLES, default_max_len(utt.num_frames), seed + i
        )
        totals.append(
            float(np.mean([hypothesis_word_errors(params, utt, s.labels) for s in samples]))
        )
    return float(np.mean(totals)) if totals else 0.0


class MetricsWriter:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, line: str) -> None:
        if self.path:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def train(
    config: TrainConfig,
    dataset: Dataset,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    """Run one training stage over a seeded split of ``dataset``.

    Every ``eval_every`` steps (and at steps 0 and max_steps) the held-out
    split is decoded with beam width 8 and a metrics record is appended.
    Raises TrainingDivergedError (after logging a diagnostic record) if the
    loss goes non-finite.
    """
    train_split, heldout_split, test_split = split(dataset, SPLIT_FRACTIONS)
    if config.init_checkpoint:
        params = load_checkpoint(config.init_checkpoint)
    else:
        params = ModelParams.initialize(config.model, dataset.vocab, config.seed)

    writer = MetricsWriter(metrics_path)
    records: list[MetricsRecord] = []
    started = time.perf_counter()
    rng_batches = np.random.default_rng([config.seed, 17])

    def emit(step: int, losses: dict[str, float]) -> None:
        eval_seed = (config.seed * _SEED_STRIDE + step * _EVAL_STRIDE) % (2**63)
        record = MetricsRecord(
            step=step,
            total_loss=losses["total"],
            werr_term=losses["werr"],
            ce_term=losses["ce"],
            baseline=losses["baseline"],
            heldout_wer=evaluate_wer(params, heldout_split),
            heldout_expected_errors=sampled_expected_errors(params, heldout_split, eval_seed),
            wall_clock=time.perf_counter() - started,
        )
        records.append(record)
        writer.write(record.to_json())

    # step-0 record carries the initial held-out metrics; loss fields are zero
    emit(0, {"total": 0.0, "werr": 0.0, "ce": 0.0, "baseline": 0.0})

    n_train = len(train_split)
    if n_train == 0 and config.max_steps > 0:
        raise ConfigError("training split is empty")
    optimizer_state = AdamState()
    for step in range(1, config.max_steps + 1):
        indices = rng_batches.integers(0, n_train, size=config.batch_size)
        params.zero_grads()
        totals = {"total": 0.0, "werr": 0.0, "ce": 0.0, "baseline": 0.0}
        scale = 1.0 / config.batch_size
        for item, index in enumerate(indices):
            utt = train_split.utterances[int(index)]
            loss_seed = (
                (config.seed * _SEED_STRIDE + step) * _SEED_STRIDE + item
            ) % (2**63)
            with ad.Tape():
                report = composite_loss(params, utt, config.loss, rng_seed=loss_seed)
                ad.backward(report.loss * scale)
            decomposition = report.werr_term + config.loss.ce_weight * report.ce_term
            if config.loss.variant == CE:
                decomposition = report.ce_term
            if abs(report.total_loss - decomposition) > 1e-12 * max(1.0, abs(report.total_loss)):
                raise AssertionError(
                    f"loss decomposition violated at step {step}: "
                    f"{report.total_loss} vs {decomposition}"
                )
            totals["total"] += report.total_loss * scale
            totals["werr"] += report.werr_term * scale
            totals["ce"] += report.ce_term * scale
            totals["baseline"] += report.baseline * scale
        if not math.isfinite(totals["total"]):
            diagnostic = {"event": "diverged", "step": step, "total_loss": totals["total"]}
            writer.write(json.dumps(diagnostic, sort_keys=True))
            raise TrainingDivergedError(
                f"non-finite loss at step {step}", step=step, diagnostics=diagnostic
            )
        adam_step(params, params.grads(), optimizer_state, config.adam)
        if step % config.eval_every == 0 or step == config.max_steps:
            emit(step, totals)

    if checkpoint_path:
        save_checkpoint(params, checkpoint_path)
    return TrainResult(params=params, records=records, splits=(train_split, heldout_split, test_split))
