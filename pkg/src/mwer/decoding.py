"""Inference over the model: beam search, ancestral sampling, and an
exhaustive enumerator for tiny instances.

All three run with gradient recording suspended; hypothesis selection is
never differentiated through. Log-probabilities are raw sums over emitted
labels with no length normalization, so scores only decrease as a
hypothesis extends, which makes the beam's early-stopping rule exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import no_grad
from .errors import CapacityError, ContractError
from .model import DecoderState, ModelParams, decode_step, encode, initial_decoder_state

ENUMERATION_GUARD = 1_000_000


def default_max_len(num_frames: int) -> int:
    """Generous decode bound for toy tasks; prevents nontermination."""
    return 2 * num_frames + 10


@dataclass(frozen=True)
class Hypothesis:
    """A label sequence with its exact sequence log-probability.

    ``labels`` includes the <sos> prefix and ends with <eos> iff the
    hypothesis terminated; a hypothesis truncated at max_len is still
    marked complete and scored over its emitted labels.
    """

    labels: tuple[int, ...]
    log_prob: float
    complete: bool

    def emitted(self) -> tuple[int, ...]:
        return self.labels[1:]


@dataclass(frozen=True)
class NBestList:
    """Hypotheses sorted by descending log-probability, ties broken by labels."""

    hypotheses: tuple[Hypothesis, ...]
    beam_size: int

    def __post_init__(self):
        if len(self.hypotheses) > self.beam_size:
            raise ContractError(
                f"{len(self.hypotheses)} hypotheses exceed beam size {self.beam_size}"
            )
        keys = [(-h.log_prob, h.labels) for h in self.hypotheses]
        if keys != sorted(keys):
            raise ContractError("hypotheses must be sorted by descending log-probability")
        if len({h.labels for h in self.hypotheses}) != len(self.hypotheses):
            raise ContractError("duplicate label sequences in N-best list")

    def __len__(self) -> int:
        return len(self.hypotheses)

    def top(self) -> Hypothesis:
        return self.hypotheses[0]


def _logprob_row(params: ModelParams, prev_label: int, state: DecoderState):
    logits, new_state = decode_step(params, prev_label, state)
    row = ad.log_softmax(logits, axis=1).data[0]
    return row, new_state


def beam_search(params: ModelParams, features: np.ndarray, beam_size: int, max_len: int) -> NBestList:
    """Breadth-wise beam search keeping the top ``beam_size`` raw log-prob paths.

    Hypotheses that emit <eos> retire into a finished pool; the search stops
    once ``beam_size`` finished hypotheses outscore every live one, or when
    ``max_len`` labels have been emitted, at which point surviving live
    hypotheses are retired as complete-by-truncation.
    """
    if beam_size < 1 or max_len < 1:
        raise ContractError(f"beam_size and max_len must be >= 1, got {beam_size}, {max_len}")
    vocab = params.vocab
    with no_grad():
        enc = encode(params, features)
        live = [((vocab.sos,), 0.0, initial_decoder_state(params, enc))]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            candidates = []  # (labels, log_prob, complete, state)
            for labels, log_prob, state in live:
                row, new_state = _logprob_row(params, labels[-1], state)
                for g in range(len(vocab)):
                    extended = labels + (g,)
                    total = log_prob + row[g]
                    candidates.append((extended, total, g == vocab.eos, new_state))
            candidates.sort(key=lambda c: (-c[1], c[0]))
            top = candidates[:beam_size]
            live = [(labels, lp, st) for labels, lp, done, st in top if not done]
            finished.extend(
                Hypothesis(labels, lp, complete=True) for labels, lp, done, _ in top if done
            )
            if not live:
                break
            if len(finished) >= beam_size:
                nth_best = sorted(finished, key=lambda h: (-h.log_prob, h.labels))[beam_size - 1]
                best_live = max(lp for _, lp, _ in live)
                if nth_best.log_prob >= best_live:
                    break
        else:
            # max_len exhausted: survivors are complete by truncation
            finished.extend(Hypothesis(labels, lp, complete=True) for labels, lp, _ in live)
    finished.sort(key=lambda h: (-h.log_prob, h.labels))
    return NBestList(hypotheses=tuple(finished[:beam_size]), beam_size=beam_size)


def sample_sequences(
    params: ModelParams, features: np.ndarray, count: int, max_len: int, rng_seed: int
) -> list[Hypothesis]:
    """Draw ``count`` independent ancestral samples; duplicates are kept.

    Deterministic given ``rng_seed``: labels are drawn by inverse-CDF from
    the per-step distribution. A sample that reaches ``max_len`` without
    <eos> is marked complete and scored over its emitted labels.
    """
    if count < 1 or max_len < 1:
        raise ContractError(f"count and max_len must be >= 1, got {count}, {max_len}")
    vocab = params.vocab
    rng = np.random.default_rng(rng_seed)
    samples = []
    with no_grad():
        enc = encode(params, features)
        initial = initial_decoder_state(params, enc)
        for _ in range(count):
            labels = (vocab.sos,)
            log_prob = 0.0
            state = initial
            for _ in range(max_len):
                row, state = _logprob_row(params, labels[-1], state)
                probs = np.exp(row)
                cdf = np.cumsum(probs / probs.sum())
                g = int(np.searchsorted(cdf, rng.random(), side="right"))
                g = min(g, len(vocab) - 1)
                labels = labels + (g,)
                log_prob += row[g]
                if g == vocab.eos:
                    break
            samples.append(Hypothesis(labels, log_prob, complete=True))
    return samples


@dataclass(frozen=True)
class Enumeration:
    """Exact distribution over all decodable sequences up to max_len.

    ``complete`` holds every <eos>-terminated sequence with its probability;
    ``truncated`` holds every unterminated length-max_len prefix. The two
    groups partition the sample space, so their probabilities sum to 1.
    """

    complete: tuple[tuple[tuple[int, ...], float], ...]
    truncated: tuple[tuple[tuple[int, ...], float], ...]

    @property
    def residual(self) -> float:
        return float(sum(p for _, p in self.truncated))

    def total_mass(self) -> float:
        return float(sum(p for _, p in self.complete)) + self.residual


def enumerate_all(params: ModelParams, features: np.ndarray, max_len: int) -> Enumeration:
    """Exhaustively enumerate every sequence of up to ``max_len`` emitted labels.

    Guarded: refuses instances where |G|^max_len exceeds one million.
    """
    vocab = params.vocab
    if len(vocab) ** max_len > ENUMERATION_GUARD:
        raise CapacityError(
            f"enumeration of |G|^max_len = {len(vocab)}^{max_len} exceeds {ENUMERATION_GUARD}"
        )
    complete: list[tuple[tuple[int, ...], float]] = []
    truncated: list[tuple[tuple[int, ...], float]] = []
    with no_grad():
        enc = encode(params, features)

        def expand(labels: tuple[int, ...], log_prob: float, state: DecoderState, depth: int):
            row, new_state = _logprob_row(params, labels[-1], state)
            for g in range(len(vocab)):
                extended = labels + (g,)
                total = log_prob + row[g]
                if g == vocab.eos:
                    complete.append((extended, float(np.exp(total))))
                elif depth + 1 == max_len:
                    truncated.append((extended, float(np.exp(total))))
                else:
                    expand(extended, total, new_state, depth + 1)

        expand((vocab.sos,), 0.0, initial_decoder_state(params, enc), 0)
    return Enumeration(complete=tuple(complete), truncated=tuple(truncated))


def argmax_complete(enumeration: Enumeration) -> tuple[tuple[int, ...], float]:
    """Most probable <eos>-terminated sequence, ties broken by label order."""
    return min(enumeration.complete, key=lambda item: (-item[1], item[0]))


def format_nbest(uid: str, nbest: NBestList, vocab) -> str:
    """Line-delimited interchange records: id, rank, log-prob, labels."""
    lines = []
    for rank, hyp in enumerate(nbest.hypotheses, start=1):
        labels = " ".join(vocab.to_labels(hyp.labels))
        lines.append(f"{uid}\t{rank}\t{hyp.log_prob!r}\t{labels}")
    return "\n".join(lines)
