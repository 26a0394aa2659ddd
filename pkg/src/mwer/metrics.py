"""Word-level error counting: label-to-word mapping, minimum-edit-distance
alignment, and corpus word error rate."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MetricUndefinedError
from .model import Vocabulary


@dataclass(frozen=True)
class WordErrorStats:
    substitutions: int
    insertions: int
    deletions: int
    reference_words: int

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def to_words(labels, vocab: Vocabulary) -> tuple[str, ...]:
    """Word sequence for a label sequence: strip <sos>/<eos>, split on <sp>.

    Empty words from repeated or dangling separators are dropped.
    """
    words = []
    current: list[str] = []
    for index in labels:
        if index == vocab.sos or index == vocab.eos:
            continue
        if index == vocab.sep:
            if current:
                words.append("".join(current))
                current = []
        else:
            current.append(vocab.labels[index])
    if current:
        words.append("".join(current))
    return tuple(words)


def word_errors(hyp, ref) -> WordErrorStats:
    """Minimum-edit-distance alignment with unit costs.

    The backtrace is deterministic: on cost ties it prefers substitution
    (or match), then deletion, then insertion.
    """
    hyp = list(hyp)
    ref = list(ref)
    n, m = len(hyp), len(ref)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            step = 0 if hyp[i - 1] == ref[j - 1] else 1
            row[j] = min(prev[j - 1] + step, prev[j] + 1, row[j - 1] + 1)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            step = 0 if hyp[i - 1] == ref[j - 1] else 1
            if dist[i][j] == dist[i - 1][j - 1] + step:
                subs += step
                i -= 1
                j -= 1
                continue
        if j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            dels += 1
            j -= 1
            continue
        ins += 1
        i -= 1
    return WordErrorStats(
        substitutions=subs, insertions=ins, deletions=dels, reference_words=m
    )


def corpus_wer(pairs) -> float:
    """100 * total errors / total reference words over (hyp, ref) word pairs."""
    errors = 0
    ref_words = 0
    for hyp, ref in pairs:
        stats = word_errors(hyp, ref)
        errors += stats.total
        ref_words += stats.reference_words
    if ref_words == 0:
        raise MetricUndefinedError("corpus WER is undefined with zero reference words")
    return 100.0 * errors / ref_words
