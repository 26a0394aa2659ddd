"""Synthetic desk-scale transduction task: word sequences rendered as noisy
per-grapheme feature frames.

Each grapheme (including the word separator) owns a fixed prototype vector;
an utterance's features repeat each target grapheme's prototype for a
sampled duration and add Gaussian noise. Difficulty is controlled by the
noise level and the duration variability. Generation is a pure function of
(task spec, count).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .metrics import to_words
from .model import SEP, Utterance, Vocabulary, make_utterance

# rng stream salts so prototypes, utterances, and splits stay independent
_SALT_UTTERANCES = 0
_SALT_PROTOTYPES = 1
_SALT_SPLIT = 2


@dataclass(frozen=True)
class TaskSpec:
    """Generator parameters for the synthetic task."""

    vocab_words: tuple[str, ...]
    words_per_utterance: tuple[int, int] = (1, 3)
    frames_per_grapheme: tuple[int, int] = (1, 2)
    feature_dim: int = 8
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.vocab_words:
            raise ConfigError("vocab_words must be non-empty")
        if any(not word for word in self.vocab_words):
            raise ConfigError("vocab_words must not contain empty words")
        for name in ("words_per_utterance", "frames_per_grapheme"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} range ({lo}, {hi}) is invalid")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be non-negative, got {self.noise_std}")

    def graphemes(self) -> tuple[str, ...]:
        return tuple(sorted({ch for word in self.vocab_words for ch in word}))


@dataclass(frozen=True)
class Dataset:
    name: str
    utterances: tuple[Utterance, ...]
    spec: TaskSpec

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def vocab(self) -> Vocabulary:
        return build_vocabulary(self.spec)


def build_vocabulary(spec: TaskSpec) -> Vocabulary:
    return Vocabulary.from_graphemes(spec.graphemes())


def grapheme_prototypes(spec: TaskSpec) -> dict[str, np.ndarray]:
    """Fixed per-grapheme feature codes, near-orthogonal and unit norm.

    With at most ``feature_dim`` symbols the codes are exactly orthonormal
    (pairwise distance sqrt(2)); beyond that they fall back to normalized
    Gaussian directions.
    """
    symbols = (*spec.graphemes(), SEP)
    rng = np.random.default_rng([spec.seed, _SALT_PROTOTYPES])
    d = spec.feature_dim
    if len(symbols) <= d:
        basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
        codes = basis[: len(symbols)]
    else:
        codes = rng.standard_normal((len(symbols), d))
        codes /= np.linalg.norm(codes, axis=1, keepdims=True)
    return {symbol: codes[i].copy() for i, symbol in enumerate(symbols)}


def generate(spec: TaskSpec, count: int) -> Dataset:
    """Sample ``count`` utterances; deterministic given the spec seed."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    vocab = build_vocabulary(spec)
    prototypes = grapheme_prototypes(spec)
    rng = np.random.default_rng([spec.seed, _SALT_UTTERANCES])
    lo_w, hi_w = spec.words_per_utterance
    lo_f, hi_f = spec.frames_per_grapheme
    utterances = []
    for i in range(count):
        num_words = int(rng.integers(lo_w, hi_w + 1))
        words = tuple(
            spec.vocab_words[int(rng.integers(0, len(spec.vocab_words)))]
            for _ in range(num_words)
        )
        symbols: list[str] = []
        for w, word in enumerate(words):
            if w > 0:
                symbols.append(SEP)
            symbols.extend(word)
        frames = []
        for symbol in symbols:
            duration = int(rng.integers(lo_f, hi_f + 1))
            block = np.tile(prototypes[symbol], (duration, 1))
            if spec.noise_std > 0:
                block = block + spec.noise_std * rng.standard_normal(block.shape)
            frames.append(block)
        features = np.concatenate(frames, axis=0)
        utterances.append(make_utterance(vocab, f"utt{i:05d}", features, words))
    dataset = Dataset(name="all", utterances=tuple(utterances), spec=spec)
    _validate_round_trip(dataset, vocab)
    return dataset


def _validate_round_trip(dataset: Dataset, vocab: Vocabulary) -> None:
    for utt in dataset.utterances:
        if to_words(utt.labels, vocab) != utt.words:
            raise ConfigError(f"target of {utt.uid} does not decode back to its words")


def split(dataset: Dataset, fractions: tuple[float, float, float]):
    """Seeded shuffle into disjoint (train, held_out, test) datasets."""
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"fractions must be three positive values, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    rng = np.random.default_rng([dataset.spec.seed, _SALT_SPLIT])
    order = rng.permutation(n)
    bounds = [int(round(sum(fractions[: k + 1]) * n)) for k in range(3)]
    names = ("train", "held_out", "test")
    out = []
    start = 0
    for name, stop in zip(names, bounds):
        chosen = tuple(dataset.utterances[i] for i in order[start:stop])
        out.append(Dataset(name=name, utterances=chosen, spec=dataset.spec))
        start = stop
    return tuple(out)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write utterances as line-delimited text plus a sidecar spec header.

    Record format: a ``#utt <id> <words...>`` line followed by one
    full-precision feature row per frame. The sidecar ``<path>.spec.json``
    carries the generating TaskSpec and the split name.
    """
    path = Path(path)
    lines = []
    for utt in dataset.utterances:
        lines.append("#utt " + " ".join((utt.uid, *utt.words)))
        for row in utt.features:
            lines.append(" ".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {"name": dataset.name, "count": len(dataset), "spec": asdict(dataset.spec)}
    Path(str(path) + ".spec.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".spec.json").read_text(encoding="utf-8"))
    raw = sidecar["spec"]
    spec = TaskSpec(
        vocab_words=tuple(raw["vocab_words"]),
        words_per_utterance=tuple(raw["words_per_utterance"]),
        frames_per_grapheme=tuple(raw["frames_per_grapheme"]),
        feature_dim=raw["feature_dim"],
        noise_std=raw["noise_std"],
        seed=raw["seed"],
    )
    vocab = build_vocabulary(spec)
    utterances = []
    uid = None
    words: tuple[str, ...] = ()
    rows: list[list[float]] = []

    def flush():
        if uid is not None:
            features = np.array(rows, dtype=np.float64)
            utterances.append(make_utterance(vocab, uid, features, words))

    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#utt "):
            flush()
            parts = line.split()
            uid, words = parts[1], tuple(parts[2:])
            rows = []
        elif line.strip():
            rows.append([float(x) for x in line.split()])
    flush()
    return Dataset(name=sidecar["name"], utterances=tuple(utterances), spec=spec)
