"""Attention-based encoder/decoder built on the autodiff substrate.

Row-vector convention throughout: activations are [1 x dim] matrices and a
projection with p inputs and q outputs is stored as a [p x q] tensor applied
as ``row @ W``. Recurrent cells are LSTMs with fused gate blocks in the
order (input, forget, cell, output); the forget-gate bias block is
initialized to 1.0, every other parameter uniformly in [-0.05, 0.05].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

SOS = "<sos>"
EOS = "<eos>"
SEP = "<sp>"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered label set with reserved start, end, and word-separator symbols."""

    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {label: i for i, label in enumerate(self.labels)}
        if len(index) != len(self.labels):
            raise ConfigError("vocabulary labels must be unique")
        for special in (SOS, EOS, SEP):
            if special not in index:
                raise ConfigError(f"vocabulary is missing reserved label {special}")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_graphemes(cls, graphemes) -> "Vocabulary":
        ordered = []
        for g in graphemes:
            if g in (SOS, EOS, SEP) or g in ordered:
                continue
            ordered.append(g)
        return cls(labels=(SOS, EOS, SEP, *ordered))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sos(self) -> int:
        return self._index[SOS]

    @property
    def eos(self) -> int:
        return self._index[EOS]

    @property
    def sep(self) -> int:
        return self._index[SEP]

    def index(self, label: str) -> int:
        return self._index[label]

    def to_indices(self, labels) -> tuple[int, ...]:
        return tuple(self._index[label] for label in labels)

    def to_labels(self, indices) -> tuple[str, ...]:
        return tuple(self.labels[i] for i in indices)


@dataclass(frozen=True)
class Utterance:
    """A feature sequence paired with its framed ground-truth label sequence."""

    uid: str
    features: np.ndarray  # [T x d] float64
    labels: tuple[int, ...]  # starts with <sos>, ends with <eos>
    words: tuple[str, ...]  # reference word sequence

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ContractError(f"features must be [T x d] with T >= 1, got {self.features.shape}")
        if len(self.labels) < 2:
            raise ContractError("label sequence must contain at least <sos> and <eos>")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


def make_utterance(vocab: Vocabulary, uid: str, features: np.ndarray, words) -> Utterance:
    """Build a validated utterance whose labels frame the given words."""
    labels = words_to_labels(vocab, words)
    features = np.ascontiguousarray(features, dtype=np.float64)
    return Utterance(uid=uid, features=features, labels=labels, words=tuple(words))


def words_to_labels(vocab: Vocabulary, words) -> tuple[int, ...]:
    """Grapheme label sequence for a word sequence: <sos> w1 <sp> w2 ... <eos>."""
    out = [vocab.sos]
    for i, word in enumerate(words):
        if i > 0:
            out.append(vocab.sep)
        out.extend(vocab.index(ch) for ch in word)
    out.append(vocab.eos)
    return tuple(out)


def validate_framing(vocab: Vocabulary, labels) -> None:
    labels = tuple(labels)
    if not labels or labels[0] != vocab.sos or labels[-1] != vocab.eos:
        raise ContractError("label sequence must be framed by <sos> ... <eos>")
    if any(l in (vocab.sos, vocab.eos) for l in labels[1:-1]):
        raise ContractError("interior labels must exclude <sos> and <eos>")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture sizes; defaults are the desk-scale operating point."""

    input_dim: int = 8
    encoder_layers: int = 2
    encoder_cells: int = 32
    bidirectional: bool = False
    decoder_layers: int = 2
    decoder_cells: int = 32
    attention_heads: int = 4
    attention_dim: int = 16
    context_dim: int = 16  # per head
    embed_dim: int = 16

    def __post_init__(self):
        for name in (
            "input_dim",
            "encoder_layers",
            "encoder_cells",
            "decoder_layers",
            "decoder_cells",
            "attention_heads",
            "attention_dim",
            "context_dim",
            "embed_dim",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def encoder_output_dim(self) -> int:
        return self.encoder_cells * (2 if self.bidirectional else 1)

    @property
    def total_context_dim(self) -> int:
        return self.attention_heads * self.context_dim


INIT_SCALE = 0.05


class ModelParams:
    """All trainable tensors, keyed by stable names in creation order."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, tensors: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: ModelConfig, vocab: Vocabulary, seed: int) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors: dict[str, Tensor] = {}

        def draw(name: str, shape: tuple):
            tensors[name] = Tensor(
                rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True
            )

        h = config.encoder_cells
        in_dim = config.input_dim
        directions = ("fwd", "bwd") if config.bidirectional else ("fwd",)
        for layer in range(config.encoder_layers):
            for direction in directions:
                prefix = f"enc.{layer}.{direction}"
                draw(f"{prefix}.w_x", (in_dim, 4 * h))
                draw(f"{prefix}.w_h", (h, 4 * h))
                draw(f"{prefix}.b", (1, 4 * h))
                tensors[f"{prefix}.b"].data[0, h : 2 * h] = 1.0
            in_dim = config.encoder_output_dim

        d = config.decoder_cells
        in_dim = config.embed_dim + config.total_context_dim
        for layer in range(config.decoder_layers):
            prefix = f"dec.{layer}"
            draw(f"{prefix}.w_x", (in_dim, 4 * d))
            draw(f"{prefix}.w_h", (d, 4 * d))
            draw(f"{prefix}.b", (1, 4 * d))
            tensors[f"{prefix}.b"].data[0, d : 2 * d] = 1.0
            in_dim = d

        enc_dim = config.encoder_output_dim
        for head in range(config.attention_heads):
            prefix = f"att.{head}"
            draw(f"{prefix}.w_query", (d, config.attention_dim))
            draw(f"{prefix}.w_enc", (enc_dim, config.attention_dim))
            draw(f"{prefix}.w_ctx", (enc_dim, config.context_dim))
            draw(f"{prefix}.v", (config.attention_dim, 1))

        draw("embed", (len(vocab), config.embed_dim))
        draw("out.w", (d, len(vocab)))
        draw("out.b", (1, len(vocab)))
        return cls(config, vocab, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self):
        return self.tensors.keys()

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradient per parameter; missing gradients are zeros."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def copy(self) -> "ModelParams":
        tensors = {
            name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.tensors.items()
        }
        return ModelParams(self.config, self.vocab, tensors)


@dataclass(frozen=True)
class EncodedFeatures:
    """Encoder outputs with per-head attention projections precomputed."""

    frames: Tensor  # [T x enc_dim]
    head_keys: tuple[Tensor, ...]  # per head, frames @ w_enc -> [T x a]
    head_values: tuple[Tensor, ...]  # per head, frames @ w_ctx -> [T x c]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _gates_to_state(gates: Tensor, c: Tensor, cells: int):
    i = ad.sigmoid(ad.narrow(gates, 1, 0, cells))
    f = ad.sigmoid(ad.narrow(gates, 1, cells, cells))
    g = ad.tanh(ad.narrow(gates, 1, 2 * cells, cells))
    o = ad.sigmoid(ad.narrow(gates, 1, 3 * cells, cells))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _lstm_step(x: Tensor, h: Tensor, c: Tensor, w_x, w_h, b, cells: int):
    gates = ad.add(ad.add(ad.matmul(x, w_x), ad.matmul(h, w_h)), b)
    return _gates_to_state(gates, c, cells)


def _run_direction(params: ModelParams, seq: Tensor, prefix: str, cells: int, reverse: bool):
    w_h = params[f"{prefix}.w_h"]
    b = params[f"{prefix}.b"]
    num_frames = seq.shape[0]
    xproj = ad.matmul(seq, params[f"{prefix}.w_x"])  # hoisted projection for all frames
    h = Tensor(np.zeros((1, cells)))
    c = Tensor(np.zeros((1, cells)))
    rows = []
    order = range(num_frames - 1, -1, -1) if reverse else range(num_frames)
    for t in order:
        gates = ad.add(ad.add(ad.narrow(xproj, 0, t, 1), ad.matmul(h, w_h)), b)
        h, c = _gates_to_state(gates, c, cells)
        rows.append(h)
    if reverse:
        rows.reverse()
    return ad.concat(rows, axis=0)  # [T x cells]


def encode(params: ModelParams, features: np.ndarray) -> EncodedFeatures:
    """Encode a [T x d] feature sequence into per-frame representations."""
    cfg = params.config
    if features.ndim != 2 or features.shape[1] != cfg.input_dim:
        raise ConfigError(
            f"features have shape {features.shape}, model expects [T x {cfg.input_dim}]"
        )
    seq = Tensor(features)
    for layer in range(cfg.encoder_layers):
        fwd = _run_direction(params, seq, f"enc.{layer}.fwd", cfg.encoder_cells, reverse=False)
        if cfg.bidirectional:
            bwd = _run_direction(params, seq, f"enc.{layer}.bwd", cfg.encoder_cells, reverse=True)
            seq = ad.concat([fwd, bwd], axis=1)
        else:
            seq = fwd
    keys = tuple(
        ad.matmul(seq, params[f"att.{i}.w_enc"]) for i in range(cfg.attention_heads)
    )
    values = tuple(
        ad.matmul(seq, params[f"att.{i}.w_ctx"]) for i in range(cfg.attention_heads)
    )
    return EncodedFeatures(frames=seq, head_keys=keys, head_values=values)


def attend(params: ModelParams, query: Tensor, enc: EncodedFeatures):
    """Multi-head additive attention.

    For each head: scores over frames are ``v . tanh(query @ w_query + key_t)``,
    softmax-normalized over frames, then used to average the per-head value
    projections. Returns the concatenated [1 x M*c] context and the [M x T]
    attention weights.
    """
    cfg = params.config
    num_frames = enc.num_frames
    contexts = []
    weights = []
    for head in range(cfg.attention_heads):
        q = ad.matmul(query, params[f"att.{head}.w_query"])  # [1 x a]
        scores = ad.tanh(ad.add(q, enc.head_keys[head]))  # [T x a], broadcast over frames
        beta = ad.matmul(scores, params[f"att.{head}.v"])  # [T x 1]
        alpha = ad.softmax(ad.reshape(beta, (1, num_frames)), axis=1)  # [1 x T]
        contexts.append(ad.matmul(alpha, enc.head_values[head]))  # [1 x c]
        weights.append(alpha)
    context = contexts[0] if len(contexts) == 1 else ad.concat(contexts, axis=1)
    alphas = weights[0] if len(weights) == 1 else ad.concat(weights, axis=0)
    return context, alphas


@dataclass(frozen=True)
class DecoderState:
    """Immutable per-step decoder state bound to one encoded utterance."""

    layers: tuple[tuple[Tensor, Tensor], ...]  # (h, c) per layer
    enc: EncodedFeatures
    attention: np.ndarray | None = None  # [M x T] weights from the last step

    @property
    def query(self) -> Tensor:
        return self.layers[-1][0]


def initial_decoder_state(params: ModelParams, enc: EncodedFeatures) -> DecoderState:
    cells = params.config.decoder_cells
    layers = tuple(
        (Tensor(np.zeros((1, cells))), Tensor(np.zeros((1, cells))))
        for _ in range(params.config.decoder_layers)
    )
    return DecoderState(layers=layers, enc=enc)


def decode_step(params: ModelParams, prev_label: int, state: DecoderState):
    """Advance the decoder one step; returns ([1 x |G|] logits, new state).

    The attention context is computed from the decoder state before it
    consumes ``prev_label``, then [embedding(prev_label); context] drives
    the recurrent stack and the top hidden state is projected to logits.
    """
    vocab_size = len(params.vocab)
    if not 0 <= prev_label < vocab_size:
        raise ContractError(f"label index {prev_label} out of range for |G|={vocab_size}")
    context, alphas = attend(params, state.query, state.enc)
    onehot = np.zeros((1, vocab_size))
    onehot[0, prev_label] = 1.0
    embedded = ad.matmul(Tensor(onehot), params["embed"])
    x = ad.concat([embedded, context], axis=1)
    cells = params.config.decoder_cells
    new_layers = []
    for layer, (h, c) in enumerate(state.layers):
        prefix = f"dec.{layer}"
        h_new, c_new = _lstm_step(
            x, h, c, params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"], cells
        )
        new_layers.append((h_new, c_new))
        x = h_new
    logits = ad.add(ad.matmul(x, params["out.w"]), params["out.b"])
    new_state = DecoderState(
        layers=tuple(new_layers), enc=state.enc, attention=alphas.data.copy()
    )
    return logits, new_state


def _pick(row: Tensor, index: int) -> Tensor:
    column = np.zeros((row.shape[1], 1))
    column[index, 0] = 1.0
    return ad.matmul(row, Tensor(column))  # [1 x 1]


def step_logprobs(params: ModelParams, enc: EncodedFeatures, labels) -> list[Tensor]:
    """Per-step log P(labels[u] | labels[:u], x) for u = 1..len-1, as [1 x 1] tensors.

    ``labels`` must start with <sos>; a terminating <eos> is scored like any
    other label, so unterminated sequences are scored over their emitted
    labels only.
    """
    state = initial_decoder_state(params, enc)
    out = []
    for u in range(1, len(labels)):
        logits, state = decode_step(params, labels[u - 1], state)
        row = ad.log_softmax(logits, axis=1)
        out.append(_pick(row, labels[u]))
    return out


def teacher_forced_logprobs(params: ModelParams, utt: Utterance) -> list[Tensor]:
    """Log-probability of each ground-truth label under teacher forcing."""
    validate_framing(params.vocab, utt.labels)
    enc = encode(params, utt.features)
    return step_logprobs(params, enc, utt.labels)


def sum_tensors(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ad.add(total, t)
    return total


def score_sequence(params: ModelParams, enc: EncodedFeatures, labels) -> Tensor:
    """Total log-probability of a label sequence (with <sos> prefix) as a scalar tensor."""
    return sum_tensors(step_logprobs(params, enc, labels))


def sequence_logprob(params: ModelParams, features: np.ndarray, labels) -> Tensor:
    """log P(labels | features) for a framed <sos>...<eos> sequence; differentiable."""
    validate_framing(params.vocab, labels)
    enc = encode(params, features)
    return score_sequence(params, enc, labels)
