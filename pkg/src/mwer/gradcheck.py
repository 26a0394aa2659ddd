"""Central finite-difference gradient verification for the full model.

Used by the test suite and the ``gradcheck`` CLI command: builds a seeded
toy model, computes analytic gradients of the cross-entropy loss and of the
N-best loss re-scored over a fixed hypothesis list, and compares both
against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import TaskSpec, generate
from .losses import ce_loss, nbest_loss_from_hypotheses
from .decoding import beam_search
from .model import ModelConfig, ModelParams, Utterance

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-8  # differences below this are finite-difference noise

TOY_CONFIG = ModelConfig(
    input_dim=4,
    encoder_layers=1,
    encoder_cells=8,
    decoder_layers=1,
    decoder_cells=8,
    attention_heads=2,
    attention_dim=4,
    context_dim=4,
    embed_dim=4,
)


def toy_instance(seed: int = 0) -> tuple[ModelParams, Utterance]:
    """A <=2000-parameter model plus one short utterance, fully seeded."""
    spec = TaskSpec(
        vocab_words=("ab", "ba", "a"),
        words_per_utterance=(1, 2),
        frames_per_grapheme=(1, 2),
        feature_dim=TOY_CONFIG.input_dim,
        noise_std=0.05,
        seed=seed,
    )
    dataset = generate(spec, 1)
    params = ModelParams.initialize(TOY_CONFIG, dataset.vocab, seed)
    return params, dataset.utterances[0]


def finite_difference_grads(f, params: ModelParams, step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central differences of the scalar ``f()`` w.r.t. every parameter."""
    grads = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        g = np.zeros_like(flat)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + step
            up = f()
            flat[k] = original - step
            down = f()
            flat[k] = original
            g[k] = (up - down) / (2.0 * step)
        grads[name] = g.reshape(tensor.data.shape)
    return grads


def analytic_grads(loss_fn, params: ModelParams) -> dict[str, np.ndarray]:
    """Backpropagated gradients of ``loss_fn()`` (a fresh forward pass)."""
    params.zero_grads()
    with ad.Tape():
        loss = loss_fn()
        ad.backward(loss)
    return params.grads()


def max_relative_error(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]
) -> tuple[float, str]:
    """Worst elementwise relative error, with an absolute noise floor."""
    worst = 0.0
    worst_name = ""
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        diff = np.abs(a - n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR)
        rel = np.where(diff <= ABS_FLOOR, 0.0, diff / denom)
        k = int(np.argmax(rel))
        if rel.reshape(-1)[k] > worst:
            worst = float(rel.reshape(-1)[k])
            worst_name = name
    return worst, worst_name


@dataclass
class GradcheckReport:
    ce_max_rel_error: float
    ce_worst_param: str
    nbest_max_rel_error: float
    nbest_worst_param: str
    num_parameters: int

    @property
    def ok(self) -> bool:
        return self.ce_max_rel_error < REL_TOL and self.nbest_max_rel_error < REL_TOL

    def lines(self) -> list[str]:
        status = "PASS" if self.ok else "FAIL"
        return [
            f"gradcheck model parameters: {self.num_parameters}",
            f"ce loss: max rel error {self.ce_max_rel_error:.3e} ({self.ce_worst_param})",
            f"n-best loss (fixed list): max rel error "
            f"{self.nbest_max_rel_error:.3e} ({self.nbest_worst_param})",
            f"tolerance {REL_TOL:g}: {status}",
        ]


def run_gradcheck(seed: int = 0) -> GradcheckReport:
    params, utt = toy_instance(seed)

    ce_analytic = analytic_grads(lambda: ce_loss(params, utt), params)
    ce_numeric = finite_difference_grads(lambda: ce_loss(params, utt).item(), params)
    ce_err, ce_worst = max_relative_error(ce_analytic, ce_numeric)

    with ad.no_grad():
        hypotheses = list(beam_search(params, utt.features, 4, 8).hypotheses)

    def nbest_value() -> float:
        return nbest_loss_from_hypotheses(params, utt, hypotheses).loss.item()

    nbest_analytic = analytic_grads(
        lambda: nbest_loss_from_hypotheses(params, utt, hypotheses).loss, params
    )
    nbest_numeric = finite_difference_grads(nbest_value, params)
    nbest_err, nbest_worst = max_relative_error(nbest_analytic, nbest_numeric)

    return GradcheckReport(
        ce_max_rel_error=ce_err,
        ce_worst_param=ce_worst,
        nbest_max_rel_error=nbest_err,
        nbest_worst_param=nbest_worst,
        num_parameters=params.num_parameters(),
    )
