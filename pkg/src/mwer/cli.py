"""Command-line interface.

Subcommands: generate-data, train-ce, train-mwer, decode, evaluate,
gradcheck, experiment. Every flag can also come from a flat ``key = value``
config file passed with --config; explicit flags override file values.
Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .data import TaskSpec, generate, load_dataset, save_dataset, split
from .checkpoint import load_checkpoint
from .decoding import beam_search, default_max_len, format_nbest
from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    MetricUndefinedError,
    TrainingDivergedError,
)
from .experiments import EXPERIMENT_KINDS, run_experiment_suite
from .gradcheck import run_gradcheck
from .losses import MWER_NBEST, MWER_SAMPLE, CE, LossConfig
from .metrics import corpus_wer, to_words, word_errors
from .model import ModelConfig
from .training import SPLIT_FRACTIONS, AdamConfig, TrainConfig, train

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(USAGE_EXIT)


def _range_pair(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return int(lo), int(hi or lo)


def _word_list(text: str) -> tuple[str, ...]:
    return tuple(w for w in text.split(",") if w)


def parse_config_file(path: str) -> dict[str, str]:
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {raw!r} is not 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    known = {}
    for action in subparser._actions:
        if action.dest in values:
            known[action.dest] = action
    unknown = set(values) - set(known) - {"config"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for dest, action in known.items():
        text = values[dest]
        if isinstance(action, argparse._StoreTrueAction):
            action.default = text.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            action.default = action.type(text)
        else:
            action.default = text
        action.required = False


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    defaults = ModelConfig()
    p.add_argument("--encoder-layers", type=int, default=defaults.encoder_layers)
    p.add_argument("--encoder-cells", type=int, default=defaults.encoder_cells)
    p.add_argument("--bidirectional", action="store_true")
    p.add_argument("--decoder-layers", type=int, default=defaults.decoder_layers)
    p.add_argument("--decoder-cells", type=int, default=defaults.decoder_cells)
    p.add_argument("--attention-heads", type=int, default=defaults.attention_heads)
    p.add_argument("--attention-dim", type=int, default=defaults.attention_dim)
    p.add_argument("--context-dim", type=int, default=defaults.context_dim)
    p.add_argument("--embed-dim", type=int, default=defaults.embed_dim)


def _add_train_flags(p: argparse.ArgumentParser, default_step_size: float) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics", default=None)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-size", type=float, default=default_step_size)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-8)


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="mwer", description=__doc__)
    parser.add_argument("--config", default=None, help="flat key = value defaults file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("generate-data", help="generate a synthetic dataset file")
    p.add_argument("--words", type=_word_list, required=True, help="comma-separated word list")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--words-per-utterance", type=_range_pair, default=(1, 3), metavar="LO:HI")
    p.add_argument("--frames-per-grapheme", type=_range_pair, default=(1, 2), metavar="LO:HI")
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    commands["generate-data"] = p

    p = sub.add_parser("train-ce", help="cross-entropy pretraining from scratch")
    _add_train_flags(p, default_step_size=1e-3)
    _add_model_flags(p)
    commands["train-ce"] = p

    p = sub.add_parser("train-mwer", help="MWER fine-tuning from a CE checkpoint")
    _add_train_flags(p, default_step_size=1e-4)  # convention: 10x below the CE default
    p.add_argument("--init-checkpoint", required=True)
    p.add_argument("--variant", choices=("nbest", "sample"), default="nbest")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--ce-weight", type=float, default=0.01)
    p.add_argument("--max-len", type=int, default=None)
    commands["train-mwer"] = p

    p = sub.add_parser("decode", help="write N-best lists for a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "train", "held_out", "test"), default="all")
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    commands["decode"] = p

    p = sub.add_parser("evaluate", help="per-utterance error stats and corpus WER")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "train", "held_out", "test"), default="test")
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--out", default=None)
    commands["evaluate"] = p

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--seed", type=int, default=0)
    commands["gradcheck"] = p

    p = sub.add_parser("experiment", help="run a training sweep from a CE checkpoint")
    p.add_argument("--kind", choices=EXPERIMENT_KINDS, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init-checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--max-steps", type=int, default=200)
    p.add_argument("--eval-every", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step-size", type=float, default=1e-4)
    p.add_argument("--ce-weight", type=float, default=0.01)
    p.add_argument("--max-len", type=int, default=None)
    commands["experiment"] = p

    return parser, commands


def _select_split(dataset, which: str):
    if which == "all":
        return dataset
    train_split, heldout_split, test_split = split(dataset, SPLIT_FRACTIONS)
    return {"train": train_split, "held_out": heldout_split, "test": test_split}[which]


def _write_out(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_generate_data(args) -> int:
    spec = TaskSpec(
        vocab_words=args.words,
        words_per_utterance=args.words_per_utterance,
        frames_per_grapheme=args.frames_per_grapheme,
        feature_dim=args.feature_dim,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    dataset = generate(spec, args.count)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} utterances to {args.out}")
    return 0


def _train_common(args, stage: str, loss: LossConfig, init_checkpoint=None) -> int:
    dataset = load_dataset(args.data)
    model = ModelConfig(
        input_dim=dataset.spec.feature_dim,
        encoder_layers=getattr(args, "encoder_layers", ModelConfig.encoder_layers),
        encoder_cells=getattr(args, "encoder_cells", ModelConfig.encoder_cells),
        bidirectional=getattr(args, "bidirectional", False),
        decoder_layers=getattr(args, "decoder_layers", ModelConfig.decoder_layers),
        decoder_cells=getattr(args, "decoder_cells", ModelConfig.decoder_cells),
        attention_heads=getattr(args, "attention_heads", ModelConfig.attention_heads),
        attention_dim=getattr(args, "attention_dim", ModelConfig.attention_dim),
        context_dim=getattr(args, "context_dim", ModelConfig.context_dim),
        embed_dim=getattr(args, "embed_dim", ModelConfig.embed_dim),
    )
    config = TrainConfig(
        stage=stage,
        loss=loss,
        adam=AdamConfig(
            step_size=args.step_size, beta1=args.beta1, beta2=args.beta2, epsilon=args.epsilon
        ),
        batch_size=args.batch_size,
        max_steps=args.max_steps,
        eval_every=args.eval_every,
        seed=args.seed,
        init_checkpoint=init_checkpoint,
        model=model,
    )
    result = train(config, dataset, metrics_path=args.metrics, checkpoint_path=args.out_checkpoint)
    final = result.records[-1]
    print(
        f"finished {config.max_steps} steps; held-out WER {final.heldout_wer:.3f}%; "
        f"checkpoint {args.out_checkpoint}"
    )
    return 0


def _cmd_train_ce(args) -> int:
    return _train_common(args, "ce", LossConfig(variant=CE))


def _cmd_train_mwer(args) -> int:
    variant = MWER_NBEST if args.variant == "nbest" else MWER_SAMPLE
    loss = LossConfig(variant=variant, n=args.n, ce_weight=args.ce_weight, max_len=args.max_len)
    return _train_common(args, "mwer", loss, init_checkpoint=args.init_checkpoint)


def _cmd_decode(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _select_split(load_dataset(args.data), args.split)
    blocks = []
    for utt in dataset.utterances:
        max_len = args.max_len or default_max_len(utt.num_frames)
        nbest = beam_search(params, utt.features, args.beam, max_len)
        blocks.append(format_nbest(utt.uid, nbest, params.vocab))
    _write_out("\n".join(blocks), args.out)
    return 0


def _cmd_evaluate(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _select_split(load_dataset(args.data), args.split)
    vocab = params.vocab
    lines = []
    pairs = []
    for utt in dataset.utterances:
        max_len = args.max_len or default_max_len(utt.num_frames)
        nbest = beam_search(params, utt.features, args.beam, max_len)
        hyp = to_words(nbest.top().labels, vocab)
        ref = to_words(utt.labels, vocab)
        stats = word_errors(hyp, ref)
        pairs.append((hyp, ref))
        lines.append(
            f"{utt.uid}\tsub={stats.substitutions}\tins={stats.insertions}"
            f"\tdel={stats.deletions}\tref={stats.reference_words}"
            f"\thyp={' '.join(hyp)}"
        )
    lines.append(f"corpus_wer={corpus_wer(pairs)!r}")
    _write_out("\n".join(lines), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed)
    for line in report.lines():
        print(line)
    return 0 if report.ok else RUNTIME_EXIT


def _cmd_experiment(args) -> int:
    dataset = load_dataset(args.data)
    loss = LossConfig(
        variant=MWER_NBEST, n=4, ce_weight=args.ce_weight, max_len=args.max_len
    )
    base = TrainConfig(
        stage="mwer",
        loss=loss,
        adam=AdamConfig(step_size=args.step_size),
        batch_size=args.batch_size,
        max_steps=args.max_steps,
        eval_every=args.eval_every,
        seed=args.seed,
        init_checkpoint=args.init_checkpoint,
    )
    summary = run_experiment_suite(args.kind, base, dataset, args.out_dir)
    print(summary.table())
    return 0


_HANDLERS = {
    "generate-data": _cmd_generate_data,
    "train-ce": _cmd_train_ce,
    "train-mwer": _cmd_train_mwer,
    "decode": _cmd_decode,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    try:
        if "--config" in argv:
            at = argv.index("--config")
            if at + 1 >= len(argv):
                parser.error("--config requires a path")
            command = next((a for a in argv if not a.startswith("-")), None)
            if command in commands:
                _apply_config_file(commands[command], parse_config_file(argv[at + 1]))
            del argv[at : at + 2]
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ContractError, CapacityError, MetricUndefinedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
