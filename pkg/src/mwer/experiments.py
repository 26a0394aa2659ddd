"""Sweep runners over the MWER fine-tuning stage: sample-count and N-best
depth sweeps plus the cross-entropy interpolation-weight sweep. Each sweep
writes one metrics log per configuration and a plain-text summary table."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .data import Dataset
from .errors import ConfigError
from .losses import MWER_NBEST, MWER_SAMPLE
from .training import MetricsRecord, TrainConfig, train

SWEEP_N_VALUES = (1, 2, 4, 8)
SWEEP_LAMBDA_VALUES = (0.0, 0.001, 0.01, 0.1, 1.0)

SAMPLE_EXPECTED_ERRORS = "sample_expected_errors"
SAMPLE_WER = "sample_wer"
NBEST_WER = "nbest_wer"
LAMBDA_SWEEP = "lambda_sweep"
EXPERIMENT_KINDS = (SAMPLE_EXPECTED_ERRORS, SAMPLE_WER, NBEST_WER, LAMBDA_SWEEP)


@dataclass
class ExperimentRow:
    label: str
    first: float
    final: float
    records: list[MetricsRecord]
    metrics_path: str


@dataclass
class ExperimentSummary:
    kind: str
    metric: str
    rows: list[ExperimentRow]

    def table(self) -> str:
        lines = [f"kind={self.kind} metric={self.metric}"]
        for row in self.rows:
            lines.append(
                f"{row.label}\tinitial={row.first!r}\tfinal={row.final!r}\t{row.metrics_path}"
            )
        return "\n".join(lines)


def _metric_of(record: MetricsRecord, metric: str) -> float:
    return record.heldout_expected_errors if metric == "expected_errors" else record.heldout_wer


def run_experiment_suite(
    kind: str, base_config: TrainConfig, dataset: Dataset, out_dir: str | Path
) -> ExperimentSummary:
    """Run the requested sweep from a fixed CE checkpoint.

    ``base_config`` must be an MWER-stage config whose init_checkpoint
    exists; the sweep varies the loss settings around it.
    """
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}, expected one of {EXPERIMENT_KINDS}")
    if not base_config.init_checkpoint or not Path(base_config.init_checkpoint).exists():
        raise ConfigError("experiments require an existing CE init_checkpoint")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs: list[tuple[str, TrainConfig]] = []
    if kind in (SAMPLE_EXPECTED_ERRORS, SAMPLE_WER):
        metric = "expected_errors" if kind == SAMPLE_EXPECTED_ERRORS else "wer"
        for n in SWEEP_N_VALUES:
            loss = replace(base_config.loss, variant=MWER_SAMPLE, n=n)
            runs.append((f"n={n}", replace(base_config, loss=loss)))
    elif kind == NBEST_WER:
        metric = "wer"
        for n in SWEEP_N_VALUES:
            loss = replace(base_config.loss, variant=MWER_NBEST, n=n)
            runs.append((f"n={n}", replace(base_config, loss=loss)))
    else:
        metric = "wer"
        for lam in SWEEP_LAMBDA_VALUES:
            loss = replace(base_config.loss, variant=MWER_NBEST, n=4, ce_weight=lam)
            runs.append((f"lambda={lam}", replace(base_config, loss=loss)))

    rows = []
    for label, config in runs:
        metrics_path = out_dir / f"{kind}.{label.replace('=', '_')}.metrics.jsonl"
        result = train(config, dataset, metrics_path=metrics_path)
        rows.append(
            ExperimentRow(
                label=label,
                first=_metric_of(result.records[0], metric),
                final=_metric_of(result.records[-1], metric),
                records=result.records,
                metrics_path=str(metrics_path),
            )
        )
    summary = ExperimentSummary(kind=kind, metric=metric, rows=rows)
    (out_dir / f"{kind}.summary.txt").write_text(summary.table() + "\n", encoding="utf-8")
    return summary
