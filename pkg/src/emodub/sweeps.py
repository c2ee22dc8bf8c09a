"""Analysis sweeps over retrieval settings, emitting CSV-ready rows.

Three sweeps mirror the harness's analysis axes: top-K width per retrieval
mode, similarity metric per K, and library scale. All rows are produced in
deterministic sorted order; purity is the synthetic surrogate quality
signal (see :mod:`emodub.synthetic`).
"""

from __future__ import annotations

import csv
from typing import Iterable, Sequence

from .errors import ArgumentError
from .library import FootageLibrary
from .retrieval import Metric, Mode
from .synthetic import evaluate_purity


def sweep_topk(
    lib: FootageLibrary,
    k_values: Sequence[int],
    metric: Metric = Metric.COSINE,
    modes: Sequence[Mode] = (Mode.SPEAKER_AGNOSTIC, Mode.SPEAKER_SPECIFIC),
) -> list[dict]:
    """One row per (K, mode): purity and mean retrieval score."""
    if not k_values:
        raise ArgumentError("k_values must be non-empty")
    rows = []
    for k in sorted(k_values):
        for mode in modes:
            res = evaluate_purity(lib, k, metric, mode)
            rows.append(
                {
                    "k": k,
                    "mode": mode.value,
                    "purity": res.purity,
                    "mean_score": res.mean_score,
                }
            )
    return rows


def sweep_metric(
    lib: FootageLibrary,
    k_values: Sequence[int],
    metrics: Sequence[Metric] = (Metric.COSINE, Metric.DOT, Metric.NEG_EUCLIDEAN),
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
) -> list[dict]:
    """One row per (metric, K)."""
    if not k_values or not metrics:
        raise ArgumentError("k_values and metrics must be non-empty")
    rows = []
    for metric in metrics:
        for k in sorted(k_values):
            res = evaluate_purity(lib, k, metric, mode)
            rows.append({"metric": metric.value, "k": k, "purity": res.purity})
    return rows


def sweep_scale(
    lib: FootageLibrary,
    fractions: Sequence[float],
    k: int,
    metric: Metric = Metric.COSINE,
    mode: Mode = Mode.SPEAKER_AGNOSTIC,
    seed: int = 0,
) -> list[dict]:
    """One row per library fraction; each fraction subsamples deterministically."""
    if not fractions:
        raise ArgumentError("fractions must be non-empty")
    rows = []
    for fraction in sorted(fractions):
        sub = lib.subsample(fraction, seed)
        res = evaluate_purity(sub, k, metric, mode)
        rows.append({"fraction": fraction, "purity": res.purity})
    return rows


def write_csv(rows: Iterable[dict], fieldnames: Sequence[str], fh) -> None:
    """Write rows with a fixed header; floats keep 17 significant digits."""
    writer = csv.writer(fh)
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow(
            [f"{v:.17g}" if isinstance(v, float) else v for v in (row[f] for f in fieldnames)]
        )
