"""Per-round evaluation records and byte-stable CSV emission.

CSV files are RFC-4180 style (comma separated, CRLF rows, header first) with
floats printed at 6 significant digits, so a rerun of the same configuration
reproduces files byte for byte. Wall-clock time is kept on the in-memory log
only; it never enters a CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelParams, forward_features, forward_logits
from .numerics import normalize_rows


def accuracy(params: ModelParams, x, y) -> float:
    """Fraction of samples whose arg-max logit matches the label."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    logits = forward_logits(params, forward_features(params, x))
    return float(np.mean(np.argmax(logits, axis=1) == y))


def feature_variance(features_by_class: dict[int, np.ndarray]) -> float:
    """Mean distance from each normalized feature to its class center.

    The center is the mean of the class's normalized features; the metric is
    the average Euclidean distance over all samples. 0 means every class
    collapsed to a point on the sphere.
    """
    if not features_by_class:
        raise ValueError("no features given")
    dists = []
    for m in sorted(features_by_class):
        feats = np.asarray(features_by_class[m], dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError(f"class {m} has no samples")
        fn = normalize_rows(feats)
        center = fn.mean(axis=0)
        dists.append(np.linalg.norm(fn - center, axis=1))
    return float(np.mean(np.concatenate(dists)))


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    domain_acc: tuple[float, ...]
    avg_acc: float
    global_acc: float
    feature_var: float
    domain_proto_mean: tuple[float, ...]
    protos_uploaded: int
    protos_downloaded_per_client: int
    model_scalars_exchanged: int


@dataclass
class MetricsLog:
    domain_names: list[str]
    initial_domain_acc: list[float]
    initial_avg_acc: float
    rounds: list[RoundRecord] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def final_round(self) -> RoundRecord:
        if not self.rounds:
            raise ValueError("log has no rounds")
        return self.rounds[-1]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def round_csv_header(domain_names: list[str]) -> list[str]:
    return (
        ["round"]
        + [f"acc_{n}" for n in domain_names]
        + ["acc_avg", "acc_global", "feature_variance"]
        + [f"protos_{n}" for n in domain_names]
        + ["protos_uploaded", "protos_downloaded_per_client", "model_scalars_exchanged"]
    )


def write_rounds_csv(log: MetricsLog, path) -> Path:
    """One row per trained round (round 0 evaluation stays off the CSV)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(round_csv_header(log.domain_names))
        for r in log.rounds:
            w.writerow(
                [_fmt(r.round_index)]
                + [_fmt(a) for a in r.domain_acc]
                + [_fmt(r.avg_acc), _fmt(r.global_acc), _fmt(r.feature_var)]
                + [_fmt(p) for p in r.domain_proto_mean]
                + [
                    _fmt(r.protos_uploaded),
                    _fmt(r.protos_downloaded_per_client),
                    _fmt(r.model_scalars_exchanged),
                ]
            )
    return path


def summarize_final(logs: list[MetricsLog]) -> dict[str, float]:
    """Mean and sample std (over seeds) of the final-round headline numbers."""
    if not logs:
        raise ValueError("no logs to summarize")
    names = logs[0].domain_names
    finals = [log.final_round() for log in logs]

    def mstd(values):
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return float(arr.mean()), std

    out: dict[str, float] = {}
    for i, n in enumerate(names):
        out[f"acc_{n}_mean"], out[f"acc_{n}_std"] = mstd([f.domain_acc[i] for f in finals])
    out["acc_avg_mean"], out["acc_avg_std"] = mstd([f.avg_acc for f in finals])
    out["feature_variance_mean"], out["feature_variance_std"] = mstd(
        [f.feature_var for f in finals]
    )
    out["protos_downloaded_mean"], _ = mstd(
        [np.mean([r.protos_downloaded_per_client for r in log.rounds]) for log in logs]
    )
    return out


def write_summary_csv(rows: list[tuple[str, dict[str, float]]], path) -> Path:
    """Variant-labelled summary rows; a delta_avg column compares each
    variant's mean average accuracy against the first row's."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0][1].keys())
    base = rows[0][1]["acc_avg_mean"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", *keys, "delta_avg"])
        for name, stats in rows:
            w.writerow(
                [name]
                + [_fmt(stats[k]) for k in keys]
                + [_fmt(stats["acc_avg_mean"] - base)]
            )
    return path
