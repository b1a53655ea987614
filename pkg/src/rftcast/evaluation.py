"""Point-forecast metrics in raw units and paired report comparison."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ForecastWindow
from .policy import PolicyParams, point_forecast


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred, gt


def mse(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean((pred - gt) ** 2))


def mae(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


@dataclass
class WindowScore:
    window_index: int
    origin_index: int
    mse: float
    mae: float


@dataclass
class EvalReport:
    per_window: list[WindowScore]
    aggregate_mse: float
    aggregate_mae: float
    num_samples_used: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_window=[WindowScore(**w) for w in d["per_window"]],
            aggregate_mse=d["aggregate_mse"],
            aggregate_mae=d["aggregate_mae"],
            num_samples_used=d["num_samples_used"],
            seed=d["seed"],
        )

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_index", "origin_index", "mse", "mae"])
            for s in self.per_window:
                w.writerow([s.window_index, s.origin_index, repr(s.mse), repr(s.mae)])


def evaluate(params: PolicyParams, windows: Sequence[ForecastWindow], num_samples: int = 100, seed: int = 0) -> EvalReport:
    """MSE/MAE of the mean of ``num_samples`` sample paths per window.

    Window ``i`` draws its paths from seed ``(seed, i)`` so each window is
    reproducible on its own.
    """
    if not windows:
        raise ValueError("no windows to evaluate")
    scores = []
    for i, w in enumerate(windows):
        pred = point_forecast(params, w, num_samples, (seed, i))
        scores.append(WindowScore(i, w.origin_index, mse(pred, w.target_y), mae(pred, w.target_y)))
    return EvalReport(
        per_window=scores,
        aggregate_mse=float(np.mean([s.mse for s in scores])),
        aggregate_mae=float(np.mean([s.mae for s in scores])),
        num_samples_used=num_samples,
        seed=seed,
    )


@dataclass
class ComparisonSummary:
    delta_mse_pct: float
    delta_mae_pct: float
    win_rate: float
    num_windows: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(a: float, b: float) -> float:
    if a == 0:
        return 0.0 if b == 0 else float("inf")
    return 100.0 * (b - a) / a


def compare(report_a: EvalReport, report_b: EvalReport) -> ComparisonSummary:
    """How ``report_b`` fares relative to ``report_a``.

    Negative deltas mean ``b`` has lower error. ``win_rate`` is the share of
    windows where ``b`` has the lower MSE, ties counting one half.
    """
    ids_a = [(s.window_index, s.origin_index) for s in report_a.per_window]
    ids_b = [(s.window_index, s.origin_index) for s in report_b.per_window]
    if ids_a != ids_b:
        raise ValueError("reports cover different window sets")
    wins = [
        1.0 if b.mse < a.mse else 0.5 if b.mse == a.mse else 0.0
        for a, b in zip(report_a.per_window, report_b.per_window)
    ]
    return ComparisonSummary(
        delta_mse_pct=_pct(report_a.aggregate_mse, report_b.aggregate_mse),
        delta_mae_pct=_pct(report_a.aggregate_mae, report_b.aggregate_mae),
        win_rate=float(np.mean(wins)),
        num_windows=len(wins),
    )
