"""Forecasting-difficulty data selection.

A training window is dropped when the initial policy already covers it
with its 50% interval (too easy), misses it with its 90% interval (too
hard), or when the raw series is spectrally close to white noise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import ForecastWindow
from .policy import PolicyParams, sample_paths


class Decision(str, enum.Enum):
    KEPT = "Kept"
    DROPPED = "Dropped"


class Reason(str, enum.Enum):
    NONE = "None"
    EASY_PICP = "EasyPICP"
    HARD_PICP = "HardPICP"
    HIGH_SE = "HighSE"


@dataclass(frozen=True)
class SelectionThresholds:
    picp50_easy: float = 0.70
    picp90_hard: float = 0.70
    se_max: float = 0.5
    num_samples: int = 100
    q50: tuple[float, float] = (0.25, 0.75)
    q90: tuple[float, float] = (0.05, 0.95)
    se_reduce: str = "mean"

    def __post_init__(self):
        for name in ("picp50_easy", "picp90_hard", "se_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.num_samples < 2:
            raise ValueError("num_samples must be >= 2")
        if self.se_reduce not in ("mean", "max"):
            raise ValueError("se_reduce must be 'mean' or 'max'")
        for q in (self.q50, self.q90):
            _check_quantiles(*q)


@dataclass(frozen=True)
class SelectionVerdict:
    decision: Decision
    reason: Reason
    picp50: float
    picp90: float
    se: float
    origin_index: int = -1

    @property
    def kept(self) -> bool:
        return self.decision is Decision.KEPT

    def to_dict(self) -> dict:
        return {
            "origin_index": self.origin_index,
            "decision": self.decision.value,
            "reason": self.reason.value,
            "picp50": self.picp50,
            "picp90": self.picp90,
            "se": self.se,
        }


def _check_quantiles(q_low: float, q_high: float) -> None:
    if not 0.0 <= q_low < q_high <= 1.0:
        raise ValueError(f"invalid quantile pair ({q_low}, {q_high})")


def sample_quantiles(samples: np.ndarray, q_low: float, q_high: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-point empirical quantiles over axis 0, linear between order statistics."""
    _check_quantiles(q_low, q_high)
    lo, hi = np.quantile(np.asarray(samples, dtype=float), [q_low, q_high], axis=0, method="linear")
    return lo, hi


def interval_bounds(
    policy: PolicyParams, window: ForecastWindow, S: int, q_low: float, q_high: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise ``[H, N_d]`` interval bounds from ``S`` policy rollouts."""
    _check_quantiles(q_low, q_high)
    if S < 2:
        raise ValueError("S must be >= 2")
    return sample_quantiles(sample_paths(policy, window, S, seed), q_low, q_high)


def picp(gt, low, high) -> float:
    """Fraction of points with ``low <= gt <= high``."""
    gt, low, high = (np.asarray(a, dtype=float) for a in (gt, low, high))
    if not gt.shape == low.shape == high.shape:
        raise ValueError("shape mismatch between ground truth and bounds")
    if np.any(low > high):
        raise ValueError("lower bound exceeds upper bound")
    return float(np.mean((gt >= low) & (gt <= high)))


def spectral_entropy(seq) -> float:
    """Shannon entropy of the normalized one-sided power spectrum (DC
    excluded) divided by ``ln(N_xi)``; 0 for a constant series."""
    x = np.asarray(seq, dtype=float).ravel()
    if x.size < 4:
        raise ValueError("spectral entropy needs at least 4 points")
    if np.ptp(x) == 0:
        return 0.0
    power = np.abs(np.fft.rfft(x)[1:x.size // 2 + 1]) ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    prob = power / total
    nz = prob[prob > 0]
    return float(min(max(-np.sum(nz * np.log(nz)) / np.log(power.size), 0.0), 1.0))


def window_spectral_entropy(window: ForecastWindow, reduce: str = "mean") -> float:
    full = np.concatenate([window.context_y, window.target_y])
    values = [spectral_entropy(full[:, d]) for d in range(full.shape[1])]
    return float(np.max(values) if reduce == "max" else np.mean(values))


def select(window: ForecastWindow, policy: PolicyParams, th: SelectionThresholds, seed: int) -> SelectionVerdict:
    """Verdict for one window under the initial policy.

    Both intervals are read off the same ``th.num_samples`` rollouts.
    Criteria are checked in order easy, hard, high-SE.
    """
    paths = sample_paths(policy, window, th.num_samples, seed)
    p50 = picp(window.target_y, *sample_quantiles(paths, *th.q50))
    p90 = picp(window.target_y, *sample_quantiles(paths, *th.q90))
    se = window_spectral_entropy(window, th.se_reduce)
    if p50 > th.picp50_easy:
        reason = Reason.EASY_PICP
    elif p90 < th.picp90_hard:
        reason = Reason.HARD_PICP
    elif se > th.se_max:
        reason = Reason.HIGH_SE
    else:
        reason = Reason.NONE
    decision = Decision.KEPT if reason is Reason.NONE else Decision.DROPPED
    return SelectionVerdict(decision, reason, p50, p90, se, window.origin_index)


def select_windows(
    windows: list[ForecastWindow], policy: PolicyParams, th: SelectionThresholds, seed: int
) -> tuple[list[ForecastWindow], list[SelectionVerdict]]:
    """Filter a window list; window ``i`` is scored with seed ``(seed, i)``."""
    verdicts = [select(w, policy, th, (seed, i)) for i, w in enumerate(windows)]
    kept = [w for w, v in zip(windows, verdicts) if v.kept]
    return kept, verdicts
