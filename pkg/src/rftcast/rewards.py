"""Step-wise temporal rewards for a group of forecasts against the ground truth.

Every component is computed on sequences normalized with the target window's
mean and std. Accuracy and variability are per patch, the frequency term is
per sequence and replicated over patches so the combined reward stays dense
over (patch, variate).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import NormStats, PatchLayout, normalize


@dataclass(frozen=True)
class RewardWeights:
    lambda_acc: float = 0.9
    lambda_var: float = 0.1
    lambda_syn: float = 0.01

    def __post_init__(self):
        if min(self.lambda_acc, self.lambda_var, self.lambda_syn) < 0:
            raise ValueError("reward weights must be non-negative")

    @property
    def max_combined(self) -> float:
        return self.lambda_acc + self.lambda_var + 2 * self.lambda_syn


@dataclass(frozen=True)
class StepRewardComponents:
    acc: float
    var: float
    freq: float
    syn: float
    combined: float


@dataclass
class RewardTable:
    """Reward components indexed ``[member, patch, variate]``.

    Row ``group_size`` (the last one) is the ground truth.
    """

    acc: np.ndarray
    var: np.ndarray
    freq: np.ndarray
    syn: np.ndarray
    combined: np.ndarray
    layout: PatchLayout
    group_size: int

    def entry(self, k: int, t: int, d: int) -> StepRewardComponents:
        return StepRewardComponents(
            float(self.acc[k, t, d]), float(self.var[k, t, d]), float(self.freq[k, t, d]),
            float(self.syn[k, t, d]), float(self.combined[k, t, d]),
        )

    def with_combined(self, combined: np.ndarray) -> "RewardTable":
        return replace(self, combined=np.asarray(combined, dtype=float))

    def to_dict(self) -> dict:
        return {
            "group_size": self.group_size,
            "patch_len": self.layout.patch_len,
            "num_patches": self.layout.num_patches,
            **{k: getattr(self, k).tolist() for k in ("acc", "var", "freq", "syn", "combined")},
        }


def _log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    gt = np.asarray(gt, dtype=float).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {gt.size}")
    return pred, gt


def accuracy_reward(pred_patch, gt_patch) -> float:
    """``exp(-mean squared error)`` of two normalized patches."""
    pred, gt = _pair(pred_patch, gt_patch)
    return float(np.exp(-np.mean((pred - gt) ** 2)))


def variability_reward(pred_patch, gt_patch) -> float:
    """``exp(-KL(softmax(pred) || softmax(gt)))`` over the points of a patch."""
    pred, gt = _pair(pred_patch, gt_patch)
    lp, lq = _log_softmax(pred), _log_softmax(gt)
    kl = max(float(np.sum(np.exp(lp) * (lp - lq))), 0.0)
    return float(np.exp(-kl))


@dataclass(frozen=True)
class FrequencySpectrum:
    bins: np.ndarray  # complex, wavenumbers 1..floor(H/2)

    @property
    def num_bins(self) -> int:
        return self.bins.shape[0]


def _rfft_bins(seq: np.ndarray) -> np.ndarray:
    H = seq.shape[0]
    if H < 2:
        raise ValueError("need at least 2 points for a spectrum")
    return np.fft.rfft(seq, axis=0)[1:H // 2 + 1]


def dft_one_sided(seq) -> FrequencySpectrum:
    """DFT bins ``1..floor(H/2)`` (DC dropped)."""
    return FrequencySpectrum(_rfft_bins(np.asarray(seq, dtype=float)))


def freq_weights(num_bins: int) -> np.ndarray:
    """Softmax over wavenumbers ``1..num_bins``; mass grows with frequency."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    xi = np.arange(1, num_bins + 1, dtype=float)
    e = np.exp(xi - xi[-1])
    return e / e.sum()


def _freq_from_spectra(spec_pred: np.ndarray, spec_gt: np.ndarray, axis: int = 0) -> np.ndarray:
    n_xi = spec_pred.shape[axis]
    w = freq_weights(n_xi)
    shape = [1] * spec_pred.ndim
    shape[axis] = n_xi
    sq = np.abs(spec_pred - spec_gt) ** 2
    return np.exp(-np.sum(w.reshape(shape) * sq, axis=axis) / n_xi)


def frequency_reward(pred_seq, gt_seq) -> float:
    pred, gt = _pair(pred_seq, gt_seq)
    return float(_freq_from_spectra(_rfft_bins(pred), _rfft_bins(gt)))


def synergy_reward(acc: float, var: float, freq: float) -> float:
    return acc * var + acc * freq


def combined_reward(acc: float, var: float, syn: float, weights: RewardWeights) -> float:
    return weights.lambda_acc * acc + weights.lambda_var * var + weights.lambda_syn * syn


def build_reward_table(
    group_forecasts,
    gt,
    layout: PatchLayout,
    stats: NormStats,
    weights: RewardWeights,
) -> RewardTable:
    """Score ``G`` raw forecasts ``[G, H, N_d]`` against raw ``gt`` ``[H, N_d]``.

    The appended ground-truth row carries acc = var = freq = 1 by
    construction rather than by recomputation.
    """
    F = np.asarray(group_forecasts, dtype=float)
    Y = np.asarray(gt, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if F.ndim == 2:
        F = F[..., None]
    G = F.shape[0]
    H, N_d = Y.shape
    p, N_p = layout.patch_len, layout.num_patches
    if F.shape[1:] != (H, N_d):
        raise ValueError(f"shape mismatch: forecasts {F.shape[1:]} vs ground truth {(H, N_d)}")
    if H != layout.horizon:
        raise ValueError(f"shape mismatch: horizon {H} vs layout {p}x{N_p}")

    pred = normalize(F, stats)
    true = normalize(Y, stats)
    P = pred.reshape(G, N_p, p, N_d)
    Q = true.reshape(1, N_p, p, N_d)

    acc = np.exp(-np.mean((P - Q) ** 2, axis=2))
    lp, lq = _log_softmax(P, axis=2), _log_softmax(Q, axis=2)
    kl = np.maximum(np.sum(np.exp(lp) * (lp - lq), axis=2), 0.0)
    var = np.exp(-kl)
    if H >= 2:
        freq_seq = _freq_from_spectra(_rfft_bins(np.moveaxis(pred, 1, 0)), _rfft_bins(true)[:, None, :], axis=0)
    else:
        freq_seq = np.ones((G, N_d))
    freq = np.broadcast_to(freq_seq[:, None, :], (G, N_p, N_d))

    ones = np.ones((1, N_p, N_d))
    acc = np.concatenate([acc, ones])
    var = np.concatenate([var, ones])
    freq = np.concatenate([freq, ones])
    syn = acc * var + acc * freq
    combined = weights.lambda_acc * acc + weights.lambda_var * var + weights.lambda_syn * syn
    return RewardTable(acc, var, freq, syn, combined, layout, G)
