"""Reward shaping and step-wise group-normalized reward-to-go advantages."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rewards import RewardTable

EPS_STD = 1e-8


@dataclass(frozen=True)
class ShapingConfig:
    tau: float = 0.8
    alpha: float = 0.01

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class AdvantageTable:
    values: np.ndarray  # [G+1, N_p, N_d]
    eps_std: float = EPS_STD

    def per_step(self) -> np.ndarray:
        """Mean over variates, ``[G+1, N_p]``."""
        return self.values.mean(axis=2)

    def to_dict(self) -> dict:
        return {"eps_std": self.eps_std, "values": self.values.tolist()}


def shape_reward(r: float, cfg: ShapingConfig) -> float:
    if r < cfg.tau:
        return r
    return cfg.tau + cfg.alpha * math.log1p(r - cfg.tau)


def shape_array(r: np.ndarray, cfg: ShapingConfig) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    above = r >= cfg.tau
    out = r.copy()
    out[above] = cfg.tau + cfg.alpha * np.log1p(r[above] - cfg.tau)
    return out


def shape_table(table: RewardTable, cfg: ShapingConfig) -> RewardTable:
    """Log-compress every combined reward above ``tau``, ground-truth row included."""
    return table.with_combined(shape_array(table.combined, cfg))


def step_advantages(shaped: RewardTable | np.ndarray, eps_std: float = EPS_STD) -> AdvantageTable:
    """Reward-to-go of deviations from the group mean of sequence-average rewards.

    Mean and population std are taken per variate over the ``G+1``
    sequence averages. A variate whose averages have no spread (std at or
    below ``eps_std``) carries no learning signal and gets all-zero
    advantages.
    """
    r = shaped.combined if isinstance(shaped, RewardTable) else shaped
    # extended-precision intermediates so results are correctly rounded
    # where the platform provides them (x86 long double)
    r = np.asarray(r, dtype=np.longdouble)
    seq_avg = r.mean(axis=1)  # [G+1, N_d]
    m = seq_avg.mean(axis=0)
    s = seq_avg.std(axis=0)
    dev = (r - m[None, None, :]) / np.maximum(s, eps_std)[None, None, :]
    togo = np.flip(np.cumsum(np.flip(dev, axis=1), axis=1), axis=1).astype(float)
    flat = s <= eps_std
    if np.any(flat):
        togo[:, :, flat] = 0.0
    return AdvantageTable(togo, eps_std)
