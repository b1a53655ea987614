"""Supervised and GRPO-style reinforcement finetuning of the patch policy."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .advantage import AdvantageTable, ShapingConfig, shape_table, step_advantages
from .data import DatasetSplit, ForecastWindow, NormStats, target_norm_stats
from .evaluation import evaluate
from .policy import (
    PolicyParams,
    Rollout,
    encode_context,
    log_prob_var,
    rollout_noise,
    sample_batch,
    to_patches,
    to_raw,
    value_and_grad,
)
from .rewards import RewardTable, RewardWeights, build_reward_table
from .tape import Var, minimum

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.001
    G: int = 8
    eps_clip: float = 0.2
    gt_in_loss: bool = True
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    batch_size: int = 128
    max_steps: int = 500
    eval_every: int = 50
    seed: int = 0
    grad_clip: float = 10.0
    kl_clamp: float = 20.0
    ppo_epochs: int = 1
    val_num_samples: int = 100
    val_seed: int = 0
    log_wall_time: bool = False

    def __post_init__(self):
        problems = []
        if self.beta < 0:
            problems.append("beta must be >= 0")
        if self.G < 1:
            problems.append("G must be >= 1")
        if not 0 < self.eps_clip < 1:
            problems.append("eps_clip must lie in (0, 1)")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.weight_decay < 0:
            problems.append("weight_decay must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_steps < 0:
            problems.append("max_steps must be >= 0")
        if self.eval_every < 1:
            problems.append("eval_every must be >= 1")
        if self.ppo_epochs < 1:
            problems.append("ppo_epochs must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainRecord:
    step: int
    loss: float
    mean_combined_reward: float
    mean_kl: float
    mean_advantage_abs: float
    grad_norm: float
    wall_time_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: PolicyParams  # best validation checkpoint
    final_params: PolicyParams
    records: list[TrainRecord]
    val_history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(theta: np.ndarray, grads: np.ndarray, state: OptimizerState, lr: float, weight_decay: float = 0.0):
    """One Adam update with bias correction and decoupled weight decay.

    A non-finite gradient skips the update and leaves the state untouched.
    """
    if theta.shape != grads.shape:
        raise ValueError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grads)):
        log.warning("non-finite gradient at optimizer step %d; update skipped", state.step + 1)
        return theta, state
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grads * grads
    m_hat = m / (1 - ADAM_BETA1 ** t)
    v_hat = v / (1 - ADAM_BETA2 ** t)
    theta = theta - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + weight_decay * theta)
    return theta, OptimizerState(m, v, t)


def clip_grad(grads: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(grads))
    if max_norm > 0 and norm > max_norm:
        grads = grads * (max_norm / norm)
    return grads, norm


@dataclass
class _Prepared:
    features: np.ndarray
    stats: NormStats  # context stats, model space
    target_stats: NormStats  # reward space
    gt_patches: np.ndarray  # [N_p, p, N_d] in model space
    window: ForecastWindow


def _prepare(windows: Sequence[ForecastWindow], params: PolicyParams) -> list[_Prepared]:
    cfg = params.config
    out = []
    for w in windows:
        enc = encode_context(w, cfg)
        out.append(_Prepared(enc.features, enc.stats, target_norm_stats(w), to_patches(w.target_y, enc.stats, cfg), w))
    return out


def sft_loss(params: PolicyParams, batch: Sequence[ForecastWindow]) -> tuple[float, np.ndarray]:
    """Teacher-forced NLL of the ground-truth patches, averaged over steps and
    windows. Returns the value and the flat gradient."""
    if not batch:
        raise ValueError("empty batch")
    return _sft_loss(params, _prepare(batch, params))


def _sft_loss(params: PolicyParams, prep: list[_Prepared]) -> tuple[float, np.ndarray]:
    ctx = np.stack([p.features for p in prep])
    patches = np.stack([p.gt_patches for p in prep])
    return value_and_grad(params, lambda ws: -log_prob_var(ws, ctx, patches, params.config).mean())


def kl_estimate(logp_theta: float, logp_ref: float, clamp: float = 20.0) -> float:
    """``x - ln x - 1`` with ``x = f_ref / f_theta``; the log-ratio is clamped
    to ``[-clamp, clamp]`` before exponentiation."""
    d = min(max(logp_ref - logp_theta, -clamp), clamp)
    return math.expm1(d) - d


def _kl_var(logp: Var, logp_ref: np.ndarray, clamp: float) -> Var:
    d = (logp_ref - logp).clip(-clamp, clamp)
    return d.exp() - d - 1.0


def rft_loss(
    params: PolicyParams,
    ref_params: PolicyParams,
    windows: Sequence[ForecastWindow],
    rollouts: Sequence[Sequence[Rollout]],
    advantages: Sequence[AdvantageTable],
    cfg: TrainConfig,
    old_log_probs: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Group policy-gradient loss (minimized) with a k3 KL penalty to ``ref_params``.

    ``advantages[b]`` covers the ``G`` rollouts of window ``b`` plus the
    ground truth as last member; per-step advantages are averaged over
    variates and held constant. With ``cfg.gt_in_loss`` the ground-truth
    trajectory contributes its own teacher-forced term. ``old_log_probs``
    (``[B, G', N_p]``) switches from the on-policy form to the clipped
    importance-ratio form.
    """
    value, grad, _ = _rft_loss(params, ref_params, _prepare(windows, params), rollouts, advantages, cfg, old_log_probs)
    return value, grad


def _member_patches(prep: list[_Prepared], rollouts, gt_in_loss: bool) -> np.ndarray:
    rows = []
    for p, group in zip(prep, rollouts):
        members = [r.patches for r in group]
        if gt_in_loss:
            members.append(p.gt_patches)
        rows.append(np.stack(members))
    return np.stack(rows)  # [B, G', N_p, p, N_d]


def _rft_loss(params, ref_params, prep, rollouts, advantages, cfg: TrainConfig, old_log_probs=None):
    if len(prep) != len(rollouts) or len(prep) != len(advantages):
        raise ValueError("windows, rollouts and advantages are misaligned")
    pc = params.config
    patches = _member_patches(prep, rollouts, cfg.gt_in_loss)
    B, Gp = patches.shape[:2]
    N_p = pc.num_patches
    adv = np.stack([a.per_step() for a in advantages])
    if adv.shape[1] != len(rollouts[0]) + 1 or adv.shape[2] != N_p:
        raise ValueError(f"advantage table shape {adv.shape[1:]} does not match group")
    adv = adv[:, :Gp].reshape(B * Gp, N_p)
    flat = patches.reshape(B * Gp, *patches.shape[2:])
    ctx = np.repeat(np.stack([p.features for p in prep]), Gp, axis=0)
    ref_lp = log_prob_var(ref_params.arrays, ctx, flat, ref_params.config).value
    old = None if old_log_probs is None else np.asarray(old_log_probs, dtype=float).reshape(B * Gp, N_p)
    diag = {}

    def build(ws):
        lp = log_prob_var(ws, ctx, flat, pc)
        if old is None:
            surrogate = lp * adv
        else:
            ratio = (lp - old).exp()
            surrogate = minimum(ratio * adv, ratio.clip(1 - cfg.eps_clip, 1 + cfg.eps_clip) * adv)
        kl = _kl_var(lp, ref_lp, cfg.kl_clamp)
        diag["kl"] = float(kl.value.mean())
        return -(surrogate - kl * cfg.beta).mean()

    value, grad = value_and_grad(params, build)
    diag["adv_abs"] = float(np.abs(adv).mean())
    return value, grad, diag


def _batch_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    if batch_size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=batch_size, replace=False))


def _val_mse(params: PolicyParams, windows, cfg: TrainConfig) -> float:
    return evaluate(params, windows, cfg.val_num_samples, cfg.val_seed).aggregate_mse


class _Checkpointer:
    def __init__(self, params: PolicyParams, val_windows, cfg: TrainConfig):
        self.val_windows = list(val_windows)
        self.cfg = cfg
        self.history: list[tuple[int, float]] = []
        self.best = params.copy()
        self.best_step = 0
        self.best_mse = math.inf
        self.offer(0, params)

    def offer(self, step: int, params: PolicyParams) -> None:
        if not self.val_windows:
            self.best, self.best_step = params.copy(), step
            return
        mse = _val_mse(params, self.val_windows, self.cfg)
        self.history.append((step, mse))
        if mse < self.best_mse:
            self.best, self.best_step, self.best_mse = params.copy(), step, mse


def _clock(cfg: TrainConfig) -> Callable[[], float]:
    if cfg.log_wall_time:
        return lambda: time.perf_counter() * 1000.0
    return lambda: 0.0


def train_sft(
    params: PolicyParams,
    split: DatasetSplit,
    cfg: TrainConfig,
    on_record: Callable[[TrainRecord], None] | None = None,
) -> TrainResult:
    """Minibatch maximum-likelihood finetuning, keeping the best-validation parameters."""
    train = _prepare(split.train_windows, params)
    if not train and cfg.max_steps:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    theta = params.flat()
    state = OptimizerState.zeros(theta.size)
    ckpt = _Checkpointer(params, split.val_windows, cfg)
    clock = _clock(cfg)
    records = []
    current = params
    for step in range(1, cfg.max_steps + 1):
        t0 = clock()
        batch = [train[i] for i in _batch_indices(rng, len(train), cfg.batch_size)]
        loss, grad = _sft_loss(current, batch)
        grad, gnorm = clip_grad(grad, cfg.grad_clip)
        theta, state = adam_step(theta, grad, state, cfg.learning_rate, cfg.weight_decay)
        current = params.with_flat(theta)
        rec = TrainRecord(step, loss, 0.0, 0.0, 0.0, gnorm, clock() - t0)
        records.append(rec)
        if on_record:
            on_record(rec)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            ckpt.offer(step, current)
    return TrainResult(ckpt.best, current, records, ckpt.history, ckpt.best_step)


@dataclass
class GroupBatch:
    """Everything derived from one round of on-policy sampling."""

    prep: list[_Prepared]
    rollouts: list[list[Rollout]]
    tables: list[RewardTable]
    advantages: list[AdvantageTable]
    log_probs: np.ndarray  # [B, G, N_p] under the sampling policy


def generate_group_batch(
    params: PolicyParams,
    prep: list[_Prepared],
    G: int,
    seeds: Sequence[tuple[int, ...]],
    weights: RewardWeights,
    shaping: ShapingConfig,
) -> GroupBatch:
    """Sample ``G`` rollouts per window, score them and derive advantages."""
    pc = params.config
    B = len(prep)
    member_seeds = [[(*s, k) for k in range(G)] for s in seeds]
    noise = np.stack([rollout_noise(ms, pc) for row in member_seeds for ms in row])
    ctx = np.repeat(np.stack([p.features for p in prep]), G, axis=0)
    patches, logps = sample_batch(params, ctx, noise)
    patches = patches.reshape(B, G, *patches.shape[1:])
    logps = logps.reshape(B, G, -1)
    rollouts, tables, advs = [], [], []
    for b, p in enumerate(prep):
        rollouts.append([Rollout(patches[b, k], logps[b, k], member_seeds[b][k]) for k in range(G)])
        raw = to_raw(patches[b], p.stats)
        table = build_reward_table(raw, p.window.target_y, pc.layout, p.target_stats, weights)
        tables.append(table)
        advs.append(step_advantages(shape_table(table, shaping)))
    return GroupBatch(prep, rollouts, tables, advs, logps)


def train_rft(
    params: PolicyParams,
    ref_params: PolicyParams,
    split: DatasetSplit,
    cfg: TrainConfig,
    reward_weights: RewardWeights = RewardWeights(),
    shaping: ShapingConfig = ShapingConfig(),
    on_record: Callable[[TrainRecord], None] | None = None,
    trace: Callable[[int, GroupBatch], None] | None = None,
) -> TrainResult:
    """Reinforcement finetuning loop over an already filtered split.

    Each step samples a minibatch, draws ``G`` rollouts per window from the
    current policy, scores and shapes rewards, computes step-wise
    advantages and takes ``cfg.ppo_epochs`` Adam steps on the group loss.
    With the default single epoch the sampling policy is the policy being
    updated and the importance ratio is identically one.
    """
    train = _prepare(split.train_windows, params)
    if not train and cfg.max_steps:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed)
    theta = params.flat()
    state = OptimizerState.zeros(theta.size)
    ckpt = _Checkpointer(params, split.val_windows, cfg)
    clock = _clock(cfg)
    records = []
    current = params
    for step in range(1, cfg.max_steps + 1):
        t0 = clock()
        idx = _batch_indices(rng, len(train), cfg.batch_size)
        prep = [train[i] for i in idx]
        seeds = [(cfg.seed, step, int(i)) for i in idx]
        gb = generate_group_batch(current, prep, cfg.G, seeds, reward_weights, shaping)
        if trace:
            trace(step, gb)
        old = None
        if cfg.ppo_epochs > 1:
            old = gb.log_probs
            if cfg.gt_in_loss:
                ctx = np.stack([p.features for p in prep])
                gt = np.stack([p.gt_patches for p in prep])
                gt_lp = log_prob_var(current.arrays, ctx, gt, current.config).value
                old = np.concatenate([old, gt_lp[:, None, :]], axis=1)
        for _ in range(cfg.ppo_epochs):
            loss, grad, diag = _rft_loss(current, ref_params, prep, gb.rollouts, gb.advantages, cfg, old)
            grad, gnorm = clip_grad(grad, cfg.grad_clip)
            theta, state = adam_step(theta, grad, state, cfg.learning_rate, cfg.weight_decay)
            current = params.with_flat(theta)
        mean_reward = float(np.mean([t.combined[: t.group_size].mean() for t in gb.tables]))
        rec = TrainRecord(step, loss, mean_reward, diag["kl"], diag["adv_abs"], gnorm, clock() - t0)
        records.append(rec)
        if on_record:
            on_record(rec)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            ckpt.offer(step, current)
    return TrainResult(ckpt.best, current, records, ckpt.history, ckpt.best_step)
