"""Autoregressive patch-Gaussian forecasting policy.

A small tanh MLP maps ``[context features | previous patches | one-hot step]``
to the mean and log-std of every point of the next patch. All inputs and
outputs live in the context-normalized space of the window: context
targets (and covariates) are normalized with their own context statistics,
forecasts are mapped back to raw units with the target context statistics.

Sampling and likelihood evaluation share :func:`_forward`; likelihoods are
teacher forced, i.e. step ``t`` conditions on the supplied patches
``1..t-1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import ForecastWindow, NormStats, PatchLayout, compute_norm_stats, denormalize, normalize
from .tape import Tape, Var

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
CHECKPOINT_FORMAT = "rftcast-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    context_multiplier: int = 2
    hidden_widths: tuple[int, ...] = (32,)
    patch_len: int = 8
    num_patches: int = 4
    num_target_variates: int = 1
    num_covariates: int = 0
    min_log_std: float = -7.0
    max_log_std: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        problems = []
        if self.context_multiplier < 1:
            problems.append("context_multiplier must be >= 1")
        if any(h < 1 for h in self.hidden_widths):
            problems.append("hidden widths must be >= 1")
        if self.patch_len < 1 or self.num_patches < 1 or self.num_target_variates < 1:
            problems.append("patch_len, num_patches and num_target_variates must be >= 1")
        if self.num_covariates < 0:
            problems.append("num_covariates must be >= 0")
        if not self.min_log_std < self.max_log_std:
            problems.append("min_log_std must be < max_log_std")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def layout(self) -> PatchLayout:
        return PatchLayout(self.patch_len, self.num_patches)

    @property
    def horizon(self) -> int:
        return self.patch_len * self.num_patches

    @property
    def context_len(self) -> int:
        return self.context_multiplier * self.horizon

    @property
    def patch_dim(self) -> int:
        return self.patch_len * self.num_target_variates

    @property
    def context_dim(self) -> int:
        return self.context_len * (self.num_target_variates + self.num_covariates)

    @property
    def input_dim(self) -> int:
        return self.context_dim + (self.num_patches - 1) * self.patch_dim + self.num_patches

    @property
    def output_dim(self) -> int:
        return 2 * self.patch_dim

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


@dataclass
class PolicyParams:
    config: PolicyConfig
    arrays: list[np.ndarray]  # W0, b0, W1, b1, ...

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def with_flat(self, theta: np.ndarray) -> "PolicyParams":
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.num_params:
            raise ValueError(f"expected {self.num_params} parameters, got {theta.size}")
        out, i = [], 0
        for a in self.arrays:
            out.append(theta[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        return PolicyParams(self.config, out)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, [a.copy() for a in self.arrays])


@dataclass
class PatchGaussian:
    mean: np.ndarray  # [p, N_d]
    log_std: np.ndarray  # [p, N_d]


@dataclass
class Rollout:
    patches: np.ndarray  # [N_p, p, N_d], context-normalized
    step_log_probs: np.ndarray  # [N_p]
    seed: tuple[int, ...] = field(default=())


@dataclass
class EncodedContext:
    features: np.ndarray
    stats: NormStats


def init_policy(cfg: PolicyConfig, seed: int) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    log-std head bias at -1."""
    rng = np.random.default_rng(seed)
    sizes = cfg.layer_sizes
    arrays = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        arrays.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        arrays.append(np.zeros(fan_out))
    arrays[-1][cfg.patch_dim:] = -1.0
    return PolicyParams(cfg, arrays)


def encode_context(window: ForecastWindow, cfg: PolicyConfig) -> EncodedContext:
    if window.L != cfg.context_len or window.num_targets != cfg.num_target_variates:
        raise ValueError(
            f"window shape (L={window.L}, N_d={window.num_targets}) does not match policy "
            f"(L={cfg.context_len}, N_d={cfg.num_target_variates})"
        )
    stats = compute_norm_stats(window.context_y)
    parts = [normalize(window.context_y, stats).ravel()]
    if cfg.num_covariates:
        x = window.context_x
        parts.append(normalize(x, compute_norm_stats(x)).ravel())
    return EncodedContext(np.concatenate(parts), stats)


def _as_vars(weights) -> list[Var]:
    return [w if isinstance(w, Var) else Var(w) for w in weights]


def _forward(weights, X: np.ndarray, cfg: PolicyConfig) -> tuple[Var, Var]:
    """Mean and clamped log-std, each ``[n, p*N_d]``."""
    ws = _as_vars(weights)
    h = X
    n_layers = len(ws) // 2
    for i in range(n_layers):
        h = h @ ws[2 * i] + ws[2 * i + 1]
        if i < n_layers - 1:
            h = h.tanh()
    k = cfg.patch_dim
    return h[:, :k], h[:, k:].clip(cfg.min_log_std, cfg.max_log_std)


def _gaussian_logpdf(y: np.ndarray, mean: Var, log_std: Var) -> Var:
    z = (y - mean) * (-log_std).exp()
    return (z.square() * -0.5 - log_std - HALF_LOG_2PI).sum(axis=1)


def _step_inputs(ctx: np.ndarray, prev: np.ndarray, t: int, cfg: PolicyConfig) -> np.ndarray:
    """Rows for 0-based step ``t``; ``prev`` is ``[n, N_p-1, p*N_d]`` zero padded."""
    onehot = np.zeros((ctx.shape[0], cfg.num_patches))
    onehot[:, t] = 1.0
    return np.concatenate([ctx, prev.reshape(ctx.shape[0], -1), onehot], axis=1)


def _teacher_inputs(ctx: np.ndarray, patches: np.ndarray, cfg: PolicyConfig) -> np.ndarray:
    """All step inputs for given patches ``[n, N_p, p, N_d]``, shape ``[n*N_p, C]``."""
    n, N_p = patches.shape[:2]
    flat = patches.reshape(n, N_p, cfg.patch_dim)
    rows = []
    for t in range(N_p):
        prev = np.zeros((n, N_p - 1, cfg.patch_dim))
        prev[:, :t] = flat[:, :t]
        rows.append(_step_inputs(ctx, prev, t, cfg))
    return np.stack(rows, axis=1).reshape(n * N_p, -1)


def step_distribution(params: PolicyParams, context_features: np.ndarray, prev_patches, t: int) -> PatchGaussian:
    """Distribution of patch ``t`` (1-based) given the ``t-1`` earlier patches."""
    cfg = params.config
    if not 1 <= t <= cfg.num_patches:
        raise ValueError(f"step {t} outside 1..{cfg.num_patches}")
    prev_patches = np.asarray(prev_patches, dtype=float).reshape(-1, cfg.patch_dim)
    if prev_patches.shape[0] != t - 1:
        raise ValueError(f"step {t} needs {t - 1} previous patches, got {prev_patches.shape[0]}")
    prev = np.zeros((1, cfg.num_patches - 1, cfg.patch_dim))
    prev[0, :t - 1] = prev_patches
    X = _step_inputs(np.asarray(context_features, dtype=float)[None, :], prev, t - 1, cfg)
    mean, log_std = _forward(params.arrays, X, cfg)
    shape = (cfg.patch_len, cfg.num_target_variates)
    return PatchGaussian(mean.value.reshape(shape), log_std.value.reshape(shape))


def rollout_noise(seed: Sequence[int], cfg: PolicyConfig) -> np.ndarray:
    return np.random.default_rng(list(seed)).standard_normal(
        (cfg.num_patches, cfg.patch_len, cfg.num_target_variates)
    )


def _seed_tuple(seed) -> tuple[int, ...]:
    return tuple(int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,)))


def sample_batch(params: PolicyParams, ctx: np.ndarray, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Autoregressive sampling for ``n`` rows of context features.

    ``noise`` holds standard normal draws ``[n, N_p, p, N_d]``; returns the
    sampled patches (same shape) and per-step log-densities ``[n, N_p]``.
    """
    cfg = params.config
    n, N_p = noise.shape[:2]
    prev = np.zeros((n, N_p - 1, cfg.patch_dim))
    patches = np.empty_like(noise)
    logps = np.empty((n, N_p))
    for t in range(N_p):
        mean, log_std = _forward(params.arrays, _step_inputs(ctx, prev, t, cfg), cfg)
        y = mean.value + np.exp(log_std.value) * noise[:, t].reshape(n, -1)
        logps[:, t] = _gaussian_logpdf(y, mean, log_std).value
        patches[:, t] = y.reshape(n, cfg.patch_len, cfg.num_target_variates)
        if t < N_p - 1:
            prev[:, t] = y
    return patches, logps


def sample_rollouts(params: PolicyParams, window: ForecastWindow, num: int, seed) -> list[Rollout]:
    """``num`` rollouts; rollout ``i`` draws its noise from ``(*seed, i)``."""
    enc = encode_context(window, params.config)
    base = _seed_tuple(seed)
    seeds = [(*base, i) for i in range(num)]
    noise = np.stack([rollout_noise(s, params.config) for s in seeds])
    patches, logps = sample_batch(params, np.repeat(enc.features[None, :], num, axis=0), noise)
    return [Rollout(patches[i], logps[i], seeds[i]) for i in range(num)]


def sample_rollout(params: PolicyParams, window: ForecastWindow, stats: NormStats | None = None, seed=0) -> Rollout:
    """Single rollout. ``stats`` is accepted for symmetry with the raw-space
    helpers; the model-input statistics always come from the context."""
    return sample_rollouts(params, window, 1, seed)[0]


def to_raw(patches: np.ndarray, stats: NormStats) -> np.ndarray:
    """Context-normalized patches ``[..., N_p, p, N_d]`` to raw ``[..., H, N_d]``."""
    lead = patches.shape[:-3]
    N_p, p, N_d = patches.shape[-3:]
    return denormalize(patches.reshape(*lead, N_p * p, N_d), stats)


def to_patches(seq: np.ndarray, stats: NormStats, cfg: PolicyConfig) -> np.ndarray:
    """Raw ``[..., H, N_d]`` to context-normalized patches ``[..., N_p, p, N_d]``."""
    seq = normalize(seq, stats)
    lead = seq.shape[:-2]
    return seq.reshape(*lead, cfg.num_patches, cfg.patch_len, cfg.num_target_variates)


def sample_paths(params: PolicyParams, window: ForecastWindow, num: int, seed) -> np.ndarray:
    """Raw-unit sample paths ``[num, H, N_d]``."""
    enc = encode_context(window, params.config)
    rolls = sample_rollouts(params, window, num, seed)
    return to_raw(np.stack([r.patches for r in rolls]), enc.stats)


def point_forecast(params: PolicyParams, window: ForecastWindow, num_samples: int = 100, seed=0) -> np.ndarray:
    """Mean of ``num_samples`` raw-unit sample paths."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    return sample_paths(params, window, num_samples, seed).mean(axis=0)


def log_prob_var(weights, ctx: np.ndarray, patches: np.ndarray, cfg: PolicyConfig) -> Var:
    """Teacher-forced per-step log-densities ``[n, N_p]`` as a tape value."""
    n, N_p = patches.shape[:2]
    mean, log_std = _forward(weights, _teacher_inputs(ctx, patches, cfg), cfg)
    y = patches.reshape(n * N_p, cfg.patch_dim)
    return _gaussian_logpdf(y, mean, log_std).reshape(n, N_p)


def log_prob(params: PolicyParams, window: ForecastWindow, patches) -> np.ndarray:
    cfg = params.config
    patches = np.asarray(patches, dtype=float)
    expected = (cfg.num_patches, cfg.patch_len, cfg.num_target_variates)
    if patches.shape != expected:
        raise ValueError(f"shape mismatch: patches {patches.shape}, expected {expected}")
    enc = encode_context(window, cfg)
    return log_prob_var(params.arrays, enc.features[None, :], patches[None], cfg).value[0]


def value_and_grad(params: PolicyParams, build: Callable[[list[Var]], Var]) -> tuple[float, np.ndarray]:
    """Evaluate a scalar built from the parameter leaves and its flat gradient."""
    tape = Tape()
    leaves = [tape.leaf(a) for a in params.arrays]
    out = build(leaves)
    tape.backward(out)
    return float(out.value), np.concatenate([v.grad.ravel() for v in leaves])


def save_checkpoint(params: PolicyParams, path: str | Path, extra: dict | None = None) -> None:
    """JSON container: format tag, version, config, per-array shapes, flat
    parameter vector. Floats are written with ``repr`` so they round-trip
    exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "shapes": [list(a.shape) for a in params.arrays],
        "params": params.flat().tolist(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    cfg = PolicyConfig(**doc["config"])
    theta = np.asarray(doc["params"], dtype=float)
    arrays, i = [], 0
    for shape in doc["shapes"]:
        size = int(np.prod(shape))
        arrays.append(theta[i:i + size].reshape(shape))
        i += size
    if i != theta.size:
        raise ValueError(f"{path}: parameter vector length does not match shapes")
    params = PolicyParams(cfg, arrays)
    expected = [(a, b) for a, b in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:])]
    if [tuple(a.shape) for a in arrays[::2]] != expected:
        raise ValueError(f"{path}: array shapes do not match the config")
    return params
