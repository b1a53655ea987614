"""End-to-end wiring: data, warm-start policy, selection, finetuning."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .config import RunConfig
from .data import (
    DatasetSplit,
    ForecastWindow,
    MultivariateSeries,
    SynthSpec,
    effective_horizon,
    generate_synthetic,
    load_csv,
    make_window,
    split_eval_windows,
    subsample_fraction,
)
from .policy import PolicyConfig, PolicyParams, init_policy, load_checkpoint
from .selection import SelectionVerdict, select_windows
from .trainer import GroupBatch, TrainConfig, TrainRecord, TrainResult, train_rft, train_sft

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    series: MultivariateSeries
    split: DatasetSplit
    policy_config: PolicyConfig

    @property
    def H(self) -> int:
        return self.policy_config.horizon

    @property
    def L(self) -> int:
        return self.policy_config.context_len


def load_series(cfg: RunConfig) -> MultivariateSeries:
    data = cfg["data"]
    if data["csv_path"] is not None:
        return load_csv(data["csv_path"])
    return generate_synthetic(SynthSpec.from_dict(data["synth_spec"]), data["synth_seed"])


def prepare_data(cfg: RunConfig, series: MultivariateSeries | None = None) -> PreparedData:
    data, pol = cfg["data"], cfg["policy"]
    series = series if series is not None else load_series(cfg)
    H = effective_horizon(data["H"], data["p"])
    L = pol["context_multiplier"] * H
    pc = PolicyConfig(
        context_multiplier=pol["context_multiplier"],
        hidden_widths=tuple(pol["hidden_widths"]),
        patch_len=data["p"],
        num_patches=H // data["p"],
        num_target_variates=series.num_targets,
        num_covariates=series.num_covariates,
        min_log_std=pol["min_log_std"],
        max_log_std=pol["max_log_std"],
    )
    split = split_eval_windows(series, data["W"], H, L, data["stride"])
    split = subsample_fraction(split, data["fraction"])
    return PreparedData(series, split, pc)


def corpus_windows(series: MultivariateSeries, L: int, H: int, stride: int = 1) -> list[ForecastWindow]:
    return [make_window(series, o, L, H) for o in range(L, series.length - H + 1, stride)]


def pretrain_corpus(corpus: dict, seed: int, num_targets: int, num_covariates: int) -> list[MultivariateSeries]:
    """Two-tone series with log-uniform periods and uniform amplitudes.

    Tones are drawn once per series and shared by its channels; the
    generator still gives each channel its own phases and noise.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.log(corpus["period_range"])
    a_lo, a_hi = corpus["amplitude_range"]
    out = []
    for i in range(corpus["num_series"]):
        periods = np.exp(rng.uniform(lo, hi, 2))
        spec = SynthSpec(
            num_channels=num_targets,
            length=corpus["length"],
            base_freqs=[float(f) for f in 1.0 / periods],
            amplitudes=[float(a) for a in rng.uniform(a_lo, a_hi, 2)],
            noise_std=corpus["noise_std"],
        )
        s = generate_synthetic(spec, [seed, i])
        out.append(MultivariateSeries(s.values, np.zeros((s.length, num_covariates))))
    return out


def warm_start(cfg: RunConfig, pc: PolicyConfig) -> PolicyParams:
    """Initial (pre-finetuning) policy: a checkpoint, or a short
    maximum-likelihood run on a held-out synthetic corpus."""
    pre = cfg["pretrain"]
    if pre["checkpoint"] is not None:
        params = load_checkpoint(pre["checkpoint"])
        if params.config != pc:
            raise ValueError("pretrain.checkpoint was trained for a different policy configuration")
        return params
    params = init_policy(pc, cfg["policy"]["seed"])
    if pre["steps"] == 0:
        return params
    windows = []
    for series in pretrain_corpus(pre["corpus"], pre["synth_seed"], pc.num_target_variates, pc.num_covariates):
        windows += corpus_windows(series, pc.context_len, pc.horizon, pre["corpus"]["stride"])
    tc = TrainConfig(
        learning_rate=pre["learning_rate"],
        batch_size=pre["batch_size"],
        max_steps=pre["steps"],
        eval_every=max(pre["steps"], 1),
        seed=pre["seed"],
    )
    return train_sft(params, DatasetSplit(windows, [], []), tc).final_params


def run_selection(cfg: RunConfig, windows: list[ForecastWindow], policy: PolicyParams) -> tuple[list[ForecastWindow], list[SelectionVerdict]]:
    return select_windows(windows, policy, cfg.thresholds, cfg["selection"]["seed"])


def finetune_sft(
    cfg: RunConfig,
    prepared: PreparedData,
    init: PolicyParams,
    on_record: Callable[[TrainRecord], None] | None = None,
) -> TrainResult:
    return train_sft(init, prepared.split, cfg.train, on_record=on_record)


def finetune_rft(
    cfg: RunConfig,
    prepared: PreparedData,
    init: PolicyParams,
    ref: PolicyParams,
    train_windows: list[ForecastWindow] | None = None,
    on_record: Callable[[TrainRecord], None] | None = None,
    trace: Callable[[int, GroupBatch], None] | None = None,
) -> TrainResult:
    split = prepared.split
    if train_windows is not None:
        split = replace(split, train_windows=train_windows)
    return train_rft(init, ref, split, cfg.train, cfg.rewards, cfg.shaping, on_record=on_record, trace=trace)
