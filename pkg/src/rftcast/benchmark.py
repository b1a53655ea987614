"""Paired directional experiments on the reference shift series.

Both experiments share one warm-start policy (it plays the part of the
pretrained model) and vary the data seed and training seed per run.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

from .config import RunConfig, resolve
from .data import salt_with_noise
from .evaluation import evaluate
from .pipeline import finetune_rft, finetune_sft, prepare_data, run_selection, warm_start
from .policy import PolicyParams

log = logging.getLogger(__name__)

# paper group size; step budget is the TrainConfig default
BENCH_OVERRIDES = {"data": {"fraction": 0.2}, "train": {"G": 8, "max_steps": 500, "eval_every": 50}}


@dataclass
class PairedRun:
    seed: int
    baseline_mse: float
    candidate_mse: float
    num_train: int
    num_kept: int


@dataclass
class DirectionalResult:
    name: str
    runs: list[PairedRun] = field(default_factory=list)
    required_wins: int = 7
    ties_win: bool = True

    def candidate_wins(self, run: PairedRun) -> bool:
        if self.ties_win:
            return run.candidate_mse <= run.baseline_mse
        return run.candidate_mse < run.baseline_mse

    @property
    def wins(self) -> int:
        return sum(self.candidate_wins(r) for r in self.runs)

    @property
    def passed(self) -> bool:
        return self.wins >= self.required_wins

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "wins": self.wins,
            "required_wins": self.required_wins,
            "passed": self.passed,
            "ties_win": self.ties_win,
            "runs": [asdict(r) for r in self.runs],
        }


def bench_config(overrides: list[str] | None = None) -> RunConfig:
    return resolve(BENCH_OVERRIDES, overrides)


def _run_config(base: RunConfig, seed: int) -> RunConfig:
    raw = dict(base.raw)
    raw["data"] = {**raw["data"], "synth_seed": seed}
    raw["train"] = {**raw["train"], "seed": seed}
    return resolve(raw)


def _rft_mse(cfg, prepared, init, windows) -> float:
    # nothing survived selection: the policy stays at its warm start
    params = finetune_rft(cfg, prepared, init, init, windows).params if windows else init
    return _test_mse(cfg, prepared, params)


def _test_mse(cfg: RunConfig, prepared, params: PolicyParams) -> float:
    ev = cfg["eval"]
    return evaluate(params, prepared.split.test_windows, ev["num_samples"], ev["seed"]).aggregate_mse


def shift_benchmark(base: RunConfig, num_runs: int = 10, init: PolicyParams | None = None) -> DirectionalResult:
    """SFT (baseline) against the full recipe, selection then RFT (candidate)."""
    result = DirectionalResult("rft_vs_sft")
    for seed in range(num_runs):
        cfg = _run_config(base, seed)
        prepared = prepare_data(cfg)
        if init is None:
            init = warm_start(cfg, prepared.policy_config)
        kept, _ = run_selection(cfg, prepared.split.train_windows, init)
        sft = _test_mse(cfg, prepared, finetune_sft(cfg, prepared, init).params)
        rft = _rft_mse(cfg, prepared, init, kept)
        result.runs.append(PairedRun(seed, sft, rft, len(prepared.split.train_windows), len(kept)))
        log.info("run %d: sft %.4f rft %.4f kept %d", seed, sft, rft, len(kept))
    return result


def selection_ablation(
    base: RunConfig, num_runs: int = 10, noise_fraction: float = 0.3, init: PolicyParams | None = None
) -> DirectionalResult:
    """RFT without selection (baseline) against RFT with it (candidate),
    with ``noise_fraction`` of the training windows replaced by white noise.

    The candidate wins a run only when strictly better, since the claim
    is that dropping selection degrades the result.
    """
    result = DirectionalResult("selection_ablation", ties_win=False)
    for seed in range(num_runs):
        cfg = _run_config(base, seed)
        prepared = prepare_data(cfg)
        if init is None:
            init = warm_start(cfg, prepared.policy_config)
        salted, _ = salt_with_noise(prepared.split.train_windows, noise_fraction, seed)
        kept, _ = run_selection(cfg, salted, init)
        without = _rft_mse(cfg, prepared, init, salted)
        full = _rft_mse(cfg, prepared, init, kept)
        result.runs.append(PairedRun(seed, without, full, len(salted), len(kept)))
        log.info("run %d: no-selection %.4f full %.4f kept %d", seed, without, full, len(kept))
    return result
