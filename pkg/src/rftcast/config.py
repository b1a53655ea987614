"""Run configuration: one JSON document, defaults filled in, every problem reported."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .advantage import ShapingConfig
from .data import SynthSpec
from .rewards import RewardWeights
from .selection import SelectionThresholds
from .trainer import TrainConfig

# Two-sinusoid series with a x1.5 amplitude shift at 60% of its length.
REFERENCE_SYNTH = {
    "num_channels": 1,
    "length": 600,
    "base_freqs": [1 / 16, 1 / 40],
    "amplitudes": [1.0, 0.5],
    "noise_std": 0.1,
    "shift": {"kind": "amplitude", "onset_fraction": 0.6, "magnitude": 1.5},
}

# Held-out corpus for the warm-start run that stands in for pretraining:
# many two-tone series with log-uniform periods between 6 and 64 steps.
PRETRAIN_CORPUS = {
    "num_series": 1000,
    "length": 200,
    "period_range": [6.0, 64.0],
    "amplitude_range": [0.3, 1.2],
    "noise_std": 0.1,
    "stride": 2,
}

_TRAIN_DEFAULTS = {f.name: f.default for f in fields(TrainConfig)}
_TRAIN_DEFAULTS.update(batch_size=32, G=4, max_steps=200, eval_every=25)

DEFAULTS: dict[str, Any] = {
    "data": {
        "csv_path": None,
        "synth_spec": REFERENCE_SYNTH,
        "synth_seed": 0,
        "L": None,
        "H": 32,
        "W": 4,
        "p": 8,
        "fraction": 1.0,
        "stride": 1,
    },
    "policy": {
        "context_multiplier": 2,
        "hidden_widths": [64],
        "min_log_std": -7.0,
        "max_log_std": 2.0,
        "seed": 0,
    },
    "pretrain": {
        "checkpoint": None,
        "corpus": PRETRAIN_CORPUS,
        "synth_seed": 1,
        "steps": 10000,
        "learning_rate": 2e-3,
        "batch_size": 32,
        "seed": 0,
    },
    "selection": {
        "enabled": True,
        "picp50_easy": 0.70,
        "picp90_hard": 0.70,
        "se_max": 0.5,
        "num_samples": 100,
        "q50": [0.25, 0.75],
        "q90": [0.05, 0.95],
        "se_reduce": "mean",
        "seed": 0,
    },
    "rewards": {"lambda_acc": 0.9, "lambda_var": 0.1, "lambda_syn": 0.01},
    "shaping": {"tau": 0.8, "alpha": 0.01},
    "train": _TRAIN_DEFAULTS,
    "eval": {"num_samples": 100, "seed": 1234, "split": "test"},
    "output_dir": "runs/default",
}

# sections whose values are free-form dicts validated elsewhere
_OPAQUE = {("data", "synth_spec")}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class RunConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    @property
    def rewards(self) -> RewardWeights:
        return RewardWeights(**self.raw["rewards"])

    @property
    def shaping(self) -> ShapingConfig:
        return ShapingConfig(**self.raw["shaping"])

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(**self.raw["train"])

    @property
    def thresholds(self) -> SelectionThresholds:
        s = {k: v for k, v in self.raw["selection"].items() if k not in ("enabled", "seed")}
        s["q50"], s["q90"] = tuple(s["q50"]), tuple(s["q90"])
        return SelectionThresholds(**s)

    def fingerprint(self, *sections: str) -> str:
        doc = {s: self.raw[s] for s in sections}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _merge(defaults: dict, given: dict, path: str, problems: list[str]) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            problems.append(f"unknown key: {where}")
            continue
        if isinstance(defaults[key], dict) and (path, key) not in _OPAQUE:
            if not isinstance(value, dict):
                problems.append(f"{where} must be an object")
                continue
            out[key] = _merge(defaults[key], value, where, problems)
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not key=value"])
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = doc
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {key!r} descends into a non-object"])
        node[parts[-1]] = _parse_value(value)
    return doc


def _try(problems: list[str], label: str, fn) -> None:
    try:
        fn()
    except (TypeError, ValueError) as exc:
        problems.append(f"{label}: {exc}")


def resolve(doc: dict | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Merge ``doc`` and overrides over the defaults and validate all sections."""
    doc = apply_overrides(doc or {}, overrides or [])
    problems: list[str] = []
    raw = _merge(DEFAULTS, doc, "", problems)
    data = raw["data"]
    if data["csv_path"] is not None:
        data["synth_spec"] = None
    elif data["synth_spec"] is None:
        problems.append("data: one of csv_path or synth_spec is required")
    else:
        _try(problems, "data.synth_spec", lambda: SynthSpec.from_dict(data["synth_spec"]))
    if not isinstance(data["synth_seed"], int) or data["synth_seed"] < 0:
        problems.append("data.synth_seed must be a non-negative integer")
    for key in ("H", "W", "p", "stride"):
        if not isinstance(data[key], int) or data[key] < 1:
            problems.append(f"data.{key} must be an integer >= 1")
    if not isinstance(data["fraction"], (int, float)) or not 0 < data["fraction"] <= 1:
        problems.append("data.fraction must lie in (0, 1]")
    pol = raw["policy"]
    if not isinstance(pol["context_multiplier"], int) or pol["context_multiplier"] < 1:
        problems.append("policy.context_multiplier must be an integer >= 1")
    if not isinstance(pol["hidden_widths"], list) or not all(isinstance(h, int) and h >= 1 for h in pol["hidden_widths"]):
        problems.append("policy.hidden_widths must be a list of integers >= 1")
    if not pol["min_log_std"] < pol["max_log_std"]:
        problems.append("policy.min_log_std must be < policy.max_log_std")
    if data["L"] is not None and isinstance(data["H"], int) and isinstance(pol["context_multiplier"], int):
        if data["L"] != pol["context_multiplier"] * data["H"]:
            problems.append("data.L must equal policy.context_multiplier * data.H (or be null)")
    pre = raw["pretrain"]
    corpus = pre["corpus"]
    for key in ("num_series", "length", "stride"):
        if not isinstance(corpus[key], int) or corpus[key] < 1:
            problems.append(f"pretrain.corpus.{key} must be an integer >= 1")
    for key in ("period_range", "amplitude_range"):
        r = corpus[key]
        if not (isinstance(r, list) and len(r) == 2 and 0 < r[0] <= r[1]):
            problems.append(f"pretrain.corpus.{key} must be [low, high] with 0 < low <= high")
    periods_given = isinstance(corpus["period_range"], list) and len(corpus["period_range"]) == 2
    if periods_given and isinstance(corpus["period_range"][0], (int, float)) and corpus["period_range"][0] < 2:
        problems.append("pretrain.corpus.period_range must stay above the Nyquist period 2")
    if not isinstance(corpus["noise_std"], (int, float)) or corpus["noise_std"] < 0:
        problems.append("pretrain.corpus.noise_std must be >= 0")
    if not isinstance(pre["steps"], int) or pre["steps"] < 0:
        problems.append("pretrain.steps must be an integer >= 0")
    sel = raw["selection"]
    if not isinstance(sel["enabled"], bool):
        problems.append("selection.enabled must be a boolean")
    cfg = RunConfig(raw)
    _try(problems, "selection", lambda: cfg.thresholds)
    _try(problems, "rewards", lambda: cfg.rewards)
    _try(problems, "shaping", lambda: cfg.shaping)
    _try(problems, "train", lambda: cfg.train)
    ev = raw["eval"]
    if not isinstance(ev["num_samples"], int) or ev["num_samples"] < 1:
        problems.append("eval.num_samples must be an integer >= 1")
    if ev["split"] not in ("val", "test"):
        problems.append("eval.split must be 'val' or 'test'")
    if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
        problems.append("output_dir must be a non-empty string")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError([f"config file not found: {p}"])
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"]) from None
        if not isinstance(doc, dict):
            raise ConfigError(["config root must be an object"])
    return resolve(doc, overrides)
