"""Series ingestion, synthetic generation, evaluation splits and normalization."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

EPS_STD = 1e-8

SHIFT_KINDS = ("amplitude", "frequency", "noise")


@dataclass
class MultivariateSeries:
    values: np.ndarray  # [T, N_d]
    covariates: np.ndarray  # [T, N_c]
    name: str = "series"
    sampling_rate: str = ""
    target_names: list[str] = field(default_factory=list)
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        T = self.values.shape[0]
        if self.covariates is None:
            self.covariates = np.zeros((T, 0))
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        if self.covariates.shape[0] != T:
            raise ValueError(f"values have {T} rows but covariates {self.covariates.shape[0]}")
        if T < 1:
            raise ValueError("series must have at least one row")
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.covariates))):
            raise ValueError("series contains non-finite values")
        if not self.target_names:
            self.target_names = [f"y{d + 1}" for d in range(self.num_targets)]
        if not self.covariate_names:
            self.covariate_names = [f"cov_{c + 1}" for c in range(self.num_covariates)]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_targets(self) -> int:
        return self.values.shape[1]

    @property
    def num_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass
class ForecastWindow:
    """One sample: ``L`` context rows followed immediately by ``H`` target rows.

    ``origin_index`` is the row of the source series where the target starts.
    """

    context_y: np.ndarray  # [L, N_d]
    context_x: np.ndarray  # [L, N_c]
    target_y: np.ndarray  # [H, N_d]
    origin_index: int

    @property
    def L(self) -> int:
        return self.context_y.shape[0]

    @property
    def H(self) -> int:
        return self.target_y.shape[0]

    @property
    def num_targets(self) -> int:
        return self.target_y.shape[1]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class PatchLayout:
    patch_len: int
    num_patches: int

    def __post_init__(self):
        if self.patch_len < 1 or self.num_patches < 1:
            raise ValueError("patch_len and num_patches must be >= 1")

    @property
    def horizon(self) -> int:
        return self.patch_len * self.num_patches

    @classmethod
    def for_horizon(cls, H: int, p: int) -> "PatchLayout":
        if p < 1 or H < 1 or H % p:
            raise ValueError(f"horizon {H} is not a whole number of patches of length {p}")
        return cls(p, H // p)


@dataclass
class DatasetSplit:
    train_windows: list[ForecastWindow]
    val_windows: list[ForecastWindow]
    test_windows: list[ForecastWindow]


@dataclass
class ShiftSpec:
    kind: str = "amplitude"
    onset_fraction: float = 1.0
    magnitude: float = 1.0


@dataclass
class SynthSpec:
    num_channels: int = 1
    length: int = 512
    base_freqs: list[float] = field(default_factory=lambda: [1 / 16])
    amplitudes: list[float] = field(default_factory=lambda: [1.0])
    noise_std: float = 0.0
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        allowed = {"num_channels", "length", "base_freqs", "amplitudes", "noise_std", "shift"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
        d = dict(d)
        shift = d.pop("shift", None) or {}
        unknown = set(shift) - {"kind", "onset_fraction", "magnitude"}
        if unknown:
            raise ValueError(f"unknown shift keys: {sorted(unknown)}")
        spec = cls(**d, shift=ShiftSpec(**shift))
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "num_channels": self.num_channels,
            "length": self.length,
            "base_freqs": list(self.base_freqs),
            "amplitudes": list(self.amplitudes),
            "noise_std": self.noise_std,
            "shift": {
                "kind": self.shift.kind,
                "onset_fraction": self.shift.onset_fraction,
                "magnitude": self.shift.magnitude,
            },
        }

    def validate(self) -> None:
        problems = []
        if self.num_channels < 1:
            problems.append("num_channels must be >= 1")
        if self.length < 1:
            problems.append("length must be >= 1")
        if len(self.base_freqs) != len(self.amplitudes):
            problems.append("base_freqs and amplitudes must have equal length")
        if self.noise_std < 0:
            problems.append("noise_std must be >= 0")
        if self.shift.kind not in SHIFT_KINDS:
            problems.append(f"shift.kind must be one of {SHIFT_KINDS}")
        if not 0.0 <= self.shift.onset_fraction <= 1.0:
            problems.append("shift.onset_fraction must lie in [0, 1]")
        if problems:
            raise ValueError("; ".join(problems))


def load_csv(path: str | Path) -> MultivariateSeries:
    """Read a CSV whose first column is a timestamp/index.

    Columns named ``cov_*`` become covariates, every other column a target.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    cols = header[1:]
    target_idx = [i for i, c in enumerate(cols) if not c.startswith("cov_")]
    cov_idx = [i for i, c in enumerate(cols) if c.startswith("cov_")]
    if not target_idx:
        raise ValueError("zero target columns")
    data = np.empty((len(rows) - 1, len(cols)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ValueError(f"row {r} has {len(row)} cells, expected {len(header)}")
        for c, cell in enumerate(row[1:], start=1):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("nan", "na", "null"):
                raise ValueError(f"missing value at row {r}, column {c}")
            try:
                v = float(cell)
            except ValueError:
                raise ValueError(f"non-numeric value {cell!r} at row {r}, column {c}") from None
            if not math.isfinite(v):
                raise ValueError(f"missing value at row {r}, column {c}")
            data[r - 1, c - 1] = v
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no data rows")
    return MultivariateSeries(
        values=data[:, target_idx],
        covariates=data[:, cov_idx],
        name=path.stem,
        target_names=[cols[i] for i in target_idx],
        covariate_names=[cols[i] for i in cov_idx],
    )


def save_csv(series: MultivariateSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *series.target_names, *series.covariate_names])
        for i in range(series.length):
            w.writerow([i, *map(repr, series.values[i].tolist()), *map(repr, series.covariates[i].tolist())])


def generate_synthetic(spec: SynthSpec | dict, seed: int | Sequence[int]) -> MultivariateSeries:
    """Sum of sinusoids plus iid Gaussian noise with one regime shift.

    From row ``floor(onset_fraction * length)`` on, the shifted quantity
    (amplitudes, frequencies or the noise level) is multiplied by
    ``magnitude``. Frequency shifts accumulate phase so the signal stays
    continuous across the onset. Channel phases are drawn from ``seed``.
    """
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.length
    onset = int(math.floor(spec.shift.onset_fraction * n))
    after = np.arange(n) >= onset
    freqs = np.asarray(spec.base_freqs, dtype=float)
    amps = np.asarray(spec.amplitudes, dtype=float)
    phases = rng.uniform(0.0, 2 * np.pi, size=(spec.num_channels, len(freqs)))

    amp_scale = np.where(after & (spec.shift.kind == "amplitude"), spec.shift.magnitude, 1.0)
    freq_scale = np.where(after & (spec.shift.kind == "frequency"), spec.shift.magnitude, 1.0)
    noise_scale = np.where(after & (spec.shift.kind == "noise"), spec.shift.magnitude, 1.0)

    # phase at row i is 2*pi*sum_{j<i} f_j so a frequency change never jumps
    step_phase = 2 * np.pi * freqs[None, :] * freq_scale[:, None]
    cum_phase = np.concatenate([np.zeros((1, len(freqs))), np.cumsum(step_phase, axis=0)[:-1]])
    values = np.empty((n, spec.num_channels))
    for d in range(spec.num_channels):
        waves = amps[None, :] * np.sin(cum_phase + phases[d][None, :])
        values[:, d] = amp_scale * waves.sum(axis=1)
    noise = rng.standard_normal((n, spec.num_channels))
    values += spec.noise_std * noise_scale[:, None] * noise
    return MultivariateSeries(values=values, covariates=np.zeros((n, 0)), name="synthetic")


def make_window(series: MultivariateSeries, origin: int, L: int, H: int) -> ForecastWindow:
    if origin < L or origin + H > series.length:
        raise ValueError(f"window at origin {origin} with L={L}, H={H} falls outside the series")
    return ForecastWindow(
        context_y=series.values[origin - L:origin].copy(),
        context_x=series.covariates[origin - L:origin].copy(),
        target_y=series.values[origin:origin + H].copy(),
        origin_index=origin,
    )


def split_eval_windows(series: MultivariateSeries, W: int, H: int, L: int, stride: int = 1) -> DatasetSplit:
    """Carve ``W`` test and ``W`` validation windows off the series tail.

    The last ``W*H`` rows are test targets and the ``W*H`` rows before them
    validation targets. Training windows step by ``stride`` and their
    targets end before the validation region.
    """
    if W < 1:
        raise ValueError("W must be ≥ 1")
    if H < 1 or L < 1 or stride < 1:
        raise ValueError("H, L and stride must be ≥ 1")
    T = series.length
    need = 2 * W * H + L + H
    if T < need:
        raise ValueError(f"series too short: T={T} < 2*W*H + L + H = {need}")
    test_start = T - W * H
    val_start = test_start - W * H
    test = [make_window(series, test_start + w * H, L, H) for w in range(W)]
    val = [make_window(series, val_start + w * H, L, H) for w in range(W)]
    train = [make_window(series, o, L, H) for o in range(L, val_start - H + 1, stride)]
    return DatasetSplit(train, val, test)


def subsample_fraction(split: DatasetSplit, fraction: float) -> DatasetSplit:
    """Keep the most recent ``ceil(fraction * n)`` training windows."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = len(split.train_windows)
    # guard against 0.2 * 100 == 20.000000000000004 style round-up
    keep = min(n, math.ceil(round(fraction * n, 9)))
    return replace(split, train_windows=split.train_windows[n - keep:])


def compute_norm_stats(seq: np.ndarray) -> NormStats:
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    mean = seq.mean(axis=0)
    std = np.maximum(seq.std(axis=0), EPS_STD)
    return NormStats(mean, std)


def target_norm_stats(window: ForecastWindow) -> NormStats:
    return compute_norm_stats(window.target_y)


def context_norm_stats(window: ForecastWindow) -> NormStats:
    return compute_norm_stats(window.context_y)


def _check(seq: np.ndarray, stats: NormStats) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if seq.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"shape mismatch: last axis {seq.shape[-1]} vs {stats.mean.shape[0]} variates")
    return seq


def normalize(seq: np.ndarray, stats: NormStats) -> np.ndarray:
    return (_check(seq, stats) - stats.mean) / stats.std


def denormalize(seq: np.ndarray, stats: NormStats) -> np.ndarray:
    return _check(seq, stats) * stats.std + stats.mean


def effective_horizon(H: int, p: int) -> int:
    """Largest whole-patch horizon not exceeding ``H`` (warns on truncation)."""
    eff = (H // p) * p
    if eff < 1:
        raise ValueError(f"horizon {H} is shorter than one patch of length {p}")
    if eff != H:
        log.warning("horizon %d is not a multiple of patch length %d; truncating to %d", H, p, eff)
    return eff


def salt_with_noise(
    windows: Sequence[ForecastWindow], fraction: float, seed: int, scale: float | None = None
) -> tuple[list[ForecastWindow], list[int]]:
    """Replace a random ``fraction`` of windows by iid Gaussian noise windows.

    Noise has the per-variate std of the original window's targets unless
    ``scale`` is given. Returns the new list and the replaced positions.
    """
    rng = np.random.default_rng(seed)
    n = len(windows)
    k = int(round(fraction * n))
    picked = sorted(rng.choice(n, size=k, replace=False).tolist()) if k else []
    out = list(windows)
    for i in picked:
        w = windows[i]
        full = np.concatenate([w.context_y, w.target_y])
        sd = np.full(full.shape[1], scale) if scale is not None else np.maximum(full.std(axis=0), EPS_STD)
        noisy = full.mean(axis=0) + sd * rng.standard_normal(full.shape)
        out[i] = ForecastWindow(noisy[: w.L], w.context_x.copy(), noisy[w.L:], w.origin_index)
    return out, picked
