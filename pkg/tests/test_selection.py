import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import constant_policy, sine_window
from rftcast.data import ForecastWindow
from rftcast.policy import PolicyConfig
from rftcast.selection import (
    Decision,
    Reason,
    SelectionThresholds,
    interval_bounds,
    picp,
    sample_quantiles,
    select,
    select_windows,
    spectral_entropy,
    window_spectral_entropy,
)

CFG = PolicyConfig(hidden_widths=(), patch_len=8, num_patches=4)
TH = SelectionThresholds()


def test_sample_quantiles_linear_oracle():
    lo, hi = sample_quantiles(np.array([[1.0], [2.0], [3.0], [4.0]]), 0.25, 0.75)
    assert (lo[0], hi[0]) == (1.75, 3.25)
    same = np.full((10, 3), 2.5)
    lo, hi = sample_quantiles(same, 0.05, 0.95)
    assert np.all(lo == hi)
    with pytest.raises(ValueError):
        sample_quantiles(same, 0.7, 0.3)
    with pytest.raises(ValueError):
        sample_quantiles(same, -0.1, 0.3)


def test_interval_bounds_of_near_deterministic_policy():
    cfg = PolicyConfig(hidden_widths=(), patch_len=4, num_patches=2, min_log_std=-80.0, max_log_std=2.0)
    pol = constant_policy(cfg, mean=0.3, log_std=-80.0)
    w = sine_window(cfg)
    lo, hi = interval_bounds(pol, w, 20, 0.05, 0.95, seed=1)
    np.testing.assert_array_equal(lo, hi)
    # context is mean 0, std 1, so the raw forecast is the normalized mean
    np.testing.assert_allclose(lo, 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        interval_bounds(pol, w, 1, 0.05, 0.95, seed=1)


def test_picp_examples():
    gt = np.arange(6.0).reshape(3, 2)
    assert picp(gt, gt - 1, gt + 1) == 1.0
    low = gt - 1
    high = gt + np.array([[1, 1], [1, -0.5], [-0.5, -0.5]])
    high = np.maximum(high, low)
    assert picp(gt, low, high) == 0.5
    assert picp(gt, gt, gt) == 1.0
    with pytest.raises(ValueError):
        picp(gt, gt + 1, gt)
    with pytest.raises(ValueError):
        picp(gt, gt[:2], gt[:2])


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (30, 4), elements=st.floats(-3, 3)),
    arrays(np.float64, 4, elements=st.floats(-3, 3)),
    st.floats(0.0, 0.45), st.floats(0.0, 0.45),
)
def test_picp_monotone_under_widening(samples, gt, a, b):
    inner = sample_quantiles(samples, 0.5 - a / 2, 0.5 + a / 2 + 1e-9)
    wide = a + b
    outer = sample_quantiles(samples, 0.5 - wide / 2 - 1e-9, 0.5 + wide / 2 + 2e-9)
    p_in, p_out = picp(gt, *inner), picp(gt, *outer)
    assert 0.0 <= p_in <= p_out <= 1.0


def test_spectral_entropy_examples():
    n = 64
    assert spectral_entropy(np.sin(2 * np.pi * 5 * np.arange(n) / n)) == pytest.approx(0.0, abs=1e-9)
    assert spectral_entropy(np.full(20, 3.3)) == 0.0
    with pytest.raises(ValueError):
        spectral_entropy([1.0, 2.0, 3.0])


def test_white_noise_entropy_matches_exponential_limit():
    # periodogram ordinates of white noise are ~iid exponential, whose
    # normalized entropy tends to 1 - (1 - euler_gamma) / ln(N)
    limit = 1 - (1 - np.euler_gamma) / np.log(256)
    se = [spectral_entropy(np.random.default_rng(s).standard_normal(512)) for s in range(20)]
    assert abs(np.mean(se) - limit) < 0.004
    assert np.mean(se) == pytest.approx(0.922933126251244, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.integers(4, 40), elements=st.floats(-100, 100)))
def test_spectral_entropy_bounds(x):
    assert 0.0 <= spectral_entropy(x) <= 1.0


def test_window_se_reduction():
    rng = np.random.default_rng(0)
    clean = np.sin(2 * np.pi * np.arange(24) / 8)
    full = np.stack([clean, rng.standard_normal(24)], axis=1)
    w = ForecastWindow(full[:16], np.zeros((16, 0)), full[16:], 16)
    a, b = spectral_entropy(full[:, 0]), spectral_entropy(full[:, 1])
    assert window_spectral_entropy(w) == pytest.approx((a + b) / 2)
    assert window_spectral_entropy(w, "max") == pytest.approx(max(a, b))


def test_select_easy_hard_kept():
    w = sine_window(CFG)
    v = select(w, constant_policy(CFG, log_std=np.log(5.0)), TH, seed=0)
    assert (v.decision, v.reason) == (Decision.DROPPED, Reason.EASY_PICP) and v.picp50 == 1.0
    far = sine_window(CFG, target_fn=lambda t: 50.0 + 0 * t)
    v = select(far, constant_policy(CFG), TH, seed=0)
    assert v.reason is Reason.HARD_PICP and v.picp90 == 0.0
    v = select(w, constant_policy(CFG), TH, seed=0)
    assert v.kept and v.reason is Reason.NONE
    assert v.picp50 <= 0.7 and v.picp90 >= 0.7 and v.se <= 0.5


def test_select_high_se():
    rng = np.random.default_rng(3)
    L, H = CFG.context_len, CFG.horizon
    noise = rng.standard_normal(L + H)[:, None]
    w = ForecastWindow(noise[:L], np.zeros((L, 0)), noise[L:], L)
    v = select(w, constant_policy(CFG), TH, seed=0)
    assert v.reason is Reason.HIGH_SE and v.se > 0.5


def test_select_is_deterministic_and_ordered():
    w = sine_window(CFG)
    pol = constant_policy(CFG)
    assert select(w, pol, TH, seed=4) == select(w, pol, TH, seed=4)
    kept, verdicts = select_windows([w, sine_window(CFG, origin=7)], pol, TH, seed=2)
    assert [v.origin_index for v in verdicts] == [0, 7]
    assert verdicts[1] == select(sine_window(CFG, origin=7), pol, TH, (2, 1))
    assert len(kept) == sum(v.kept for v in verdicts)
    d = verdicts[0].to_dict()
    assert set(d) == {"origin_index", "decision", "reason", "picp50", "picp90", "se"}


def test_threshold_validation():
    with pytest.raises(ValueError):
        SelectionThresholds(picp50_easy=1.5)
    with pytest.raises(ValueError):
        SelectionThresholds(num_samples=1)
    with pytest.raises(ValueError):
        SelectionThresholds(se_reduce="median")
