import numpy as np

from rftcast.data import ForecastWindow
from rftcast.policy import PolicyConfig, PolicyParams


def constant_policy(cfg: PolicyConfig, mean: float = 0.0, log_std: float = 0.0) -> PolicyParams:
    """Affine policy emitting N(mean, exp(log_std)^2) per point in normalized
    space, whatever the context."""
    assert cfg.hidden_widths == ()
    W = np.zeros((cfg.input_dim, cfg.output_dim))
    b = np.concatenate([np.full(cfg.patch_dim, mean), np.full(cfg.patch_dim, log_std)])
    return PolicyParams(cfg, [W, b])


def sine_window(cfg: PolicyConfig, target_fn=None, origin: int = 0) -> ForecastWindow:
    """Window with an exact-bin sinusoid context of mean 0 and std 1."""
    L, H, d = cfg.context_len, cfg.horizon, cfg.num_target_variates
    t = np.arange(L)
    ctx = np.sqrt(2) * np.sin(2 * np.pi * 4 * t / L)
    ctx = np.repeat(ctx[:, None], d, axis=1)
    tt = np.arange(L, L + H)
    tgt = np.sqrt(2) * np.sin(2 * np.pi * 4 * tt / L) if target_fn is None else target_fn(tt)
    tgt = np.repeat(np.asarray(tgt, dtype=float)[:, None], d, axis=1)
    return ForecastWindow(ctx, np.zeros((L, cfg.num_covariates)), tgt, origin)


def fd_grad(params: PolicyParams, f, h: float = 1e-5, richardson: bool = False) -> np.ndarray:
    """Central differences of ``f(params)`` over the flat parameter vector.

    With ``richardson`` the steps ``h`` and ``h/2`` are combined to cancel
    the O(h^2) truncation term, for stiff losses.
    """
    theta = params.flat()

    def central(step):
        g = np.zeros_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = step
            g[i] = (f(params.with_flat(theta + e)) - f(params.with_flat(theta - e))) / (2 * step)
        return g

    if not richardson:
        return central(h)
    return (4 * central(h / 2) - central(h)) / 3


def grad_error(analytic: np.ndarray, numeric: np.ndarray, rel: float = 1e-4, floor: float = 1e-7) -> float:
    """Largest error in units of the tolerance ``max(rel*|numeric|, floor)``;
    a value below 1 passes."""
    tol = np.maximum(rel * np.abs(numeric), floor)
    return float((np.abs(analytic - numeric) / tol).max())


def random_window(cfg: PolicyConfig, seed: int = 0) -> ForecastWindow:
    """iid N(1, 2^2) targets over context and horizon."""
    rng = np.random.default_rng(seed)
    L, H = cfg.context_len, cfg.horizon
    y = rng.normal(size=(L + H, cfg.num_target_variates)) * 2 + 1
    return ForecastWindow(y[:L], rng.normal(size=(L, cfg.num_covariates)), y[L:], 0)


# acceptance outcomes, printed again in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(num: int, name: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES[num] = line
    print(line)
    return ok
