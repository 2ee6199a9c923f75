"""Exact Gaussian-process surrogate with isotropic stationary kernels."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .core import ConfigError, Dataset, NumericalError, SeedStream

KERNELS = ("rbf", "matern12", "matern32", "matern52")
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)

# clipping box for the log-hyperparameters during fitting
LOG_BOUNDS = {
    "lengthscale": (np.log(1e-3), np.log(10.0)),
    "signal_variance": (np.log(1e-6), np.log(1e3)),
    "noise_variance": (np.log(1e-6), np.log(10.0)),
}


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "matern52"
    lengthscale: float = 0.3
    signal_variance: float = 1.0
    noise_variance: float = 1e-2

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.lengthscale <= 0 or self.signal_variance <= 0 or self.noise_variance < 0:
            raise ConfigError("kernel hyperparameters must be positive (noise may be zero)")

    def log_params(self) -> np.ndarray:
        return np.log([self.lengthscale, self.signal_variance, self.noise_variance])

    def with_log_params(self, theta) -> "KernelSpec":
        ell, sf2, sn2 = np.exp(np.asarray(theta, dtype=float))
        return replace(self, lengthscale=float(ell), signal_variance=float(sf2), noise_variance=float(sn2))

    @property
    def nu(self) -> float | None:
        return {"matern12": 0.5, "matern32": 1.5, "matern52": 2.5}.get(self.kind)


@dataclass(frozen=True)
class FitConfig:
    steps: int = 200
    lr: float = 0.05
    init_lengthscale: float = 0.3
    init_signal_variance: float = 1.0
    init_noise_variance: float = 1e-2
    fit_mean: bool = True


# ---------------------------------------------------------------------------
# Kernel functions
# ---------------------------------------------------------------------------


def _profile(kind: str, rho: np.ndarray):
    """Return ``(k/sf2, g)`` with ``dk/dx = -sf2 * g * (x - z) / ell**2``."""
    if kind == "rbf":
        e = np.exp(-0.5 * rho * rho)
        return e, e
    if kind == "matern12":
        e = np.exp(-rho)
        safe = np.where(rho > 0, rho, 1.0)
        return e, np.where(rho > 0, e / safe, 0.0)
    if kind == "matern32":
        e = np.exp(-SQRT3 * rho)
        return (1.0 + SQRT3 * rho) * e, 3.0 * e
    e = np.exp(-SQRT5 * rho)
    return (1.0 + SQRT5 * rho + 5.0 * rho * rho / 3.0) * e, (5.0 / 3.0) * (1.0 + SQRT5 * rho) * e


def _sqdist(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    d2 = np.sum(x * x, 1)[:, None] + np.sum(z * z, 1)[None, :] - 2.0 * x @ z.T
    return np.maximum(d2, 0.0)


def kernel_matrix(spec: KernelSpec, x, z) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if x.shape[1] != z.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {z.shape[1]}")
    rho = np.sqrt(_sqdist(x, z)) / spec.lengthscale
    return spec.signal_variance * _profile(spec.kind, rho)[0]


def kernel_eval(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    rho = np.sqrt(np.sum((x - z) ** 2)) / spec.lengthscale
    return float(spec.signal_variance * _profile(spec.kind, np.array(rho))[0])


def kernel_and_grad(spec: KernelSpec, x: np.ndarray, z: np.ndarray):
    """``k(x_b, z_j)`` of shape (B, n) and ``dk/dx_b`` of shape (B, n, dim).

    Matern-1/2 returns a zero subgradient where ``x_b == z_j``.
    """
    diff = x[:, None, :] - z[None, :, :]
    rho = np.sqrt(np.sum(diff * diff, axis=-1)) / spec.lengthscale
    prof, g = _profile(spec.kind, rho)
    k = spec.signal_variance * prof
    dk = -(spec.signal_variance / spec.lengthscale**2) * g[:, :, None] * diff
    return k, dk


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GpModel:
    kernel: KernelSpec
    train_x: np.ndarray
    train_y: np.ndarray
    mean_const: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    fit_trace: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return len(self.train_y)


def _cholesky(spec: KernelSpec, x: np.ndarray):
    K = kernel_matrix(spec, x, x)
    n = len(x)
    last = None
    for jitter in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(K + (spec.noise_variance + jitter) * np.eye(n))
            return K, L, jitter
        except np.linalg.LinAlgError as exc:
            last = exc
    raise NumericalError(
        f"kernel matrix not positive definite after jitter {JITTER_LADDER[-1]} "
        f"(n={n}, kernel={spec}, min diag={np.min(np.diag(K)):.3g}): {last}"
    )


def condition(spec: KernelSpec, x, y, mean_const: float) -> GpModel:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, L, jitter = _cholesky(spec, x)
    alpha = cho_solve((L, True), y - mean_const)
    return GpModel(spec, x, y, float(mean_const), L, alpha, jitter)


def log_marginal_likelihood(spec: KernelSpec, x, y, mean_const: float, grad: bool = False):
    """``log p(y | X)`` and optionally its gradient with respect to
    ``(log lengthscale, log signal_variance, log noise_variance, mean_const)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    K, L, jitter = _cholesky(spec, x)
    resid = y - mean_const
    alpha = cho_solve((L, True), resid)
    mll = -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return float(mll)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    rho = np.sqrt(_sqdist(x, x)) / spec.lengthscale
    _, g = _profile(spec.kind, rho)
    dK_dlogell = spec.signal_variance * rho * rho * g
    g_ell = 0.5 * np.sum(W * dK_dlogell)
    g_sf2 = 0.5 * np.sum(W * K)
    g_sn2 = 0.5 * spec.noise_variance * np.trace(W)
    g_mean = np.sum(alpha)
    return float(mll), np.array([g_ell, g_sf2, g_sn2, g_mean])


def fit_gp(data: Dataset, kernel_kind: str = "matern52", fit_config: FitConfig | None = None,
           stream: SeedStream | None = None) -> GpModel:
    """Type-II maximum likelihood fit by Adam on the log-hyperparameters.

    The procedure is deterministic; ``stream`` is accepted for interface
    symmetry and unused.
    """
    cfg = fit_config or FitConfig()
    if len(data) < 2:
        raise ConfigError("fit_gp needs at least two observations")
    x, y = np.asarray(data.points), np.asarray(data.observations)
    spec = KernelSpec(kernel_kind, cfg.init_lengthscale, cfg.init_signal_variance, cfg.init_noise_variance)
    theta = np.append(spec.log_params(), float(np.mean(y)))
    lo = np.array([LOG_BOUNDS["lengthscale"][0], LOG_BOUNDS["signal_variance"][0], LOG_BOUNDS["noise_variance"][0], -np.inf])
    hi = np.array([LOG_BOUNDS["lengthscale"][1], LOG_BOUNDS["signal_variance"][1], LOG_BOUNDS["noise_variance"][1], np.inf])
    theta = np.clip(theta, lo, hi)
    m = np.zeros(4)
    v = np.zeros(4)
    b1, b2, eps = 0.9, 0.999, 1e-8
    best = (-np.inf, theta.copy())
    trace = []
    for t in range(1, cfg.steps + 1):
        cur = spec.with_log_params(theta[:3])
        try:
            mll, g = log_marginal_likelihood(cur, x, y, theta[3], grad=True)
        except NumericalError:
            if t == 1:
                raise
            break
        trace.append(mll)
        if mll > best[0]:
            best = (mll, theta.copy())
        if not cfg.fit_mean:
            g[3] = 0.0
        g = -g  # ascend
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = cfg.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        theta = np.clip(theta - step, lo, hi)
    cur = spec.with_log_params(theta[:3])
    try:
        mll = log_marginal_likelihood(cur, x, y, theta[3])
        if mll > best[0]:
            best = (mll, theta.copy())
    except NumericalError:
        pass
    theta = best[1]
    model = condition(spec.with_log_params(theta[:3]), x, y, theta[3])
    return replace(model, fit_trace=tuple(trace))


def posterior(gp: GpModel, x):
    """Posterior mean and variance at one point (scalars) or a batch (arrays)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    Ks = kernel_matrix(gp.kernel, xb, gp.train_x)
    mean = gp.mean_const + Ks @ gp.alpha
    v = solve_triangular(gp.chol, Ks.T, lower=True)
    var = np.maximum(gp.kernel.signal_variance - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def posterior_cov(gp: GpModel, x) -> tuple:
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    Ks = kernel_matrix(gp.kernel, xb, gp.train_x)
    mean = gp.mean_const + Ks @ gp.alpha
    v = solve_triangular(gp.chol, Ks.T, lower=True)
    cov = kernel_matrix(gp.kernel, xb, xb) - v.T @ v
    return mean, cov


def posterior_with_grad(gp: GpModel, x: np.ndarray):
    """Batched mean, std and their input gradients at ``x`` of shape (B, dim)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k, dk = kernel_and_grad(gp.kernel, x, gp.train_x)
    mean = gp.mean_const + k @ gp.alpha
    dmean = np.einsum("bnd,n->bd", dk, gp.alpha)
    # K^-1 k(X, x) for each batch row
    kinv_k = cho_solve((gp.chol, True), k.T).T
    var = gp.kernel.signal_variance - np.sum(k * kinv_k, axis=1)
    dvar = -2.0 * np.einsum("bnd,bn->bd", dk, kinv_k)
    clipped = var <= 1e-12
    var = np.maximum(var, 1e-12)
    std = np.sqrt(var)
    dstd = np.where(clipped[:, None], 0.0, dvar / (2.0 * std[:, None]))
    return mean, std, dmean, dstd
