"""Pathwise posterior samples: random Fourier feature priors updated with
Matheron's rule.

Each path is a fixed, differentiable function drawn from the GP posterior, so
a rollout of any horizon evaluates the same ``n_paths`` functions instead of
branching on fantasized observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .core import SeedStream
from .surrogate import GpModel, kernel_and_grad, kernel_matrix

DEFAULT_FEATURES = 1024


class _Counter:
    """Number of posterior function samples drawn so far (for instrumentation)."""

    def __init__(self):
        self.functions = 0

    def reset(self):
        self.functions = 0


sampler_calls = _Counter()


@dataclass(frozen=True)
class PathBatch:
    freqs: np.ndarray  # (M, dim)
    phases: np.ndarray  # (M,)
    prior_weights: np.ndarray  # (r, M)
    matheron_coef: np.ndarray  # (r, n)
    gp: GpModel

    @property
    def n_paths(self) -> int:
        return self.prior_weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.freqs.shape[0]

    @property
    def dim(self) -> int:
        return self.freqs.shape[1]

    @property
    def feature_scale(self) -> float:
        return float(np.sqrt(2.0 * self.gp.kernel.signal_variance / self.n_features))


def spectral_frequencies(kind: str, lengthscale: float, n_features: int, dim: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Frequencies drawn from the kernel's spectral density."""
    z = rng.standard_normal((n_features, dim))
    if kind == "rbf":
        return z / lengthscale
    nu = {"matern12": 0.5, "matern32": 1.5, "matern52": 2.5}[kind]
    # multivariate Student-t with 2*nu degrees of freedom
    u = rng.gamma(shape=nu, scale=1.0 / nu, size=(n_features, 1))
    return z / np.sqrt(u) / lengthscale


def rff_features(freqs, phases, scale, x):
    return scale * np.cos(np.atleast_2d(x) @ freqs.T + phases)


def sample_paths(gp: GpModel, n_paths: int, n_features: int = DEFAULT_FEATURES,
                 stream: SeedStream | None = None) -> PathBatch:
    stream = stream or SeedStream(0)
    rng = stream.generator()
    spec = gp.kernel
    dim = gp.train_x.shape[1]
    freqs = spectral_frequencies(spec.kind, spec.lengthscale, n_features, dim, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_features)
    W = rng.standard_normal((n_paths, n_features))
    eps = rng.standard_normal((n_paths, gp.n)) * np.sqrt(spec.noise_variance + gp.jitter)
    scale = np.sqrt(2.0 * spec.signal_variance / n_features)
    prior_at_train = W @ rff_features(freqs, phases, scale, gp.train_x).T  # (r, n)
    resid = (gp.train_y - gp.mean_const)[None, :] - prior_at_train - eps
    V = cho_solve((gp.chol, True), resid.T).T
    sampler_calls.functions += n_paths
    return PathBatch(freqs, phases, W, V, gp)


def _check_index(batch: PathBatch, tau: int):
    if not 0 <= tau < batch.n_paths:
        raise IndexError(f"path index {tau} out of range for {batch.n_paths} paths")


def prior_term(batch: PathBatch, tau: int, x) -> float:
    phi = rff_features(batch.freqs, batch.phases, batch.feature_scale, np.asarray(x, dtype=float))[0]
    return float(batch.prior_weights[tau] @ phi)


def correction_term(batch: PathBatch, tau: int, x) -> float:
    k = kernel_matrix(batch.gp.kernel, np.asarray(x, dtype=float)[None, :], batch.gp.train_x)[0]
    return float(k @ batch.matheron_coef[tau])


def eval_path(batch: PathBatch, path_index: int, x) -> float:
    _check_index(batch, path_index)
    x = np.asarray(x, dtype=float)
    return batch.gp.mean_const + prior_term(batch, path_index, x) + correction_term(batch, path_index, x)


def path_gradient(batch: PathBatch, path_index: int, x) -> np.ndarray:
    _check_index(batch, path_index)
    idx = np.array([path_index])
    _, g = eval_paths(batch, np.asarray(x, dtype=float)[None, :], idx, grad=True)
    return g[0]


def eval_paths(batch: PathBatch, x: np.ndarray, paths: np.ndarray | None = None, grad: bool = False):
    """Evaluate path ``paths[b]`` at ``x[b]`` for every row ``b``.

    ``paths`` defaults to ``arange(n_paths)`` so that row ``b`` of ``x`` goes
    to path ``b``. Returns values ``(B,)`` and, if requested, gradients
    ``(B, dim)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if paths is None:
        paths = np.arange(batch.n_paths)
    W = batch.prior_weights[paths]
    V = batch.matheron_coef[paths]
    arg = x @ batch.freqs.T + batch.phases
    s = batch.feature_scale
    values = batch.gp.mean_const + s * np.sum(W * np.cos(arg), axis=1)
    if not grad:
        k = kernel_matrix(batch.gp.kernel, x, batch.gp.train_x)
        values = values + np.sum(V * k, axis=1)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise FloatingPointError(f"non-finite path value for path {int(paths[bad])}")
        return values
    k, dk = kernel_and_grad(batch.gp.kernel, x, batch.gp.train_x)
    values = values + np.sum(V * k, axis=1)
    grads = (-s * W * np.sin(arg)) @ batch.freqs + np.einsum("bn,bnd->bd", V, dk)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(f"non-finite path value for path {int(paths[bad])}")
    return values, grads


def eval_paths_grid(batch: PathBatch, x: np.ndarray) -> np.ndarray:
    """All paths on a shared set of points; returns ``(n_paths, m)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phi = rff_features(batch.freqs, batch.phases, batch.feature_scale, x)  # (m, M)
    k = kernel_matrix(batch.gp.kernel, x, batch.gp.train_x)  # (m, n)
    return batch.gp.mean_const + batch.prior_weights @ phi.T + batch.matheron_coef @ k.T


# ---------------------------------------------------------------------------
# Reference: iterative fantasization (exponential trajectory growth)
# ---------------------------------------------------------------------------


def fantasy_tree_rollout(gp: GpModel, queries, k: int, stream: SeedStream | None = None) -> int:
    """Sample the posterior-predictive tree for fixed ``queries`` by
    conditioning on ``k`` fantasies at every level. Returns the number of
    leaf trajectories, which is ``k ** len(queries)``.

    Kept tiny on purpose; it exists to contrast with pathwise sampling.
    """
    from .surrogate import condition, posterior

    rng = (stream or SeedStream(0)).generator()
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    frontier = [(gp.train_x, gp.train_y)]
    for q in queries:
        nxt = []
        for x, y in frontier:
            model = condition(gp.kernel, x, y, gp.mean_const)
            mu, var = posterior(model, q)
            draws = mu + np.sqrt(var + gp.kernel.noise_variance) * rng.standard_normal(k)
            for yy in draws:
                nxt.append((np.vstack([x, q]), np.append(y, yy)))
        frontier = nxt
    return len(frontier)
