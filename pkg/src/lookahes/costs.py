"""History-dependent query costs.

Markovian costs depend on the previous query only,
``max(k * (||cur - prev||_p - r), 0) + noise``. The non-Markovian variant
subtracts a discount ``d`` once the cumulative Markovian cost of the history
exceeds ``m``. Spotlight costs are a hard feasibility ball of radius ``r``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import ConfigError, SeedStream

KINDS = ("euclidean", "manhattan", "spotlight", "nonmarkov_euclidean")

# Slope of the soft wall that replaces the spotlight constraint inside
# gradient-based objectives.
SOFT_SPOTLIGHT_RATE = 100.0

INFEASIBLE = float("inf")


@dataclass(frozen=True)
class CostModel:
    kind: str = "euclidean"
    k: float = 1.0
    p: int = 2
    r: float = 0.0
    d: float = 0.0
    m: float = 0.0
    cost_noise_sigma: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown cost kind {self.kind!r}; expected one of {KINDS}")
        for name in ("k", "r", "d", "m", "cost_noise_sigma", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"cost parameter {name} must be nonnegative")
        # a free radius r > 0 is allowed for the Markov kinds as well
        if self.kind == "euclidean" and self.p != 2:
            raise ConfigError("euclidean cost requires p=2")
        if self.kind == "manhattan" and self.p != 1:
            raise ConfigError("manhattan cost requires p=1")
        if self.kind == "nonmarkov_euclidean" and self.p != 2:
            raise ConfigError("nonmarkov_euclidean cost requires p=2")
        if self.p not in (1, 2):
            raise ConfigError("norm order p must be 1 or 2")

    @classmethod
    def euclidean(cls, k=1.0, **kw):
        return cls("euclidean", k=k, p=2, r=0.0, **kw)

    @classmethod
    def manhattan(cls, k=1.0, **kw):
        return cls("manhattan", k=k, p=1, r=0.0, **kw)

    @classmethod
    def spotlight(cls, r=0.1, **kw):
        return cls("spotlight", k=1.0, p=2, r=r, **kw)

    @classmethod
    def nonmarkov(cls, k=1.0, d=0.5, m=1.0, **kw):
        return cls("nonmarkov_euclidean", k=k, p=2, r=0.0, d=d, m=m, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def distance(a, b, p: int = 2) -> float:
    delta = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    if p == 1:
        return float(np.sum(np.abs(delta)))
    return float(np.sqrt(np.sum(delta * delta)))


def feasible(model: CostModel, prev, cur) -> bool:
    if model.kind != "spotlight":
        return True
    return distance(prev, cur, model.p) <= model.r


def _noise(model: CostModel, stream: SeedStream | None) -> float:
    if stream is None or model.cost_noise_sigma == 0:
        return 0.0
    return float(stream.generator().normal(0.0, model.cost_noise_sigma))


def markov_cost(model: CostModel, prev, cur, noise_stream: SeedStream | None = None) -> float:
    """Cost of moving ``prev -> cur``; ``INFEASIBLE`` for a blocked spotlight move."""
    dist = distance(prev, cur, model.p)
    if model.kind == "spotlight":
        if dist > model.r:
            return INFEASIBLE
        return max(0.0 + _noise(model, noise_stream), 0.0)
    base = max(model.k * (dist - model.r), 0.0)
    if noise_stream is None:
        return base
    return max(base + _noise(model, noise_stream), 0.0)


def _markov_noiseless(model: CostModel, prev, cur) -> float:
    return max(model.k * (distance(prev, cur, model.p) - model.r), 0.0)


def non_markov_cost(model: CostModel, history, cur, noise_stream: SeedStream | None = None) -> float:
    """Markov cost of the last move minus ``d`` once the history's cumulative
    Markov cost exceeds ``m``; clamped at zero."""
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[None, :]
    if len(history) == 0:
        raise ValueError("non_markov_cost needs a history of at least one point")
    spent = sum(_markov_noiseless(model, history[i], history[i + 1]) for i in range(len(history) - 1))
    step = _markov_noiseless(model, history[-1], cur)
    discount = model.d if spent > model.m else 0.0
    value = max(step - discount, 0.0)
    if noise_stream is not None:
        value = max(value + _noise(model, noise_stream), 0.0)
    return value


def step_cost(model: CostModel, history, cur, noise_stream: SeedStream | None = None) -> float:
    """Cost of querying ``cur`` after ``history`` under any cost kind."""
    history = np.atleast_2d(np.asarray(history, dtype=float))
    if model.kind == "nonmarkov_euclidean":
        return non_markov_cost(model, history, cur, noise_stream)
    return markov_cost(model, history[-1], cur, noise_stream)


def trajectory_cost(model: CostModel, observed, lookahead, action) -> float:
    """Total cost of ``observed[-1] -> lookahead... -> action``.

    Moves inside ``observed`` are sunk and not charged, but they do count
    towards the non-Markovian discount threshold.
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    lookahead = np.asarray(lookahead, dtype=float).reshape(-1, observed.shape[1])
    path = np.vstack([observed, lookahead, np.asarray(action, dtype=float)[None, :]])
    total = 0.0
    for i in range(len(observed), len(path)):
        c = step_cost(model, path[:i], path[i])
        if c == INFEASIBLE:
            return INFEASIBLE
        total += c
    return total


def project_to_ball(prev, cur, r: float, p: int = 2) -> np.ndarray:
    """Closest point to ``cur`` within the closed ``p``-ball of radius ``r`` at ``prev``
    (for p=1 a radial shrink, which is feasible but not the exact projection)."""
    prev = np.asarray(prev, dtype=float)
    cur = np.asarray(cur, dtype=float)
    dist = distance(prev, cur, p)
    if dist <= r:
        return cur.copy()
    # shrink slightly so rounding cannot push the result back outside
    out = prev + (cur - prev) * (r / dist) * (1.0 - 1e-12)
    while distance(prev, out, p) > r:
        out = prev + (out - prev) * (1.0 - 1e-12)
    return out


# ---------------------------------------------------------------------------
# Differentiable batched step costs for the inner optimizers
# ---------------------------------------------------------------------------


def soft_step_cost(model: CostModel, prev: np.ndarray, cur: np.ndarray, spent: np.ndarray | None = None):
    """Noise-free batched step cost and its gradient.

    ``prev`` and ``cur`` are ``(B, dim)``. ``spent`` holds the cumulative
    Markov cost before this move (needed for the non-Markovian discount).
    Spotlight moves are charged ``SOFT_SPOTLIGHT_RATE * max(dist - r, 0)``.

    Returns ``(cost, markov, dcost_dcur)``; the gradient with respect to
    ``prev`` is ``-dcost_dcur``.
    """
    delta = cur - prev
    if model.p == 1:
        dist = np.sum(np.abs(delta), axis=-1)
        ddist = np.sign(delta)
    else:
        dist = np.sqrt(np.sum(delta * delta, axis=-1))
        safe = np.where(dist > 0, dist, 1.0)
        ddist = np.where(dist[:, None] > 0, delta / safe[:, None], 0.0)
    rate = SOFT_SPOTLIGHT_RATE if model.kind == "spotlight" else model.k
    excess = dist - model.r
    active = excess > 0
    markov = np.where(active, rate * excess, 0.0)
    cost = markov
    grad_scale = np.where(active, rate, 0.0)
    if model.kind == "nonmarkov_euclidean":
        if spent is None:
            spent = np.zeros_like(dist)
        discount = np.where(spent > model.m, model.d, 0.0)
        cost = markov - discount
        grad_scale = np.where(cost > 0, grad_scale, 0.0)
        cost = np.maximum(cost, 0.0)
    return cost, markov, grad_scale[:, None] * ddist


def sunk_markov(model: CostModel, observed) -> float:
    """Cumulative noise-free Markov cost along an observed trajectory."""
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    return float(sum(_markov_noiseless(model, observed[i], observed[i + 1]) for i in range(len(observed) - 1)))


def soft_project(prev: np.ndarray, raw: np.ndarray, r: float, p: int = 2):
    """Batched radial shrink of ``raw`` onto the ``p``-ball of radius ``r``
    around ``prev``; the identity inside the ball. Returns the projected
    points and a cache for :func:`soft_project_backward`."""
    delta = raw - prev
    if p == 1:
        n = np.sum(np.abs(delta), axis=-1)
        dn = np.sign(delta)
    else:
        n = np.sqrt(np.sum(delta * delta, axis=-1))
        dn = delta / np.where(n > 0, n, 1.0)[:, None]
    outside = n > r
    s = np.where(outside, r / np.where(outside, n, 1.0), 1.0)
    return prev + s[:, None] * delta, (delta, n, dn, s, outside)


def soft_project_backward(cache, g: np.ndarray):
    """Vector-Jacobian products ``(d/d raw, d/d prev)`` of :func:`soft_project`."""
    delta, n, dn, s, outside = cache
    proj = np.sum(delta * g, axis=-1) / np.where(outside, n, 1.0)
    g_delta = s[:, None] * (g - np.where(outside, proj, 0.0)[:, None] * dn)
    return g_delta, g - g_delta
