"""Acquisition objectives and their optimizers.

Every optimizer here minimizes a cost-penalized objective. For the
nonmyopic methods that is the pathwise lookahead loss

    (1/r) sum_tau [ -f_tau(a_tau) + lam * cost(x_t -> x_{t+1} ... x_{t+L} -> a_tau) ]

and for the myopic baselines ``-Acqf(x) + lam * cost(x_t -> x)``. The
``acq_value`` reported in a :class:`Candidate` is always that minimized value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, ndtr, ndtri
from scipy.linalg import cho_solve
from scipy.stats import norm

from .core import ConfigError, Dataset, DiscreteDomain, SeedStream, parallel_map, sobol_points
from .costs import (
    CostModel,
    distance,
    feasible,
    project_to_ball,
    soft_project,
    soft_project_backward,
    soft_step_cost,
    step_cost,
    sunk_markov,
)
from .pathwise import PathBatch, eval_paths
from .policy import AdamState, PolicyParams, adam_step, backward, rollout, vmf_perturb
from .surrogate import GpModel, kernel_and_grad, kernel_matrix, posterior, posterior_with_grad

KINDS = ("lookahes", "msl", "sr", "ei", "pi", "ucb", "kg")
MYOPIC = ("sr", "ei", "pi", "ucb", "kg")
MAX_RETRIES = 32


@dataclass(frozen=True)
class AcqConfig:
    kind: str = "lookahes"
    horizon: int = 20
    restarts: int = 64
    lam: float | None = None
    mc_samples: int = 8192
    beta: float = 2.0
    tau: float = 1e-3
    grad_steps: int = 200
    lr: float = 1e-3
    n_features: int = 1024
    vmf_kappa: float = 0.0
    vmf_magnitude: float = 0.05
    action_mode: str = "policy"
    spotlight_mode: str = "project"
    n_fantasy: int = 16
    kg_grid: int = 256
    kg_refine_steps: int = 10
    msl_lr: float = 0.01
    baseline_maxiter: int = 100
    discrete_search_budget: int = 2000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown acquisition kind {self.kind!r}; expected one of {KINDS}")
        if self.horizon < 0 or self.restarts < 1 or self.grad_steps < 0:
            raise ConfigError("horizon must be >= 0, restarts >= 1, grad_steps >= 0")
        if self.action_mode not in ("policy", "free"):
            raise ConfigError("action_mode must be 'policy' or 'free'")
        if self.spotlight_mode not in ("project", "penalty"):
            raise ConfigError("spotlight_mode must be 'project' or 'penalty'")
        if self.n_fantasy % 2:
            raise ConfigError("n_fantasy must be even (antithetic pairs)")

    @property
    def project(self) -> bool:
        return self.spotlight_mode == "project"

    @property
    def myopic(self) -> bool:
        return self.kind in MYOPIC

    @property
    def effective_horizon(self) -> int:
        return 1 if self.myopic else self.horizon


@dataclass
class Candidate:
    query: np.ndarray
    acq_value: float
    action: np.ndarray
    predicted_cost: float
    projected: bool = False
    actions: np.ndarray | None = field(default=None, repr=False)


def _lam(cost: CostModel, cfg: AcqConfig) -> float:
    return cost.lam if cfg.lam is None else cfg.lam


def _current(data, trajectory):
    if trajectory is None:
        return np.asarray(data.points[-1], dtype=float), np.asarray(data.points[-1:], dtype=float)
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    return traj[-1], traj


def _commit(cost: CostModel, current, x, rng, domain=None, retry=None):
    """Make ``x`` a legal next query. ``retry`` redraws a candidate; after
    ``MAX_RETRIES`` failed draws the point is projected onto the ball."""
    if domain is not None:
        x = domain.snap(x)
    if feasible(cost, current, x):
        return x, False
    if retry is not None:
        for _ in range(MAX_RETRIES):
            x = retry()
            if domain is not None:
                x = domain.snap(x)
            if feasible(cost, current, x):
                return x, False
    x = project_to_ball(current, x, cost.r, cost.p)
    if domain is not None:
        x = _snap_feasible(domain, cost, current, x)
    return x, True


def _snap_feasible(domain: DiscreteDomain, cost, current, x):
    pts = domain.all_points()
    d = np.array([distance(current, p, cost.p) for p in pts])
    ok = d <= cost.r
    if not np.any(ok):
        return domain.snap(current)
    gap = np.sum((pts - x) ** 2, axis=1)
    gap[~ok] = np.inf
    return pts[int(np.argmin(gap))]


def _rank_key(value, pred_cost, x):
    return (value, pred_cost, tuple(np.round(np.asarray(x, dtype=float), 15)))


def rerank_actions(gp: GpModel, actions: np.ndarray) -> np.ndarray:
    """The per-path action with the highest exact posterior mean."""
    mean, _ = posterior(gp, np.atleast_2d(actions))
    keys = [(-m, tuple(a)) for m, a in zip(mean, actions)]
    return np.asarray(actions[min(range(len(keys)), key=keys.__getitem__)], dtype=float)


# ---------------------------------------------------------------------------
# LookaHES
# ---------------------------------------------------------------------------


def lookahes_value(params: PolicyParams, batch: PathBatch, data, cost: CostModel, cfg: AcqConfig,
                   trajectory=None) -> float:
    return rollout(params, batch, data, cfg.horizon, cost, trajectory=trajectory, lam=_lam(cost, cfg),
                   project=cfg.project).objective


def train_policy(params: PolicyParams, batch: PathBatch, data, cost: CostModel, cfg: AcqConfig,
                 trajectory=None, steps: int | None = None, free_actions=None):
    """Adam on the lookahead objective. Returns the best parameters seen,
    their objective, the free action logits (if any) and the objective trace."""
    lam = _lam(cost, cfg)
    steps = cfg.grad_steps if steps is None else steps
    flat = params.flat.copy()
    free = None if free_actions is None else np.asarray(free_actions, dtype=float).copy()
    n_free = 0 if free is None else free.size
    state = AdamState.fresh(flat.size + n_free, cfg.lr)
    best = (np.inf, flat.copy(), None if free is None else free.copy())
    trace = []
    for _ in range(steps + 1):
        cur = params.with_flat(flat)
        res = rollout(cur, batch, data, cfg.horizon, cost, trajectory=trajectory, lam=lam, free_actions=free,
                      project=cfg.project)
        trace.append(res.objective)
        if res.objective < best[0]:
            best = (res.objective, flat.copy(), None if free is None else free.copy())
        if len(trace) > steps:
            break
        g, g_free = backward(res, cur, return_free=True)
        if free is not None:
            both = np.concatenate([flat, free.ravel()])
            both, state = adam_step(both, np.concatenate([g, g_free.ravel()]), state)
            flat, free = both[:flat.size], both[flat.size:].reshape(free.shape)
        else:
            flat, state = adam_step(flat, g, state)
    return params.with_flat(best[1]), best[0], best[2], trace


def optimize_lookahes(policy: PolicyParams, batch: PathBatch, data, cost: CostModel, cfg: AcqConfig,
                      stream: SeedStream | None = None, trajectory=None, domain=None):
    """Train the policy, then pick the best of ``restarts`` vMF-perturbed
    copies of its proposed query. Returns ``(Candidate, trained_policy)``."""
    stream = stream or SeedStream(0)
    lam = _lam(cost, cfg)
    current, traj = _current(data, trajectory)
    free0 = None
    if cfg.action_mode == "free":
        gen = stream.fork("free-actions").generator()
        free0 = gen.normal(0.0, 0.1, size=(batch.n_paths, data.dim))
    trained, _, free, trace = train_policy(policy, batch, data, cost, cfg, traj, free_actions=free0)
    base = rollout(trained, batch, data, cfg.horizon, cost, trajectory=traj, lam=lam, free_actions=free,
                   project=cfg.project)
    proposal = base.query
    rng = stream.fork("vmf").generator()
    mean_dir = proposal - current

    def draw():
        return vmf_perturb(proposal, cfg.vmf_kappa, cfg.vmf_magnitude, rng, mean_dir=mean_dir)

    # draws are sequential (one generator); evaluations are independent
    queries = [_commit(cost, current, draw(), rng, domain, retry=draw) for _ in range(cfg.restarts)]

    def evaluate(item):
        q, projected = item
        res = rollout(trained, batch, data, cfg.horizon, cost, trajectory=traj, lam=lam,
                      first_query=q, free_actions=free, project=cfg.project)
        pred = _predicted_cost(cost, traj, q)
        return _rank_key(res.objective, pred, q), q, res, projected, pred

    _, q, res, projected, pred = min(parallel_map(evaluate, queries), key=lambda t: t[0])
    cand = Candidate(q, res.objective, rerank_actions(batch.gp, res.actions), pred, projected, res.actions)
    cand.trace = trace
    return cand, trained


def _predicted_cost(cost: CostModel, traj, q) -> float:
    c = step_cost(replace(cost, cost_noise_sigma=0.0), traj, q)
    return float(c)


# ---------------------------------------------------------------------------
# Multistep tree baseline (pathwise, free decision variables)
# ---------------------------------------------------------------------------


def msl_objective(z: np.ndarray, batch: PathBatch, current, spent0: float, cost: CostModel, lam: float,
                  project: bool = False):
    """Per-path objective and gradient for free variables ``z`` of shape
    ``(r, L + 1, dim)`` (logits; the last slot is the action). Returns the
    per-path values, the gradient and the realized points."""
    raw = expit(np.clip(z, -30.0, 30.0))
    r, steps, dim = raw.shape
    project = project and cost.kind == "spotlight"
    x = np.empty_like(raw)
    caches = []
    prev = np.repeat(current[None, :], r, axis=0)
    for l in range(steps):
        if project:
            x[:, l], c = soft_project(prev, raw[:, l], cost.r * (1.0 - 1e-9), cost.p)
            caches.append(c)
        else:
            x[:, l] = raw[:, l]
        prev = x[:, l]
    prev = np.repeat(current[None, :], r, axis=0)
    spent = np.full(r, spent0)
    per_path = np.zeros(r)
    gx = np.zeros_like(x)
    for l in range(steps):
        c, markov, dc = soft_step_cost(cost, prev, x[:, l], spent)
        spent = spent + markov
        per_path += lam * c
        gx[:, l] += lam * dc
        if l > 0:
            gx[:, l - 1] -= lam * dc
        prev = x[:, l]
    fa, dfa = eval_paths(batch, x[:, -1], grad=True)
    per_path -= fa
    gx[:, -1] -= dfa
    if project:
        for l in range(steps - 1, -1, -1):
            g_raw, g_prev = soft_project_backward(caches[l], gx[:, l])
            gx[:, l] = g_raw
            if l > 0:
                gx[:, l - 1] += g_prev
    return per_path, gx * raw * (1.0 - raw), x


def optimize_msl(batch: PathBatch, data, cost: CostModel, cfg: AcqConfig, stream: SeedStream | None = None,
                 trajectory=None, domain=None) -> Candidate:
    stream = stream or SeedStream(0)
    lam = _lam(cost, cfg)
    current, traj = _current(data, trajectory)
    spent0 = sunk_markov(cost, traj)
    r, L, dim = batch.n_paths, cfg.horizon, data.dim
    if isinstance(domain, DiscreteDomain):
        return _msl_discrete(batch, data, cost, cfg, stream, traj, domain)
    rng = stream.fork("msl-init").generator()
    start = np.clip(current, 1e-3, 1 - 1e-3)
    z = np.log(start / (1 - start))[None, None, :] + rng.normal(0.0, 0.05, size=(r, L + 1, dim))
    state = AdamState.fresh(z.size, cfg.msl_lr)
    best = (np.inf, z.copy())
    for i in range(cfg.grad_steps + 1):
        per_path, g, _ = msl_objective(z, batch, current, spent0, cost, lam, cfg.project)
        val = float(np.mean(per_path))
        if val < best[0]:
            best = (val, z.copy())
        if i == cfg.grad_steps:
            break
        flat, state = adam_step(z.ravel(), g.ravel() / r, state)
        z = flat.reshape(z.shape)
    z = best[1]
    per_path, _, x = msl_objective(z, batch, current, spent0, cost, lam, cfg.project)
    order = sorted(range(r), key=lambda t: _rank_key(per_path[t], _predicted_cost(cost, traj, x[t, 0]), x[t, 0]))
    tau = order[0]
    q, projected = _commit(cost, current, x[tau, 0], rng)
    cand = Candidate(q, float(np.mean(per_path)), rerank_actions(batch.gp, x[:, -1]),
                     _predicted_cost(cost, traj, q), projected, x[:, -1])
    cand.free_variables = x
    return cand


def _msl_discrete(batch, data, cost, cfg, stream, traj, domain: DiscreteDomain) -> Candidate:
    """Random search over shared discrete query sequences with per-path
    best actions (gradient steps are meaningless on a lattice)."""
    lam = _lam(cost, cfg)
    current = traj[-1]
    pts = domain.all_points()
    rng = stream.fork("msl-discrete").generator()
    L = max(cfg.horizon, 1)
    values_grid = None
    from .pathwise import eval_paths_grid

    values_grid = eval_paths_grid(batch, pts)  # (r, P)
    best = None
    for _ in range(cfg.discrete_search_budget):
        seq = [current]
        total = 0.0
        ok = True
        for _l in range(L):
            nxt = pts[rng.integers(len(pts))]
            if cost.kind == "spotlight":
                reach = pts[np.linalg.norm(pts - seq[-1], ord=cost.p, axis=1) <= cost.r]
                nxt = reach[rng.integers(len(reach))]
            c = step_cost(replace(cost, cost_noise_sigma=0.0), np.array(seq), nxt)
            if not np.isfinite(c):
                ok = False
                break
            total += c
            seq.append(nxt)
        if not ok:
            continue
        move = np.array([step_cost(replace(cost, cost_noise_sigma=0.0), np.array(seq), p) for p in pts])
        per_path = np.min(-values_grid + lam * move[None, :], axis=1) + lam * total
        val = float(np.mean(per_path))
        key = _rank_key(val, total, seq[1])
        if best is None or key < best[0]:
            acts = pts[np.argmin(-values_grid + lam * move[None, :], axis=1)]
            best = (key, seq[1], acts)
    (val, _, _), q, acts = best
    return Candidate(np.asarray(q), val, rerank_actions(batch.gp, acts), _predicted_cost(cost, traj, q), False, acts)


# ---------------------------------------------------------------------------
# Myopic baselines
# ---------------------------------------------------------------------------


def sobol_normal(n: int, stream: SeedStream | None = None) -> np.ndarray:
    u = sobol_points(1, n, stream)[:, 0]
    return ndtri(np.clip(u, 1e-12, 1 - 1e-12))


def ei_analytic(mu, sigma, best):
    mu, sigma = np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (mu - best) / sigma
        val = (mu - best) * ndtr(z) + sigma * norm.pdf(z)
    return np.where(sigma > 0, val, np.maximum(mu - best, 0.0))


def ei_mc(mu: float, sigma: float, best: float, n: int = 8192, stream: SeedStream | None = None) -> float:
    z = sobol_normal(n, stream)
    return float(np.mean(np.maximum(mu + sigma * z - best, 0.0)))


def pi_mc(mu, sigma, best, tau: float, z: np.ndarray):
    """Temperature-smoothed probability of improvement and its derivatives
    with respect to ``mu`` and ``sigma``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    f = mu[:, None] + sigma[:, None] * z[None, :]
    s = expit((f - best) / tau)
    ds = s * (1.0 - s) / tau
    return s.mean(1), ds.mean(1), (ds * z[None, :]).mean(1)


class _KG:
    """Discretized knowledge gradient over a refined Sobol grid with
    antithetic fantasy draws (so that KG >= 0 holds exactly)."""

    def __init__(self, gp: GpModel, cfg: AcqConfig, stream: SeedStream, domain=None):
        dim = gp.train_x.shape[1]
        if isinstance(domain, DiscreteDomain):
            grid = domain.all_points()
        else:
            grid = sobol_points(dim, cfg.kg_grid, stream.fork("kg-grid"))
            for _ in range(cfg.kg_refine_steps):
                _, _, dm, _ = posterior_with_grad(gp, grid)
                grid = np.clip(grid + 0.01 * dm / (np.abs(dm).max() + 1e-12), 0.0, 1.0)
        self.gp = gp
        self.grid = grid
        self.mu_grid, _ = posterior(gp, grid)
        self.A = cho_solve((gp.chol, True), _kmat(gp, gp.train_x, grid))  # (n, m)
        half = sobol_normal(cfg.n_fantasy // 2, stream.fork("kg-fantasy"))
        self.z = np.concatenate([half, -half])

    def __call__(self, x: np.ndarray):
        gp = self.gp
        x = np.atleast_2d(x)
        kxg, dkxg = kernel_and_grad(gp.kernel, x, self.grid)  # (B, m), (B, m, d)
        kxX, dkxX = kernel_and_grad(gp.kernel, x, gp.train_x)  # (B, n), (B, n, d)
        cov = kxg - kxX @ self.A
        dcov = dkxg - np.einsum("bnd,nm->bmd", dkxX, self.A)
        _, std, _, dstd = posterior_with_grad(gp, x)
        denom = np.sqrt(std**2 + gp.kernel.noise_variance)
        ddenom = std[:, None] * dstd / denom[:, None]
        sig = cov / denom[:, None]
        dsig = dcov / denom[:, None, None] - cov[:, :, None] * ddenom[:, None, :] / denom[:, None, None] ** 2
        vals = self.mu_grid[None, None, :] + sig[:, None, :] * self.z[None, :, None]  # (B, Z, m)
        arg = np.argmax(vals, axis=2)
        best = np.take_along_axis(vals, arg[:, :, None], axis=2)[:, :, 0]
        kg = best.mean(1) - self.mu_grid.max()
        b_idx = np.arange(len(x))[:, None]
        dsel = dsig[b_idx, arg]  # (B, Z, d)
        grad = np.mean(self.z[None, :, None] * dsel, axis=1)
        return kg, grad


def _kmat(gp, a, b):
    return kernel_matrix(gp.kernel, a, b)


def acquisition_and_grad(kind: str, gp: GpModel, x: np.ndarray, best_y: float, cfg: AcqConfig,
                         extras: dict | None = None):
    """Batched acquisition values (higher is better) and input gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if kind == "kg":
        return extras["kg"](x)
    mu, sd, dmu, dsd = posterior_with_grad(gp, x)
    if kind == "sr":
        return mu, dmu
    if kind == "ucb":
        rb = np.sqrt(cfg.beta)
        return mu + rb * sd, dmu + rb * dsd
    if kind == "ei":
        z = (mu - best_y) / sd
        cdf, pdf = ndtr(z), norm.pdf(z)
        val = (mu - best_y) * cdf + sd * pdf
        return val, cdf[:, None] * dmu + pdf[:, None] * dsd
    if kind == "pi":
        val, dv_dmu, dv_dsd = pi_mc(mu, sd, best_y, cfg.tau, extras["z"])
        return val, dv_dmu[:, None] * dmu + dv_dsd[:, None] * dsd
    raise ConfigError(f"{kind!r} is not a myopic baseline")


def baseline_value(kind: str, gp: GpModel, x, best_y: float, cfg: AcqConfig | None = None,
                   stream: SeedStream | None = None, domain=None):
    """Acquisition value at ``x`` (a point or a batch)."""
    cfg = cfg or AcqConfig(kind=kind)
    stream = stream or SeedStream(0)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    extras = _extras(kind, gp, cfg, stream, domain)
    if kind in ("ei", "pi"):
        mu, var = posterior(gp, np.atleast_2d(x))
        sd = np.sqrt(var)
        if kind == "ei":
            val = ei_analytic(mu, sd, best_y)
        else:
            val = np.where(sd > 0, pi_mc(mu, np.maximum(sd, 1e-300), best_y, cfg.tau, extras["z"])[0],
                           (mu > best_y).astype(float))
    else:
        val, _ = acquisition_and_grad(kind, gp, np.atleast_2d(x), best_y, cfg, extras)
    return float(val[0]) if single else val


def _extras(kind, gp, cfg, stream, domain=None):
    if kind == "pi":
        return {"z": sobol_normal(cfg.mc_samples, stream.fork("pi-base"))}
    if kind == "kg":
        return {"kg": _KG(gp, cfg, stream, domain)}
    return {}


def _penalized(kind, gp, x, best_y, cfg, extras, cost, current, spent, lam):
    val, g = acquisition_and_grad(kind, gp, x, best_y, cfg, extras)
    prev = np.repeat(current[None, :], len(x), axis=0)
    c, _, dc = soft_step_cost(cost, prev, x, np.full(len(x), spent))
    return -val + lam * c, -g + lam * dc, c


def _search_box(cost: CostModel, current, dim):
    if cost.kind == "spotlight":
        return np.clip(current - cost.r, 0.0, 1.0), np.clip(current + cost.r, 0.0, 1.0)
    return np.zeros(dim), np.ones(dim)


def optimize_baseline(kind: str, gp: GpModel, data, cost: CostModel, cfg: AcqConfig,
                      stream: SeedStream | None = None, trajectory=None, domain=None) -> Candidate:
    """Multi-start L-BFGS-B on ``-Acqf(x) + lam * cost(x_t -> x)``."""
    stream = stream or SeedStream(0)
    lam = _lam(cost, cfg)
    current, traj = _current(data, trajectory)
    spent = sunk_markov(cost, traj)
    best_y = float(np.max(data.observations))
    extras = _extras(kind, gp, cfg, stream, domain)
    if isinstance(domain, DiscreteDomain):
        pts = domain.all_points()
        if cost.kind == "spotlight":
            pts = pts[[feasible(cost, current, p) for p in pts]]
        vals, _, c = _penalized(kind, gp, pts, best_y, cfg, extras, cost, current, spent, lam)
        order = sorted(range(len(pts)), key=lambda i: _rank_key(vals[i], c[i], pts[i]))
        q = pts[order[0]]
        return Candidate(q, float(vals[order[0]]), q, _predicted_cost(cost, traj, q), False)
    lo, hi = _search_box(cost, current, data.dim)
    starts = lo + (hi - lo) * sobol_points(data.dim, cfg.restarts, stream.fork("baseline-starts"))
    starts = np.vstack([starts, current[None, :]])

    def fun(v):
        f, g, _ = _penalized(kind, gp, v[None, :], best_y, cfg, extras, cost, current, spent, lam)
        return float(f[0]), g[0]

    def polish(s):
        res = minimize(fun, s, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": cfg.baseline_maxiter})
        x = np.clip(res.x, lo, hi)
        f, _, c = _penalized(kind, gp, x[None, :], best_y, cfg, extras, cost, current, spent, lam)
        return _rank_key(float(f[0]), float(c[0]), x), x

    results = sorted(parallel_map(polish, starts), key=lambda t: t[0])
    (val, _, _), x = results[0]
    q, projected = _commit(cost, current, x, None)
    return Candidate(q, val, q, _predicted_cost(cost, traj, q), projected)


def posterior_mean_action(gp: GpModel, current, cost: CostModel, lam: float, restarts: int = 64,
                          stream: SeedStream | None = None, trajectory=None, domain=None,
                          maxiter: int = 100) -> np.ndarray:
    """``argmax_a mu(a) - lam * cost(current -> a)`` by multi-start L-BFGS-B,
    made feasible under a spotlight cost. Stays at ``current`` unless some
    point is strictly better."""
    current = np.asarray(current, dtype=float)
    cfg = AcqConfig(kind="sr", restarts=restarts, lam=lam, baseline_maxiter=maxiter)
    traj = np.atleast_2d(current) if trajectory is None else np.atleast_2d(trajectory)
    dummy = Dataset(np.atleast_2d(current), [0.0])
    cand = optimize_baseline("sr", gp, dummy, cost, cfg, stream, traj, domain)
    stay = current if domain is None else domain.snap(current)
    spent = sunk_markov(cost, traj)
    here, _, _ = _penalized("sr", gp, stay[None, :], 0.0, cfg, {}, cost, traj[-1], spent, lam)
    there, _, _ = _penalized("sr", gp, cand.query[None, :], 0.0, cfg, {}, cost, traj[-1], spent, lam)
    if there[0] < here[0] - 1e-9:
        return cand.query
    return stay
