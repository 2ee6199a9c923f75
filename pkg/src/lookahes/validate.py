"""Numerical self-checks exposed as ``lookahes validate``.

Each check prints one line with the measured quantity, the threshold and
PASS/FAIL. The fixtures are small and seeded so the suite runs in seconds.
"""

from __future__ import annotations

import time

import numpy as np

from .core import Dataset, SeedStream
from .costs import CostModel, feasible, markov_cost, non_markov_cost, trajectory_cost
from .pathwise import eval_paths, eval_paths_grid, sample_paths
from .policy import backward, init_policy, rollout
from .surrogate import KernelSpec, condition, log_marginal_likelihood, posterior_cov


def _line(name, measured, threshold, ok, unit=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}: measured {measured:.3g}{unit} (threshold {threshold:.3g}{unit})")
    return ok


def matheron_fixture():
    """1D GP with eight observations of a smooth function."""
    x = np.linspace(0.05, 0.95, 8)[:, None]
    y = np.sin(6.0 * x[:, 0]) + 0.3 * x[:, 0]
    return condition(KernelSpec("rbf", 0.2, 1.0, 1e-3), x, y, 0.0)


def check_matheron(n_paths=4096, n_features=2048, seed=0):
    t0 = time.perf_counter()
    gp = matheron_fixture()
    grid = np.linspace(0.0, 1.0, 16)[:, None]
    batch = sample_paths(gp, n_paths, n_features, SeedStream(seed))
    vals = eval_paths_grid(batch, grid)  # (r, 16)
    mean, cov = posterior_cov(gp, grid)
    gap = float(np.max(np.abs(vals.mean(0) - mean)))
    cgap = float(np.max(np.abs(np.cov(vals, rowvar=False) - cov)))
    elapsed = time.perf_counter() - t0
    ok = _line("pathwise mean vs exact posterior mean", gap, 0.05, gap < 0.05)
    ok &= _line("pathwise covariance vs exact posterior covariance", cgap, 0.1, cgap < 0.1)
    ok &= _line("pathwise fidelity runtime", elapsed, 30.0, elapsed < 30.0, " s")
    return ok, {"mean_gap": gap, "cov_gap": cgap, "seconds": elapsed}


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def policy_gradient_errors(n_coords=100, h=1e-5, seed=0, horizon=3, cost=None):
    """Relative errors of the rollout gradient against central differences."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(10, 2))
    data = Dataset(x, np.sin(4 * x[:, 0]) + np.cos(3 * x[:, 1]))
    gp = condition(KernelSpec("matern52", 0.3, 1.0, 1e-2), data.points, data.observations, 0.0)
    batch = sample_paths(gp, 4, 64, SeedStream(seed))
    params = init_policy(2, 16, stream=SeedStream(seed + 1))
    cost = cost or CostModel.euclidean(k=1.0)
    res = rollout(params, batch, data, horizon, cost)
    g = backward(res, params)
    idx = rng.choice(params.flat.size, size=min(n_coords, params.flat.size), replace=False)
    errs = []
    for i in idx:
        e = np.zeros_like(params.flat)
        e[i] = h
        fp = rollout(params.with_flat(params.flat + e), batch, data, horizon, cost).objective
        fm = rollout(params.with_flat(params.flat - e), batch, data, horizon, cost).objective
        fd = (fp - fm) / (2 * h)
        errs.append(abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return np.array(errs)


def mll_gradient_errors(n_settings=10, h=1e-6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(15, 2))
    y = np.sin(5 * x[:, 0]) * np.cos(2 * x[:, 1])
    errs = []
    for i in range(n_settings):
        kind = ("rbf", "matern32", "matern52")[i % 3]
        theta = np.log([rng.uniform(0.1, 1.0), rng.uniform(0.5, 2.0), rng.uniform(1e-3, 1e-1)])
        spec = KernelSpec(kind).with_log_params(theta)
        mean = float(rng.normal(0.0, 0.3))
        _, g = log_marginal_likelihood(spec, x, y, mean, grad=True)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fp = log_marginal_likelihood(spec.with_log_params(theta + e), x, y, mean)
            fm = log_marginal_likelihood(spec.with_log_params(theta - e), x, y, mean)
            errs.append(_rel((fp - fm) / (2 * h), g[j]))
    return np.array(errs)


def path_gradient_errors(n_points=20, h=1e-5, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(12, 2))
    y = np.cos(4 * x[:, 0] + x[:, 1])
    errs = []
    for kind in ("rbf", "matern32", "matern52"):
        gp = condition(KernelSpec(kind, 0.25, 1.0, 1e-3), x, y, 0.0)
        batch = sample_paths(gp, 1, 512, SeedStream(seed))
        pts = rng.uniform(size=(n_points, 2))
        _, g = eval_paths(batch, pts, np.zeros(n_points, dtype=int), grad=True)
        for b in range(n_points):
            for d in range(2):
                e = np.zeros(2)
                e[d] = h
                fp = eval_paths(batch, (pts[b] + e)[None, :], np.array([0]))[0]
                fm = eval_paths(batch, (pts[b] - e)[None, :], np.array([0]))[0]
                fd = (fp - fm) / (2 * h)
                errs.append(abs(fd - g[b, d]) / max(abs(fd), abs(g[b, d]), 1e-3))
    return np.array(errs)


def check_gradients(seed=0):
    pe = policy_gradient_errors(seed=seed)
    me = mll_gradient_errors(seed=seed)
    ge = path_gradient_errors(seed=seed)
    ok = _line("policy rollout gradient, max rel. error over 100 coordinates", pe.max(), 1e-3, pe.max() < 1e-3)
    ok &= _line("marginal-likelihood gradient, max rel. error", me.max(), 1e-5, me.max() < 1e-5)
    ok &= _line("path gradient, max rel. error", ge.max(), 1e-4, ge.max() < 1e-4)
    return ok, {"policy": float(pe.max()), "mll": float(me.max()), "path": float(ge.max())}


def cost_vectors():
    """``(description, computed, expected)`` for the exact cost examples."""
    e1 = CostModel.euclidean(k=1.0)
    man = CostModel("manhattan", k=2.0, p=1, r=0.5)
    spot = CostModel.spotlight(r=0.1)
    nm = CostModel.nonmarkov(k=1.0, d=0.5, m=2.0)
    nm0 = CostModel.nonmarkov(k=1.0, d=0.0, m=2.0)
    # histories with cumulative Markov cost 2.5 and 1.9 whose last point is the origin
    h25 = np.array([[0.0, 2.5], [0.0, 0.0]])
    h19 = np.array([[0.0, 1.9], [0.0, 0.0]])
    step1 = np.array([1.0, 0.0])
    path_obs = np.array([[0.0, 0.0]])
    return [
        ("euclidean 3-4-5", markov_cost(e1, [0, 0], [3, 4]), 5.0),
        ("manhattan k=2 r=0.5", markov_cost(man, [0, 0], [1, 1]), 3.0),
        ("spotlight inside", markov_cost(spot, [0, 0], [0.05, 0]), 0.0),
        ("spotlight outside is infeasible", markov_cost(spot, [0, 0], [0.2, 0]), float("inf")),
        ("spotlight boundary feasible", float(feasible(spot, [0.0], [0.1])), 1.0),
        ("spotlight just outside", float(feasible(spot, [0.0], [0.100001])), 0.0),
        ("euclidean always feasible", float(feasible(e1, [0, 0], [100, 100])), 1.0),
        ("non-markov discount fires", non_markov_cost(nm, h25, step1), 0.5),
        ("non-markov discount off", non_markov_cost(nm, h19, step1), 1.0),
        ("non-markov d=0 equals markov", non_markov_cost(nm0, h25, step1), markov_cost(e1, [0, 0], step1)),
        ("trajectory L=0 is one move", trajectory_cost(e1, path_obs, np.zeros((0, 2)), [3, 4]), 5.0),
    ]


def collinear_trajectory():
    e1 = CostModel.euclidean(k=1.0)
    return trajectory_cost(e1, [[0.0, 0.0]], [[0.0, 0.3], [0.0, 0.6]], [0.0, 0.9])


def check_costs():
    ok = True
    for name, got, want in cost_vectors():
        ok &= _line(f"cost {name}", abs(got - want) if np.isfinite(want) else float(got != want), 0.0,
                    got == want)
    # the collinear example sums 0.3 three times, exact up to float addition
    got = collinear_trajectory()
    ok &= _line("cost collinear trajectory", abs(got - 0.9), 1e-12, abs(got - 0.9) <= 1e-12)
    return ok, {}


SUITES = {"matheron": check_matheron, "gradients": check_gradients, "costs": check_costs}


def run_suites(name: str = "all") -> bool:
    names = list(SUITES) if name == "all" else [name]
    ok = True
    for n in names:
        print(f"== {n} ==")
        ok &= SUITES[n]()[0]
    print("all checks passed" if ok else "some checks FAILED")
    return ok
