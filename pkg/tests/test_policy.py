import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lookahes.core import Dataset, DiscreteDomain, SeedStream
from lookahes.costs import CostModel
from lookahes.pathwise import sample_paths, sampler_calls
from lookahes.policy import (
    AdamState,
    adam_step,
    backward,
    init_policy,
    parameter_count,
    policy_step,
    rollout,
    sample_vmf_direction,
    straight_through,
    straight_through_backward,
    vmf_perturb,
    zero_hidden,
)
from lookahes.surrogate import KernelSpec, condition
from lookahes.validate import policy_gradient_errors


def _setup(n=10, r=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 2))
    data = Dataset(x, np.sin(4 * x[:, 0]) + np.cos(3 * x[:, 1]))
    gp = condition(KernelSpec("matern52", 0.3, 1.0, 1e-2), data.points, data.observations, 0.0)
    return data, sample_paths(gp, r, 64, SeedStream(seed))


def test_parameter_count_formula():
    H = 64
    enc = 3 * H + H + H * H + H
    gru = 3 * (H * H + H * H + H)
    dec = H * H + H + H * H + H + H * 2 + 2
    assert parameter_count(2, 64) == enc + gru + dec
    assert init_policy(2).flat.size == enc + gru + dec


def test_init_is_deterministic_per_stream():
    a = init_policy(2, stream=SeedStream(1))
    b = init_policy(2, stream=SeedStream(1))
    c = init_policy(2, stream=SeedStream(2))
    assert np.array_equal(a.flat, b.flat)
    assert np.max(np.abs(a.flat - c.flat)) > 0
    assert np.all(a.views()["gru_b"] == 0)


def test_zero_network_emits_center():
    p = init_policy(3)
    p = p.with_flat(np.zeros_like(p.flat))
    x, h = policy_step(p, zero_hidden(p), [0.2, 0.9, 0.1], 1.5)
    assert np.array_equal(x, [0.5, 0.5, 0.5])


def test_hidden_state_carries_history():
    p = init_policy(2, stream=SeedStream(3))
    h0 = zero_hidden(p)
    _, ha = policy_step(p, h0, [0.1, 0.1], -1.0)
    _, hb = policy_step(p, h0, [0.9, 0.4], 2.0)
    xa, _ = policy_step(p, ha, [0.5, 0.5], 0.3)
    xb, _ = policy_step(p, hb, [0.5, 0.5], 0.3)
    assert not np.allclose(xa, xb)


def test_straight_through_forward_picks_argmax():
    onehot, _ = straight_through(np.array([[2.0, 0.0, 0.0]]))
    assert np.array_equal(onehot, [[1.0, 0.0, 0.0]])


@given(arrays(float, (3, 5), elements=st.floats(-6, 6)), arrays(float, (3, 5), elements=st.floats(-2, 2)))
@settings(max_examples=100, deadline=None)
def test_straight_through_backward_is_softmax_jacobian(logits, g):
    onehot, p = straight_through(logits)
    assert np.all(onehot.sum(-1) == 1) and set(np.unique(onehot)) <= {0.0, 1.0}
    for row in range(3):
        e = np.exp(logits[row] - logits[row].max())
        s = e / e.sum()
        jac = np.diag(s) - np.outer(s, s)
        assert np.allclose(straight_through_backward(p[row:row + 1], g[row:row + 1])[0], jac.T @ g[row], atol=1e-12)


@given(arrays(float, (4, 2), elements=st.floats(0, 1)), arrays(float, 4, elements=st.floats(-50, 50)))
@settings(max_examples=50, deadline=None)
def test_queries_strictly_inside_cube(x, y):
    p = init_policy(2, stream=SeedStream(4))
    p = p.with_flat(p.flat * 30.0)  # large weights push the logistic towards saturation
    out, _ = policy_step(p, zero_hidden(p, 4), x, y)
    assert np.all((out > 0) & (out < 1))


def test_rollout_with_zero_horizon():
    data, batch = _setup()
    res = rollout(init_policy(2), batch, data, 0, CostModel.euclidean())
    assert res.lookahead_x.shape == (4, 0, 2)
    assert res.lookahead_y.shape == (4, 0)
    assert res.step_costs.shape == (4, 1)
    assert np.allclose(res.actions, res.actions[0])


def test_rollout_materializes_one_trajectory_per_path():
    data, batch = _setup(r=16)
    res = rollout(init_policy(2), batch, data, 20, CostModel.euclidean())
    assert res.n_trajectories == 16
    assert res.lookahead_x.shape == (16, 20, 2)


def test_rollout_never_draws_new_functions():
    data, batch = _setup(r=8)
    before = sampler_calls.functions
    for L in (1, 5, 20):
        rollout(init_policy(2), batch, data, L, CostModel.euclidean())
    assert sampler_calls.functions == before


def test_rollout_is_deterministic():
    data, batch = _setup()
    p = init_policy(2, stream=SeedStream(5))
    a = rollout(p, batch, data, 3, CostModel.euclidean())
    b = rollout(p, batch, data, 3, CostModel.euclidean())
    assert a.objective == b.objective
    assert np.array_equal(a.lookahead_x, b.lookahead_x)


def test_projected_rollout_is_feasible():
    data, batch = _setup()
    cost = CostModel.spotlight(r=0.1)
    p = init_policy(2, stream=SeedStream(6))
    p = p.with_flat(p.flat * 5.0)
    res = rollout(p, batch, data, 5, cost, project=True)
    path = np.concatenate([np.repeat(data.points[-1][None, None, :], 4, 0), res.lookahead_x, res.actions[:, None]], 1)
    steps = np.linalg.norm(np.diff(path, axis=1), axis=-1)
    assert np.all(steps <= 0.1)


def test_backward_matches_finite_differences():
    assert policy_gradient_errors().max() < 1e-3


@pytest.mark.parametrize("cost", [CostModel.nonmarkov(k=1.0, d=0.2, m=0.1), CostModel.manhattan(k=0.7),
                                  CostModel.spotlight(r=0.1)])
def test_backward_matches_finite_differences_other_costs(cost):
    assert policy_gradient_errors(n_coords=40, seed=1, cost=cost).max() < 1e-3


def _fd_errors(res_fn, params, g, n=40, h=1e-5, seed=0):
    rng = np.random.default_rng(seed)
    errs = []
    for i in rng.choice(params.flat.size, n, replace=False):
        e = np.zeros_like(params.flat)
        e[i] = h
        fd = (res_fn(params.with_flat(params.flat + e)) - res_fn(params.with_flat(params.flat - e))) / (2 * h)
        errs.append(abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return np.array(errs)


def test_backward_with_projection_and_free_actions():
    data, batch = _setup()
    cost = CostModel.spotlight(r=0.1)
    p = init_policy(2, stream=SeedStream(7))
    free = np.random.default_rng(0).normal(size=(4, 2))

    def objective(q):
        return rollout(q, batch, data, 3, cost, project=True, free_actions=free).objective

    res = rollout(p, batch, data, 3, cost, project=True, free_actions=free)
    g, g_free = backward(res, p, return_free=True)
    assert _fd_errors(objective, p, g).max() < 1e-3
    h = 1e-6
    for i in range(4):
        e = np.zeros_like(free)
        e[i, 0] = h
        fp = rollout(p, batch, data, 3, cost, project=True, free_actions=free + e).objective
        fm = rollout(p, batch, data, 3, cost, project=True, free_actions=free - e).objective
        assert g_free[i, 0] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-8)


def test_zero_horizon_gradient_through_warm_start():
    data, batch = _setup()
    p = init_policy(2, stream=SeedStream(8))
    cost = CostModel.euclidean()
    res = rollout(p, batch, data, 0, cost)
    g = backward(res, p)
    assert _fd_errors(lambda q: rollout(q, batch, data, 0, cost).objective, p, g).max() < 1e-3


def test_cost_gradient_linear_in_lambda():
    data, batch = _setup()
    p = init_policy(2, stream=SeedStream(9))
    cost = CostModel.euclidean()
    g1 = backward(rollout(p, batch, data, 3, cost, lam=1.0, loss_weight=0.0), p)
    g2 = backward(rollout(p, batch, data, 3, cost, lam=2.0, loss_weight=0.0), p)
    assert np.array_equal(g2, 2.0 * g1)


def test_discrete_head_rollout_emits_cell_centers():
    dom = DiscreteDomain(2, 5)
    rng = np.random.default_rng(0)
    x = dom.snap(rng.uniform(size=(8, 2)))
    data = Dataset(x, rng.normal(size=8))
    gp = condition(KernelSpec("rbf", 0.3, 1.0, 1e-2), x, data.observations, 0.0)
    batch = sample_paths(gp, 4, 64, SeedStream(0))
    p = init_policy(2, head=("discrete", 5), stream=SeedStream(1))
    res = rollout(p, batch, data, 2, CostModel.euclidean())
    for pts in (res.lookahead_x.reshape(-1, 2), res.actions):
        assert np.all(np.isin(pts, dom.centers))
    g = backward(res, p)
    assert g.shape == p.flat.shape and np.all(np.isfinite(g)) and np.any(g != 0)


def test_adam_first_step():
    new, state = adam_step(np.zeros(5), np.ones(5), AdamState.fresh(5, lr=1e-3))
    assert np.allclose(new, -1e-3, rtol=1e-6)
    assert state.t == 1


def test_adam_zero_gradient():
    p = np.arange(3.0)
    new, state = adam_step(p, np.zeros(3), AdamState.fresh(3))
    assert np.array_equal(new, p) and state.t == 1


def test_adam_momentum_accumulates():
    g = np.full(4, 0.3)
    p1, s1 = adam_step(np.zeros(4), g, AdamState.fresh(4))
    p2, _ = adam_step(p1, g, s1)
    assert np.all(np.abs(p2 - p1) >= np.abs(p1) * 0.999)


def test_vmf_uniform_directions_average_out():
    rng = np.random.default_rng(0)
    draws = np.array([sample_vmf_direction(np.ones(3), 0.0, rng) for _ in range(10_000)])
    assert np.allclose(np.linalg.norm(draws, axis=1), 1.0)
    assert np.linalg.norm(draws.mean(0)) < 0.05


def test_vmf_concentrated_direction():
    rng = np.random.default_rng(1)
    mu = np.array([0.6, 0.8])
    for _ in range(50):
        u = sample_vmf_direction(mu, 1e6, rng)
        assert np.arccos(np.clip(u @ mu, -1, 1)) < 0.01


def test_vmf_perturb_magnitude_and_clamp():
    x = np.array([0.3, 0.99])
    assert np.array_equal(vmf_perturb(x, 0.0, 0.0, SeedStream(0)), x)
    out = vmf_perturb(x, 0.0, 0.05, SeedStream(1))
    assert np.all((out >= 0) & (out <= 1))
    inner = vmf_perturb(np.array([0.5, 0.5]), 0.0, 0.05, SeedStream(2))
    assert np.linalg.norm(inner - 0.5) == pytest.approx(0.05)


def test_discrete_head_respects_spotlight_reach():
    dom = DiscreteDomain(2, 20)
    rng = np.random.default_rng(2)
    x = dom.snap(rng.uniform(size=(8, 2)))
    data = Dataset(x, rng.normal(size=8))
    gp = condition(KernelSpec("rbf", 0.3, 1.0, 1e-2), x, data.observations, 0.0)
    batch = sample_paths(gp, 6, 64, SeedStream(0))
    p = init_policy(2, head=("discrete", 20), stream=SeedStream(3))
    p = p.with_flat(p.flat * 5.0)
    cost = CostModel.spotlight(r=0.1)
    res = rollout(p, batch, data, 4, cost, project=True)
    path = np.concatenate([np.repeat(x[-1][None, None, :], 6, 0), res.lookahead_x, res.actions[:, None]], 1)
    assert np.all(np.abs(np.diff(path, axis=1)) <= 0.1 + 1e-12)
    free = rollout(p, batch, data, 4, cost)
    free_path = np.concatenate([np.repeat(x[-1][None, None, :], 6, 0), free.lookahead_x, free.actions[:, None]], 1)
    assert np.any(np.abs(np.diff(free_path, axis=1)) > 0.1)
    g = backward(res, p)
    assert np.all(np.isfinite(g)) and np.any(g != 0)
